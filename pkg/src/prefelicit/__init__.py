"""Cost-effective preference elicitation and aggregation under Plackett-Luce with features."""

from .errors import (
    ConfigError,
    ConvergenceError,
    CostModelError,
    ElicitationAborted,
    ScenarioError,
    TooManyResponsesError,
)
from .model import (
    KEY,
    REGULAR,
    AgentProfile,
    AlternativeProfile,
    Dataset,
    Parameter,
    Question,
    Response,
    Scenario,
    enumerate_responses,
    pairwise_prob,
    response_grad,
    response_hessian,
    response_log_prob,
    sample_response,
    top_prob,
    utility,
)

__all__ = [
    "KEY",
    "REGULAR",
    "AgentProfile",
    "AlternativeProfile",
    "ConfigError",
    "ConvergenceError",
    "CostModelError",
    "Dataset",
    "ElicitationAborted",
    "Parameter",
    "Question",
    "Response",
    "Scenario",
    "ScenarioError",
    "TooManyResponsesError",
    "enumerate_responses",
    "pairwise_prob",
    "response_grad",
    "response_hessian",
    "response_log_prob",
    "sample_response",
    "top_prob",
    "utility",
]
