"""Composite marginal likelihood fit and Gaussian posterior approximation.

Each recorded response is one marginal event; the penalized composite
log-likelihood is their summed log-probability plus a Gaussian prior term.
The posterior is approximated as Gaussian with mean at the penalized
maximizer and precision equal to the negated objective curvature there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConvergenceError, ScenarioError
from .model import (
    Dataset,
    Parameter,
    Scenario,
    _canonical_order,
    _stage_grad,
    _stage_hess,
    _stage_log_prob,
)

STD_FLOOR = 1e-9
VAR_FLOOR = 1e-18


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings for the penalized composite likelihood."""

    prior_std: float = 10.0
    max_iterations: int = 100
    gradient_tolerance: float = 1e-8
    armijo: float = 1e-4
    min_step: float = 1e-12

    def __post_init__(self):
        if self.prior_std <= 0 or self.max_iterations <= 0 or self.gradient_tolerance <= 0:
            raise ValueError("fit configuration values must be positive")
        if not 0 < self.armijo < 1 or self.min_step <= 0:
            raise ValueError("line search parameters out of range")


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Gaussian approximation of the parameter posterior.

    `mean` is the flat coefficient vector, `precision` the curvature matrix;
    the covariance is its inverse, computed lazily.
    """

    mean: np.ndarray
    precision: np.ndarray
    n_alt_attrs: int
    n_agent_attrs: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.precision, dtype=float)
        dim = self.n_alt_attrs * self.n_agent_attrs
        if mean.shape != (dim,) or prec.shape != (dim, dim):
            raise ScenarioError("posterior mean/precision shapes do not match attribute counts")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(prec)):
            raise ScenarioError("posterior must be finite")
        asym = np.max(np.abs(prec - prec.T))
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(prec)))):
            raise ScenarioError("precision matrix is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", 0.5 * (prec + prec.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def _cho(self):
        try:
            return cho_factor(self.precision, lower=True)
        except LinAlgError as exc:
            raise ScenarioError("precision matrix is not positive definite") from exc

    @cached_property
    def covariance(self) -> np.ndarray:
        cov = cho_solve(self._cho, np.eye(self.dim))
        return 0.5 * (cov + cov.T)

    @property
    def mean_parameter(self) -> Parameter:
        return Parameter.from_vector(self.mean, self.n_alt_attrs, self.n_agent_attrs)

    def with_precision(self, precision: np.ndarray) -> "GaussianPosterior":
        """Same mean, replaced precision (Laplace-style preview update)."""
        return GaussianPosterior(
            mean=self.mean,
            precision=precision,
            n_alt_attrs=self.n_alt_attrs,
            n_agent_attrs=self.n_agent_attrs,
        )


class _CllObjective:
    """Penalized composite log-likelihood with gradient and Hessian.

    Pairwise responses (the bulk of typical datasets) are evaluated in one
    batched logistic pass; deeper responses go through the stage kernels on
    coefficient rows precomputed at construction.
    """

    def __init__(self, scenario: Scenario, data: Dataset, prior_std: float):
        self.dim = scenario.n_alt_attrs * scenario.n_agent_attrs
        self.prior_precision = 0.0 if math.isinf(prior_std) else prior_std**-2
        features = scenario.features
        pair_rows = []
        self.staged: list[tuple[np.ndarray, int]] = []
        for resp in data:
            if resp.question.size == 2 and resp.question.depth == 1:
                win = resp.ranking[0]
                lose = next(i for i in resp.question.subset if i != win)
                pair_rows.append(features[resp.agent, win] - features[resp.agent, lose])
            else:
                coeffs = features[resp.agent][_canonical_order(resp)]
                self.staged.append((coeffs, resp.question.depth))
        self.pair_coeffs = (
            np.array(pair_rows) if pair_rows else np.zeros((0, self.dim))
        )

    def value(self, beta: np.ndarray) -> float:
        total = -0.5 * self.prior_precision * float(beta @ beta)
        if len(self.pair_coeffs):
            diffs = self.pair_coeffs @ beta
            total -= float(np.logaddexp(0.0, -diffs).sum())
        for coeffs, depth in self.staged:
            total += _stage_log_prob(coeffs @ beta, depth)
        return total

    def value_grad_hess(self, beta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        value = -0.5 * self.prior_precision * float(beta @ beta)
        grad = -self.prior_precision * beta.copy()
        hess = -self.prior_precision * np.eye(self.dim)
        if len(self.pair_coeffs):
            diffs = self.pair_coeffs @ beta
            value -= float(np.logaddexp(0.0, -diffs).sum())
            p = 1.0 / (1.0 + np.exp(-diffs))
            grad += (1.0 - p) @ self.pair_coeffs
            hess -= self.pair_coeffs.T @ (self.pair_coeffs * (p * (1.0 - p))[:, None])
        for coeffs, depth in self.staged:
            u = coeffs @ beta
            value += _stage_log_prob(u, depth)
            grad += _stage_grad(u, coeffs, depth)
            hess += _stage_hess(u, coeffs, depth)
        return value, grad, 0.5 * (hess + hess.T)


def composite_log_likelihood(
    scenario: Scenario,
    data: Dataset,
    param: Parameter,
    prior_std: float = 10.0,
) -> float:
    """Summed response log-probabilities minus the Gaussian prior penalty."""
    scenario._check_param(param)
    return _CllObjective(scenario, data, prior_std).value(param.vector)


def _maximize(
    objective: _CllObjective, beta0: np.ndarray, cfg: FitConfig, dim: tuple[int, int]
) -> np.ndarray:
    beta = beta0.copy()
    grad_norm = math.inf
    for _ in range(cfg.max_iterations):
        value, grad, hess = objective.value_grad_hess(beta)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= cfg.gradient_tolerance:
            return beta
        try:
            direction = cho_solve(cho_factor(-hess, lower=True), grad)
        except LinAlgError:
            direction = grad
        if float(grad @ direction) <= 0.0:
            direction = grad
        # improvements below float resolution of the objective count as accepted
        slack = 1e-12 * (1.0 + abs(value))
        stepped = None
        for candidate_dir in (direction, grad):
            predicted = float(grad @ candidate_dir)
            t = 1.0
            while t >= cfg.min_step:
                trial = beta + t * candidate_dir
                if objective.value(trial) >= value + cfg.armijo * t * predicted - slack:
                    stepped = trial
                    break
                t *= 0.5
            if stepped is not None:
                break
        if stepped is None:
            break
        beta = stepped
    raise ConvergenceError(
        f"no stationary point within {cfg.max_iterations} iterations "
        f"(gradient norm {grad_norm:.3e})",
        last_iterate=Parameter.from_vector(beta, *dim),
        gradient_norm=grad_norm,
    )


def cml_estimate(
    scenario: Scenario,
    data: Dataset,
    init: Parameter | None = None,
    cfg: FitConfig = FitConfig(),
) -> Parameter:
    """Maximizer of the penalized composite log-likelihood (damped Newton)."""
    dims = (scenario.n_alt_attrs, scenario.n_agent_attrs)
    if init is not None:
        scenario._check_param(init)
    beta0 = init.vector if init is not None else np.zeros(dims[0] * dims[1])
    objective = _CllObjective(scenario, data, cfg.prior_std)
    beta = _maximize(objective, beta0, cfg, dims)
    return Parameter.from_vector(beta, *dims)


def fit_posterior(
    scenario: Scenario,
    data: Dataset,
    init: Parameter | None = None,
    cfg: FitConfig = FitConfig(),
) -> GaussianPosterior:
    """Gaussian posterior: mean at the CML estimate, precision its curvature."""
    mean = cml_estimate(scenario, data, init=init, cfg=cfg)
    objective = _CllObjective(scenario, data, cfg.prior_std)
    _, _, hess = objective.value_grad_hess(mean.vector)
    return GaussianPosterior(
        mean=mean.vector,
        precision=-hess,
        n_alt_attrs=scenario.n_alt_attrs,
        n_agent_attrs=scenario.n_agent_attrs,
    )


def hypothetical_precision(post: GaussianPosterior, scenario: Scenario, resp) -> np.ndarray:
    """Precision after observing `resp`, with the mean held fixed.

    Fast preview for expected-gain scoring; a full refit would also move the
    mean.
    """
    from .model import response_hessian

    return post.precision - response_hessian(scenario, resp, post.mean_parameter)


def utility_diff_stats(
    post: GaussianPosterior,
    scenario: Scenario,
    agent: int,
    alt_a: int,
    alt_b: int,
) -> tuple[float, float]:
    """Posterior mean and std of the utility difference u(alt_a) - u(alt_b)."""
    if alt_a == alt_b:
        raise ValueError("utility difference needs two distinct alternatives")
    coeff = scenario.features[agent, alt_a] - scenario.features[agent, alt_b]
    mean = float(coeff @ post.mean)
    var = float(coeff @ cho_solve(post._cho, coeff))
    std = STD_FLOOR if var < VAR_FLOOR else math.sqrt(var)
    return mean, std


def certainty_ratio(mean: float, var: float) -> float:
    """|mean| / std with the zero-variance convention used by the MPC criteria."""
    if var < VAR_FLOOR:
        return math.inf if abs(mean) > 0 else 0.0
    return abs(mean) / math.sqrt(var)
