"""Exception types shared across the package."""

from __future__ import annotations


class ScenarioError(ValueError):
    """Profiles or parameters are inconsistent (bad dimensions, non-finite values)."""


class TooManyResponsesError(ValueError):
    """Question has more ordered answers than the enumeration cap allows."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"question admits {count} responses, above the cap of {cap}")
        self.count = count
        self.cap = cap


class ConvergenceError(RuntimeError):
    """Optimizer stopped before reaching the gradient tolerance."""

    def __init__(self, message: str, last_iterate=None, gradient_norm: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.gradient_norm = gradient_norm


class CostModelError(ValueError):
    """Question type not covered by the cost model."""


class ConfigError(ValueError):
    """Criterion or experiment configuration does not fit the scenario."""


class ElicitationAborted(RuntimeError):
    """Elicitation run stopped early; carries the partial result."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
