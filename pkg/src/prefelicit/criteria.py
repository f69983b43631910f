"""Information criteria over the Gaussian posterior.

D-optimality and E-optimality read the precision matrix directly; the
minimum-pairwise-certainty (MPC) family scores how confidently utility
differences separate alternatives, for one target agent or across the whole
key group. The random criterion carries no information and turns selection
into a uniform draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError
from .model import Scenario
from .posterior import VAR_FLOOR, GaussianPosterior

D_OPT = "d_opt"
E_OPT = "e_opt"
MPC_UNORDERED = "mpc_unordered"
MPC_RANKED = "mpc_ranked"
MPC_GROUP = "mpc_group"
RANDOM = "random"

KINDS = (D_OPT, E_OPT, MPC_UNORDERED, MPC_RANKED, MPC_GROUP, RANDOM)


@dataclass(frozen=True)
class CriterionSpec:
    """Which information criterion to run, plus its parameters.

    `k` and `target` apply to the single-agent MPC variants only.
    """

    kind: str
    k: int | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown criterion kind {self.kind!r}")
        if self.kind in (MPC_UNORDERED, MPC_RANKED):
            if self.k is None or self.target is None:
                raise ConfigError(f"{self.kind} needs both k and a target agent")
            if self.k < 1:
                raise ConfigError("top-k depth must be at least 1")
            if self.kind == MPC_RANKED and self.k < 2:
                raise ConfigError("ranked top-k needs k > 1")

    @property
    def name(self) -> str:
        if self.kind in (MPC_UNORDERED, MPC_RANKED):
            return f"{self.kind}:{self.k}@{self.target}"
        return self.kind


def parse_criterion(text: str) -> CriterionSpec:
    """Parse CLI/service criterion strings like "d_opt" or "mpc_unordered:2@0"."""
    body = text.strip().replace("-", "_")
    if ":" in body:
        kind, rest = body.split(":", 1)
        if "@" in rest:
            k_text, agent_text = rest.split("@", 1)
            return CriterionSpec(kind=kind, k=int(k_text), target=int(agent_text))
        return CriterionSpec(kind=kind, k=int(rest), target=0)
    return CriterionSpec(kind=body)


def d_optimality(post: GaussianPosterior) -> float:
    """Log-determinant of the precision matrix.

    The log transform keeps dimension-9+ precisions in float range; it is
    monotone, so design argmaxes are unchanged.
    """
    return 2.0 * float(np.log(np.diag(post._cho[0])).sum())


def e_optimality(post: GaussianPosterior) -> float:
    """Smallest eigenvalue of the precision matrix."""
    return float(np.linalg.eigvalsh(post.precision)[0])


def predicted_top_k(
    post: GaussianPosterior, scenario: Scenario, agent: int, k: int
) -> tuple[int, ...]:
    """The k alternatives with highest posterior-mean utility, best first.

    Ties break by ascending alternative id so traces are reproducible.
    """
    if not 1 <= k <= scenario.m:
        raise ValueError(f"k={k} out of range for {scenario.m} alternatives")
    means = scenario.features[agent] @ post.mean
    order = sorted(range(scenario.m), key=lambda i: (-means[i], i))
    return tuple(order[:k])


def _min_certainty(means: np.ndarray, variances: np.ndarray) -> float:
    ratios = np.empty_like(means)
    tiny = variances < VAR_FLOOR
    ratios[~tiny] = np.abs(means[~tiny]) / np.sqrt(variances[~tiny])
    ratios[tiny] = np.where(np.abs(means[tiny]) > 0, math.inf, 0.0)
    return float(ratios.min())


class _PrecisionEvaluator:
    """Criterion value as a function of a candidate precision matrix.

    Built once per (criterion, scenario, posterior mean); candidate scoring
    then only touches the precision, which is all a hypothetical update
    changes.
    """

    def __init__(self, spec: CriterionSpec, scenario: Scenario, mean: np.ndarray):
        self.spec = spec
        if spec.kind in (D_OPT, E_OPT, RANDOM):
            self.pair_coeffs = None
            return
        if spec.kind == MPC_GROUP:
            if scenario.n_key < 2:
                raise ConfigError("group MPC needs at least two key agents")
            pairs = [
                (agent.id, i, j)
                for agent in scenario.key_agents
                for i, j in combinations(range(scenario.m), 2)
            ]
        else:
            agent = spec.target
            if agent is None or not 0 <= agent < len(scenario.agents):
                raise ConfigError(f"criterion target {spec.target!r} not in scenario")
            if spec.kind == MPC_UNORDERED and not 1 <= spec.k < scenario.m:
                raise ConfigError(f"unordered top-k needs 1 <= k < m, got k={spec.k}")
            if spec.kind == MPC_RANKED and not 1 < spec.k < scenario.m:
                raise ConfigError(f"ranked top-k needs 1 < k < m, got k={spec.k}")
            top = set(
                sorted(range(scenario.m), key=lambda i: (-(scenario.features[agent] @ mean)[i], i))[
                    : spec.k
                ]
            )
            if spec.kind == MPC_UNORDERED:
                pairs = [(agent, i, j) for i in sorted(top) for j in range(scenario.m) if j not in top]
            else:
                pairs = [
                    (agent, i, j)
                    for i, j in combinations(range(scenario.m), 2)
                    if i in top or j in top
                ]
        feats = scenario.features
        self.pair_coeffs = np.array([feats[a, i] - feats[a, j] for a, i, j in pairs])
        self.pair_means = self.pair_coeffs @ mean

    def value(self, precision: np.ndarray) -> float:
        kind = self.spec.kind
        if kind == RANDOM:
            return 0.0
        if kind == D_OPT:
            factor = cho_factor(precision, lower=True)
            return 2.0 * float(np.log(np.diag(factor[0])).sum())
        if kind == E_OPT:
            return float(np.linalg.eigvalsh(precision)[0])
        solved = cho_solve(cho_factor(precision, lower=True), self.pair_coeffs.T)
        variances = np.einsum("ij,ji->i", self.pair_coeffs, solved)
        return _min_certainty(self.pair_means, variances)

    def gain_from(self, value: float, baseline: float) -> float:
        """One response's contribution to the expected gain.

        D-optimality gains live on the determinant scale: det(J')/det(J) - 1.
        The common det(J) factor cancels in the per-cost argmax, and the
        ratio form never overflows where raw determinants would. Multi-stage
        answers compound multiplicatively here, which is what makes full
        rankings win the cost-effectiveness race.
        """
        if self.spec.kind == D_OPT:
            return math.exp(value - baseline) - 1.0
        return value - baseline

    def rank_one_gains(
        self, precision: np.ndarray, coeffs: np.ndarray, weights: np.ndarray, baseline: float
    ) -> np.ndarray:
        """Gains for many rank-one updates J + w_r c_r c_r' at once.

        Matches gain_from(value(J + w c c'), baseline) for each row; pairwise
        questions produce exactly such updates, identical for both answers.
        """
        kind = self.spec.kind
        if kind == RANDOM:
            return np.zeros(len(coeffs))
        factor = cho_factor(precision, lower=True)
        solved = cho_solve(factor, coeffs.T)  # (dim, n)
        quad = np.einsum("ij,ji->i", coeffs, solved)
        if kind == D_OPT:
            # determinant lemma: det(J + wcc')/det(J) = 1 + w c'J^{-1}c
            return weights * quad
        if kind == E_OPT:
            stack = precision[None, :, :] + weights[:, None, None] * (
                coeffs[:, :, None] * coeffs[:, None, :]
            )
            return np.linalg.eigvalsh(stack)[:, 0] - baseline
        # MPC: Sherman-Morrison on the pair variances
        base_solved = cho_solve(factor, self.pair_coeffs.T)  # (dim, npairs)
        base_var = np.einsum("ij,ji->i", self.pair_coeffs, base_solved)
        cross = self.pair_coeffs @ solved  # (npairs, n)
        denom = 1.0 + weights * quad
        variances = base_var[:, None] - cross**2 * (weights / denom)[None, :]
        variances = np.clip(variances, 0.0, None)
        gains = np.empty(len(coeffs))
        for r in range(len(coeffs)):
            gains[r] = _min_certainty(self.pair_means, variances[:, r]) - baseline
        return gains

    def stack_values(self, stack: np.ndarray) -> np.ndarray:
        """value() over a stack of candidate precisions, batched."""
        kind = self.spec.kind
        if kind == RANDOM:
            return np.zeros(stack.shape[0])
        if kind == D_OPT:
            chol = np.linalg.cholesky(stack)
            return 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        if kind == E_OPT:
            return np.linalg.eigvalsh(stack)[:, 0]
        solved = np.linalg.solve(stack, np.broadcast_to(self.pair_coeffs.T, (stack.shape[0],) + self.pair_coeffs.T.shape))
        variances = np.einsum("ij,sji->si", self.pair_coeffs, solved)
        return np.array(
            [_min_certainty(self.pair_means, variances[s]) for s in range(stack.shape[0])]
        )


def make_precision_evaluator(
    spec: CriterionSpec, scenario: Scenario, mean: np.ndarray
) -> _PrecisionEvaluator:
    """Evaluator reusable across many candidate precisions at a fixed mean."""
    return _PrecisionEvaluator(spec, scenario, mean)


def mpc_single(
    post: GaussianPosterior, scenario: Scenario, agent: int, k: int, ordered: bool
) -> float:
    """Certainty of the least certain pair around one agent's predicted top-k.

    Unordered scans (inside, outside) boundary pairs; ordered additionally
    scans pairs within the top set.
    """
    kind = MPC_RANKED if ordered else MPC_UNORDERED
    spec = CriterionSpec(kind=kind, k=k, target=agent)
    return _PrecisionEvaluator(spec, scenario, post.mean).value(post.precision)


def mpc_group(post: GaussianPosterior, scenario: Scenario) -> float:
    """Certainty of the least certain pair over every key agent and pair."""
    spec = CriterionSpec(kind=MPC_GROUP)
    return _PrecisionEvaluator(spec, scenario, post.mean).value(post.precision)


def evaluate(spec: CriterionSpec, post: GaussianPosterior, scenario: Scenario) -> float:
    """Dispatch to the criterion named by `spec`."""
    if spec.kind == RANDOM:
        return 0.0
    if spec.kind == D_OPT:
        return d_optimality(post)
    if spec.kind == E_OPT:
        return e_optimality(post)
    return _PrecisionEvaluator(spec, scenario, post.mean).value(post.precision)
