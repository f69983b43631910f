"""Candidate designs, question costs, and cost-effective design selection.

A design pairs a regular-group agent with a top-k-of-l question. Selection
maximizes expected information gain per dollar, where the expectation runs
over the answer distribution at the current posterior mean and each answer
is previewed through a precision-only posterior update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, permutations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .criteria import RANDOM, CriterionSpec, make_precision_evaluator
from .errors import ConfigError, CostModelError
from .model import Question, Scenario, _stage_hess_batch, _stage_log_prob
from .posterior import GaussianPosterior

FULL_RANKING_RATE = 0.0047  # dollars per alternative shown
TOP_K_RATE = 0.0012  # dollars per requested rank when 10 are shown
TOP_K_BASE = 0.028


@dataclass(frozen=True)
class Design:
    """One candidate query: a regular agent and a question."""

    agent: int
    question: Question


@dataclass(frozen=True, eq=False)
class CostModel:
    """Dollar cost of asking a question.

    The builtin rates come from the hotel-ranking crowdsourcing fits: full
    rankings cost per alternative shown, top-k-of-10 has a flat reading cost
    plus a small per-rank term. An explicit (k, l) table covers anything
    else.
    """

    table: Mapping[tuple[int, int], float] = field(default_factory=dict)
    use_builtin: bool = True

    def __post_init__(self):
        table = {(int(k), int(l)): float(c) for (k, l), c in self.table.items()}
        for (k, l), price in table.items():
            if price <= 0:
                raise CostModelError(f"cost for (k={k}, l={l}) must be positive, got {price}")
        object.__setattr__(self, "table", table)

    def cost(self, question: Question) -> float:
        k, l = question.depth, question.size
        if self.use_builtin:
            if k == l - 1:
                return FULL_RANKING_RATE * l
            if l == 10 and k < 9:
                return TOP_K_RATE * k + TOP_K_BASE
        if (k, l) in self.table:
            return self.table[(k, l)]
        raise CostModelError(f"no cost known for top-{k}-of-{l} questions")

    @classmethod
    def from_file(cls, path: str | Path, use_builtin: bool = False) -> "CostModel":
        """Load a table of lines "k,l,dollars"."""
        table = {}
        for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise CostModelError(f"{path}:{line_no}: expected 'k,l,dollars', got {raw!r}")
            table[(int(parts[0]), int(parts[1]))] = float(parts[2])
        return cls(table=table, use_builtin=use_builtin)


def cost(model: CostModel, question: Question) -> float:
    """Dollar cost of one question under the model."""
    return model.cost(question)


@dataclass(frozen=True)
class SubsetSampler:
    """Seeded sampling policy for mid-size question subsets (2 < l < m)."""

    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("subset sampler count must be positive")


@dataclass(frozen=True)
class GainConfig:
    """Settings for computing expected information gains."""

    enumeration_cap: int = 24
    mc_samples: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.enumeration_cap < 1 or self.mc_samples < 1:
            raise ConfigError("gain configuration values must be positive")


def _sampled_subsets(m: int, l: int, policy: SubsetSampler, agent: int, k: int) -> list[tuple[int, ...]]:
    limit = math.comb(m, l)
    want = min(policy.count, limit)
    rng = np.random.default_rng(np.random.SeedSequence([policy.seed, agent, k, l]))
    seen: set[tuple[int, ...]] = set()
    while len(seen) < want:
        seen.add(tuple(sorted(rng.choice(m, size=l, replace=False).tolist())))
    return sorted(seen)


def build_design_space(
    scenario: Scenario,
    templates: Sequence[tuple[int, int]],
    subset_policy: SubsetSampler | Sequence[Sequence[int]] | None = None,
) -> list[Design]:
    """All candidate designs: one per regular agent, template, and subset.

    Full-size templates (l = m) use the whole alternative set; pairwise
    templates enumerate every unordered pair; anything in between needs an
    explicit subset list or a sampling policy.
    """
    designs: list[Design] = []
    m = scenario.m
    for agent in scenario.regular_agents:
        for k, l in templates:
            if not 1 <= k < l <= m:
                raise ConfigError(f"template (k={k}, l={l}) invalid for m={m}")
            if l == m:
                subsets: Sequence[tuple[int, ...]] = [tuple(range(m))]
            elif l == 2:
                subsets = [(i, j) for i, j in combinations(range(m), 2)]
            elif subset_policy is None:
                raise ConfigError(f"template (k={k}, l={l}) needs a subset policy when 2 < l < m")
            elif isinstance(subset_policy, SubsetSampler):
                subsets = _sampled_subsets(m, l, subset_policy, agent.id, k)
            else:
                subsets = [tuple(int(i) for i in s) for s in subset_policy if len(s) == l]
            designs.extend(
                Design(agent=agent.id, question=Question(subset=subset, depth=k))
                for subset in subsets
            )
    return designs


def _design_rng(cfg: GainConfig, design: Design) -> np.random.Generator:
    # keyed by design content so scoring is invariant to list order
    entropy = [cfg.seed, design.agent, design.question.depth, *design.question.subset]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def expected_gain(
    scenario: Scenario,
    design: Design,
    post: GaussianPosterior,
    spec: CriterionSpec,
    cfg: GainConfig = GainConfig(),
) -> float:
    """Expected criterion improvement from asking `design`.

    Enumerates the answer space exactly when small enough, otherwise
    averages Monte Carlo answers drawn at the posterior mean. D-optimality
    gains are reported as relative determinant growth (det'/det - 1); all
    other criteria as plain differences.
    """
    if spec.kind == RANDOM:
        return 0.0
    evaluator = make_precision_evaluator(spec, scenario, post.mean)
    baseline = evaluator.value(post.precision)
    return _gain_with_evaluator(scenario, design, post, evaluator, baseline, cfg)


def select_design(
    scenario: Scenario,
    designs: Sequence[Design],
    post: GaussianPosterior,
    spec: CriterionSpec,
    cost_model: CostModel,
    remaining_budget: float,
    cfg: GainConfig = GainConfig(),
    rng: np.random.Generator | None = None,
) -> Design | None:
    """Most cost-effective affordable design, or None if nothing is affordable.

    Maximizes expected gain per dollar; ties break toward the cheaper
    design, then the earlier list position. The random criterion draws
    uniformly (over a canonical ordering, so list order does not matter).
    """
    affordable = [
        (idx, design, cost_model.cost(design.question))
        for idx, design in enumerate(designs)
        if cost_model.cost(design.question) <= remaining_budget
    ]
    if not affordable:
        return None
    if spec.kind == RANDOM:
        canon = sorted(
            affordable, key=lambda t: (t[1].agent, t[1].question.depth, t[1].question.subset)
        )
        draw = rng if rng is not None else np.random.default_rng(cfg.seed)
        return canon[int(draw.integers(len(canon)))][1]
    evaluator = make_precision_evaluator(spec, scenario, post.mean)
    baseline = evaluator.value(post.precision)

    pairwise = [
        (idx, design, price)
        for idx, design, price in affordable
        if design.question.depth == 1 and design.question.size == 2
    ]
    general = [
        (idx, design, price)
        for idx, design, price in affordable
        if not (design.question.depth == 1 and design.question.size == 2)
    ]
    gains: dict[int, float] = {}
    if pairwise:
        # both answers to a pair carry the same curvature, so the expected
        # gain is a single rank-one update per design
        coeff_rows = np.array(
            [
                scenario.features[d.agent, d.question.subset[0]]
                - scenario.features[d.agent, d.question.subset[1]]
                for _, d, _ in pairwise
            ]
        )
        diffs = coeff_rows @ post.mean
        probs = 1.0 / (1.0 + np.exp(-diffs))
        weights = probs * (1.0 - probs)
        batch = evaluator.rank_one_gains(post.precision, coeff_rows, weights, baseline)
        for (idx, _, _), gain in zip(pairwise, batch):
            gains[idx] = float(gain)
    for idx, design, _ in general:
        gains[idx] = _gain_with_evaluator(scenario, design, post, evaluator, baseline, cfg)

    best_key = None
    best_design = None
    for idx, design, price in affordable:
        key = (gains[idx] / price, -price, -idx)
        if best_key is None or key > best_key:
            best_key, best_design = key, design
    return best_design


def _gain_with_evaluator(scenario, design, post, evaluator, baseline, cfg) -> float:
    """expected_gain with the evaluator and baseline amortized by the caller."""
    question = design.question
    coeffs = scenario.features[design.agent][list(question.subset)]
    u = coeffs @ post.mean
    l, k = question.size, question.depth
    if math.perm(l, k) <= cfg.enumeration_cap:
        orders = []
        probs = []
        for prefix in permutations(range(l), k):
            order = list(prefix) + [i for i in range(l) if i not in prefix]
            probs.append(math.exp(_stage_log_prob(u[order], k)))
            orders.append(order)
        weights = np.array(probs)
    else:
        # Gumbel-max argsorts draw exactly from the stage-wise model
        rng = _design_rng(cfg, design)
        noisy = u[None, :] + rng.gumbel(size=(cfg.mc_samples, l))
        orders = np.argsort(-noisy, axis=1)
        weights = np.full(cfg.mc_samples, 1.0 / cfg.mc_samples)
    orders = np.asarray(orders)
    hessians = _stage_hess_batch(u[orders], coeffs[orders], k)
    stack = post.precision[None, :, :] - hessians
    values = evaluator.stack_values(stack)
    return float(sum(w * evaluator.gain_from(v, baseline) for w, v in zip(weights, values)))
