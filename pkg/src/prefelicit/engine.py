"""Budgeted elicitation loop: fit, select, ask, update, repeat.

The loop lives in ElicitationState so interactive callers (the session
service) can advance it one answer at a time; run_elicitation drives the
same state machine against an answer oracle until the budget runs out.
"""

from __future__ import annotations

import io
import logging
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .criteria import CriterionSpec, evaluate
from .designs import CostModel, Design, GainConfig, select_design
from .errors import ConvergenceError, ElicitationAborted
from .model import Dataset, Parameter, Question, Response, Scenario, sample_response
from .posterior import FitConfig, GaussianPosterior, fit_posterior
from .voting import BORDA, PLURALITY, WinnerDistribution, borda_winner_dist, plurality_winner_dist

logger = logging.getLogger(__name__)

TRACE_HEADER = (
    "iteration,agent,k,l,subset,cost,cumulative_cost,response,"
    "criterion_value,tv_plurality,tv_borda"
)


class SimulatedOracle:
    """Answers every design by sampling from a hidden ground-truth parameter."""

    def __init__(self, scenario: Scenario, ground_truth: Parameter, rng: np.random.Generator):
        self.scenario = scenario
        self.ground_truth = ground_truth
        self.rng = rng

    def __call__(self, design: Design) -> Response:
        return sample_response(
            self.scenario, design.agent, design.question, self.ground_truth, self.rng
        )


class ScriptedOracle:
    """Replays recorded responses in order; raises when they run out."""

    def __init__(self, responses: Iterable[Response]):
        self._queue = deque(responses)

    def __call__(self, design: Design) -> Response:
        if not self._queue:
            raise RuntimeError("scripted oracle has no responses left")
        return self._queue.popleft()


@dataclass(frozen=True)
class InitialRecord:
    """State before the first question: criterion and winner distributions."""

    criterion_value: float
    winner_plurality: WinnerDistribution
    winner_borda: WinnerDistribution
    tv_plurality: float | None
    tv_borda: float | None


@dataclass(frozen=True)
class IterationRecord:
    """One answered question and the posterior summary after it."""

    index: int
    design: Design
    cost: float
    cumulative_cost: float
    response: Response
    criterion_value: float
    winner_plurality: WinnerDistribution
    winner_borda: WinnerDistribution
    tv_plurality: float | None
    tv_borda: float | None


@dataclass(frozen=True)
class ElicitationResult:
    """Full trace plus the final posterior and the requested output."""

    initial: InitialRecord
    trace: tuple[IterationRecord, ...]
    final_posterior: GaussianPosterior
    output: tuple[int, ...] | dict[str, WinnerDistribution]


class ElicitationState:
    """Mutable elicitation run; one select/record round per iteration."""

    def __init__(
        self,
        scenario: Scenario,
        designs: Sequence[Design],
        cost_model: CostModel,
        spec: CriterionSpec,
        budget: float,
        init_data: Dataset,
        *,
        gain_cfg: GainConfig = GainConfig(),
        fit_cfg: FitConfig = FitConfig(),
        ground_truth: Parameter | None = None,
        selection_seed: int = 0,
    ):
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        self.scenario = scenario
        self.cost_model = cost_model
        self.spec = spec
        self.budget_left = float(budget)
        self.data = init_data.copy()
        self.gain_cfg = gain_cfg
        self.fit_cfg = fit_cfg
        self.selection_rng = np.random.default_rng(selection_seed)
        self.iteration = 0
        self.fit_retries = 0
        self.trace: list[IterationRecord] = []
        self.truth_dists = None
        if ground_truth is not None:
            self.truth_dists = {
                PLURALITY: plurality_winner_dist(
                    ground_truth, scenario.key_agents, scenario.alternatives
                ),
                BORDA: borda_winner_dist(
                    ground_truth, scenario.key_agents, scenario.alternatives
                ),
            }
        self.remaining = [
            d for d in designs if cost_model.cost(d.question) <= self.budget_left
        ]
        self.posterior = self._refit(init=None)
        crit, plur, borda, tv_p, tv_b = self._summarize()
        self.initial = InitialRecord(
            criterion_value=crit,
            winner_plurality=plur,
            winner_borda=borda,
            tv_plurality=tv_p,
            tv_borda=tv_b,
        )

    def _refit(self, init: Parameter | None) -> GaussianPosterior:
        try:
            return fit_posterior(self.scenario, self.data, init=init, cfg=self.fit_cfg)
        except ConvergenceError as exc:
            logger.warning("posterior fit failed (%s); retrying from prior mode", exc)
            self.fit_retries += 1
            try:
                return fit_posterior(self.scenario, self.data, init=None, cfg=self.fit_cfg)
            except ConvergenceError as exc2:
                raise ElicitationAborted(
                    f"posterior fit failed twice at iteration {self.iteration}",
                    partial=self.result(),
                ) from exc2

    def _summarize(self):
        from .voting import total_variation

        mean = self.posterior.mean_parameter
        plur = plurality_winner_dist(mean, self.scenario.key_agents, self.scenario.alternatives)
        borda = borda_winner_dist(mean, self.scenario.key_agents, self.scenario.alternatives)
        tv_p = tv_b = None
        if self.truth_dists is not None:
            tv_p = total_variation(plur, self.truth_dists[PLURALITY])
            tv_b = total_variation(borda, self.truth_dists[BORDA])
        crit = evaluate(self.spec, self.posterior, self.scenario)
        return crit, plur, borda, tv_p, tv_b

    def select_next(self) -> Design | None:
        """Most cost-effective affordable design, or None when done."""
        if not self.remaining:
            return None
        iter_seed = int(
            np.random.SeedSequence([self.gain_cfg.seed, self.iteration]).generate_state(1)[0]
        )
        cfg = replace(self.gain_cfg, seed=iter_seed)
        return select_design(
            self.scenario,
            self.remaining,
            self.posterior,
            self.spec,
            self.cost_model,
            self.budget_left,
            cfg,
            rng=self.selection_rng,
        )

    def record(self, design: Design, response: Response) -> IterationRecord:
        """Accept an answer: charge it, refit, and append a trace row."""
        if response.agent != design.agent or response.question != design.question:
            raise ValueError("response does not answer the queried design")
        price = self.cost_model.cost(design.question)
        if price > self.budget_left:
            raise ValueError("design no longer affordable")
        self.data.append(response)
        self.budget_left -= price
        self.remaining = [
            d
            for d in self.remaining
            if d != design and self.cost_model.cost(d.question) <= self.budget_left
        ]
        self.iteration += 1
        self.posterior = self._refit(init=self.posterior.mean_parameter)
        crit, plur, borda, tv_p, tv_b = self._summarize()
        cumulative = (self.trace[-1].cumulative_cost if self.trace else 0.0) + price
        record = IterationRecord(
            index=self.iteration,
            design=design,
            cost=price,
            cumulative_cost=cumulative,
            response=response,
            criterion_value=crit,
            winner_plurality=plur,
            winner_borda=borda,
            tv_plurality=tv_p,
            tv_borda=tv_b,
        )
        self.trace.append(record)
        return record

    def result(self) -> ElicitationResult:
        if self.scenario.n_key == 1:
            means = self.scenario.features[0] @ self.posterior.mean
            output: tuple[int, ...] | dict = tuple(
                sorted(range(self.scenario.m), key=lambda i: (-means[i], i))
            )
        else:
            last = self.trace[-1] if self.trace else self.initial
            output = {PLURALITY: last.winner_plurality, BORDA: last.winner_borda}
        return ElicitationResult(
            initial=self.initial,
            trace=tuple(self.trace),
            final_posterior=self.posterior,
            output=output,
        )


def run_elicitation(
    scenario: Scenario,
    designs: Sequence[Design],
    cost_model: CostModel,
    spec: CriterionSpec,
    budget: float,
    init_data: Dataset,
    oracle: Callable[[Design], Response],
    *,
    gain_cfg: GainConfig = GainConfig(),
    fit_cfg: FitConfig = FitConfig(),
    ground_truth: Parameter | None = None,
    selection_seed: int = 0,
) -> ElicitationResult:
    """Run the loop until no design is affordable; return the trace and output.

    Oracle exceptions abort the run but preserve the partial trace inside
    the raised ElicitationAborted.
    """
    state = ElicitationState(
        scenario,
        designs,
        cost_model,
        spec,
        budget,
        init_data,
        gain_cfg=gain_cfg,
        fit_cfg=fit_cfg,
        ground_truth=ground_truth,
        selection_seed=selection_seed,
    )
    while True:
        design = state.select_next()
        if design is None:
            break
        try:
            response = oracle(design)
        except Exception as exc:
            raise ElicitationAborted(
                f"answer oracle failed at iteration {state.iteration + 1}: {exc}",
                partial=state.result(),
            ) from exc
        try:
            state.record(design, response)
        except ValueError as exc:
            raise ElicitationAborted(
                f"invalid oracle response at iteration {state.iteration + 1}: {exc}",
                partial=state.result(),
            ) from exc
    return state.result()


def initialize_data(
    scenario: Scenario,
    count: int,
    rng: np.random.Generator,
    ground_truth: Parameter,
) -> Dataset:
    """Seed data: `count` pairwise answers from random regular agents.

    Initialization answers are free; they are never charged to the budget.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    regular_ids = [a.id for a in scenario.regular_agents]
    if count > 0 and not regular_ids:
        raise ValueError("scenario has no regular agents to seed from")
    data = Dataset()
    for _ in range(count):
        agent = regular_ids[int(rng.integers(len(regular_ids)))]
        pair = tuple(sorted(rng.choice(scenario.m, size=2, replace=False).tolist()))
        question = Question(subset=pair, depth=1)
        data.append(sample_response(scenario, agent, question, ground_truth, rng))
    return data


# ---------------------------------------------------------------------------
# trace export


def _ids(ids: Iterable[int]) -> str:
    return "-".join(str(i) for i in ids)


def _opt(value: float | None) -> str:
    return "" if value is None else str(value)


def trace_csv(result: ElicitationResult) -> str:
    """CSV trace with an iteration-0 row for the pre-question state."""
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    init = result.initial
    out.write(
        f"0,,,,,0.0,0.0,,{init.criterion_value},{_opt(init.tv_plurality)},{_opt(init.tv_borda)}\n"
    )
    for rec in result.trace:
        q = rec.design.question
        out.write(
            f"{rec.index},{rec.design.agent},{q.depth},{q.size},{_ids(q.subset)},"
            f"{rec.cost},{rec.cumulative_cost},{_ids(rec.response.ranking)},"
            f"{rec.criterion_value},{_opt(rec.tv_plurality)},{_opt(rec.tv_borda)}\n"
        )
    return out.getvalue()


def write_trace(result: ElicitationResult, path: str | Path) -> None:
    Path(path).write_text(trace_csv(result))
