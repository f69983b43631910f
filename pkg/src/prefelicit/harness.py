"""Synthetic experiments: scenario generation, trial running, aggregation.

A trial draws a fresh scenario (normal attributes, Dirichlet ground truth),
seeds every criterion with the same free pairwise comparisons, runs one
elicitation per criterion, and reports total-variation-to-truth curves
aligned on a fixed dollar grid plus histograms of chosen question types.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .criteria import CriterionSpec
from .designs import CostModel, GainConfig, SubsetSampler, build_design_space
from .engine import SimulatedOracle, initialize_data, run_elicitation, trace_csv
from .errors import ConfigError
from .model import KEY, REGULAR, AgentProfile, AlternativeProfile, Parameter, Scenario
from .posterior import FitConfig

logger = logging.getLogger(__name__)

PROBE_STEP = 0.05
AGGREGATE_HEADER = (
    "probe_cost,criterion,mean_tv_plurality,stderr_tv_plurality,"
    "mean_tv_borda,stderr_tv_borda,n_trials"
)
HISTOGRAM_HEADER = "criterion,iteration,full_ranking,top_choice,pairwise,other,active_trials"


@dataclass(frozen=True)
class ScenarioConfig:
    """Shape and seed of a synthetic scenario."""

    m: int = 10
    n_alt_attrs: int = 3
    n_agent_attrs: int = 3
    n_key: int = 5
    n_regular: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.n_key < 1 or self.n_alt_attrs < 1 or self.n_agent_attrs < 1:
            raise ConfigError("scenario dimensions out of range")


def generate_scenario(
    cfg: ScenarioConfig, rng: np.random.Generator | None = None
) -> tuple[Scenario, Parameter]:
    """Draw attributes i.i.d. standard normal and B from a flat Dirichlet.

    The Dirichlet runs over all m*n flattened coefficients, so the ground
    truth is nonnegative and sums to one.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    alts = tuple(
        AlternativeProfile(id=i, attributes=rng.standard_normal(cfg.n_alt_attrs))
        for i in range(cfg.m)
    )
    agents = tuple(
        AgentProfile(
            id=j,
            attributes=rng.standard_normal(cfg.n_agent_attrs),
            group=KEY if j < cfg.n_key else REGULAR,
        )
        for j in range(cfg.n_key + cfg.n_regular)
    )
    flat = rng.dirichlet(np.ones(cfg.n_alt_attrs * cfg.n_agent_attrs))
    truth = Parameter(flat.reshape(cfg.n_alt_attrs, cfg.n_agent_attrs))
    return Scenario(alternatives=alts, agents=agents), truth


@dataclass(frozen=True)
class ExperimentConfig:
    """One multi-trial comparison of criteria on a scenario family."""

    scenario: ScenarioConfig = ScenarioConfig()
    criteria: tuple[CriterionSpec, ...] = (
        CriterionSpec(kind="mpc_group"),
        CriterionSpec(kind="d_opt"),
        CriterionSpec(kind="e_opt"),
        CriterionSpec(kind="random"),
    )
    trials: int = 100
    budget: float = 0.9
    init_count: int = 50
    templates: tuple[tuple[int, int], ...] = ((1, 2), (1, 10), (9, 10))
    subset_policy: SubsetSampler | None = None
    mc_samples: int = 32
    enumeration_cap: int = 24
    prior_std: float = 10.0
    seed: int = 0
    jobs: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.trials < 1 or self.budget <= 0:
            raise ConfigError("need at least one trial and a positive budget")


@dataclass(frozen=True)
class TraceRow:
    """One parsed trace line; iteration 0 is the pre-question state."""

    iteration: int
    agent: int | None
    depth: int | None
    size: int | None
    cost: float
    cumulative_cost: float
    criterion_value: float
    tv_plurality: float | None
    tv_borda: float | None


@dataclass(frozen=True)
class TrialTrace:
    """Picklable per-run payload moved from workers to the aggregator."""

    trial: int
    criterion: str
    csv_text: str


@dataclass(frozen=True)
class AggregateRow:
    probe_cost: float
    criterion: str
    mean_tv_plurality: float
    stderr_tv_plurality: float
    mean_tv_borda: float
    stderr_tv_borda: float
    n_trials: int


@dataclass(frozen=True)
class HistogramRow:
    criterion: str
    iteration: int
    full_ranking: int
    top_choice: int
    pairwise: int
    other: int
    active_trials: int


@dataclass(frozen=True)
class ExperimentResult:
    requested_trials: int
    effective_trials: int
    traces: tuple[TrialTrace, ...]
    curves: tuple[AggregateRow, ...]
    histogram: tuple[HistogramRow, ...]


def criterion_label(spec: CriterionSpec) -> str:
    return spec.name.replace(":", "-").replace("@", "-")


def parse_trace_csv(text: str) -> list[TraceRow]:
    rows = []
    lines = text.strip().split("\n")
    for line in lines[1:]:
        parts = line.split(",")
        opt_int = lambda s: None if s == "" else int(s)
        opt_float = lambda s: None if s == "" else float(s)
        rows.append(
            TraceRow(
                iteration=int(parts[0]),
                agent=opt_int(parts[1]),
                depth=opt_int(parts[2]),
                size=opt_int(parts[3]),
                cost=float(parts[5]),
                cumulative_cost=float(parts[6]),
                criterion_value=float(parts[8]),
                tv_plurality=opt_float(parts[9]),
                tv_borda=opt_float(parts[10]),
            )
        )
    return rows


def _run_trial(cfg: ExperimentConfig, trial: int) -> list[TrialTrace]:
    base = np.random.SeedSequence([cfg.seed, trial])
    children = base.spawn(2 + len(cfg.criteria))
    scenario, truth = generate_scenario(cfg.scenario, rng=np.random.default_rng(children[0]))
    init = initialize_data(
        scenario, cfg.init_count, np.random.default_rng(children[1]), truth
    )
    cost_model = CostModel()
    payloads = []
    for idx, spec in enumerate(cfg.criteria):
        oracle_ss, gain_ss, select_ss = children[2 + idx].spawn(3)
        designs = build_design_space(scenario, cfg.templates, cfg.subset_policy)
        result = run_elicitation(
            scenario,
            designs,
            cost_model,
            spec,
            cfg.budget,
            init,
            SimulatedOracle(scenario, truth, np.random.default_rng(oracle_ss)),
            gain_cfg=GainConfig(
                enumeration_cap=cfg.enumeration_cap,
                mc_samples=cfg.mc_samples,
                seed=int(gain_ss.generate_state(1)[0]),
            ),
            fit_cfg=FitConfig(prior_std=cfg.prior_std),
            ground_truth=truth,
            selection_seed=int(select_ss.generate_state(1)[0]),
        )
        payloads.append(
            TrialTrace(trial=trial, criterion=criterion_label(spec), csv_text=trace_csv(result))
        )
    return payloads


def probe_grid(budget: float) -> list[float]:
    """Dollar probes every PROBE_STEP from zero up to the budget."""
    steps = int(math.floor(budget / PROBE_STEP + 1e-9))
    return [round(i * PROBE_STEP, 10) for i in range(steps + 1)]


def _tv_at_probe(rows: Sequence[TraceRow], probe: float) -> TraceRow:
    """The row with the largest cumulative cost not above the probe."""
    best = rows[0]
    for row in rows:
        if row.cumulative_cost <= probe + 1e-9:
            best = row
        else:
            break
    return best


def aggregate_curves(
    traces: Sequence[TrialTrace], budget: float
) -> list[AggregateRow]:
    """Mean/stderr TV per criterion on the probe grid, step-aligned per trial."""
    by_criterion: dict[str, list[list[TraceRow]]] = {}
    for trace in traces:
        rows = parse_trace_csv(trace.csv_text)
        if any(r.tv_plurality is None for r in rows):
            raise ConfigError("aggregation needs traces with ground-truth TV columns")
        by_criterion.setdefault(trace.criterion, []).append(rows)
    out = []
    for criterion in sorted(by_criterion):
        runs = by_criterion[criterion]
        for probe in probe_grid(budget):
            picks = [_tv_at_probe(rows, probe) for rows in runs]
            tvp = np.array([p.tv_plurality for p in picks])
            tvb = np.array([p.tv_borda for p in picks])
            n = len(picks)
            stderr = lambda v: float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            out.append(
                AggregateRow(
                    probe_cost=probe,
                    criterion=criterion,
                    mean_tv_plurality=float(tvp.mean()),
                    stderr_tv_plurality=stderr(tvp),
                    mean_tv_borda=float(tvb.mean()),
                    stderr_tv_borda=stderr(tvb),
                    n_trials=n,
                )
            )
    return out


def _question_category(depth: int, size: int, m: int) -> str:
    if size == m and depth == size - 1:
        return "full_ranking"
    if size == m and depth == 1:
        return "top_choice"
    if size == 2 and depth == 1:
        return "pairwise"
    return "other"


def question_type_histogram(
    traces: Sequence[TrialTrace], m: int
) -> list[HistogramRow]:
    """Counts of chosen question categories per iteration index."""
    if not traces:
        raise ConfigError("histogram needs at least one trace")
    by_criterion: dict[str, list[list[TraceRow]]] = {}
    for trace in traces:
        by_criterion.setdefault(trace.criterion, []).append(parse_trace_csv(trace.csv_text))
    out = []
    for criterion in sorted(by_criterion):
        runs = by_criterion[criterion]
        max_iter = max(len(rows) - 1 for rows in runs)
        for it in range(1, max_iter + 1):
            counts = {"full_ranking": 0, "top_choice": 0, "pairwise": 0, "other": 0}
            active = 0
            for rows in runs:
                if it < len(rows):
                    active += 1
                    row = rows[it]
                    counts[_question_category(row.depth, row.size, m)] += 1
            out.append(
                HistogramRow(
                    criterion=criterion,
                    iteration=it,
                    full_ranking=counts["full_ranking"],
                    top_choice=counts["top_choice"],
                    pairwise=counts["pairwise"],
                    other=counts["other"],
                    active_trials=active,
                )
            )
    return out


def curves_csv(rows: Sequence[AggregateRow]) -> str:
    lines = [AGGREGATE_HEADER]
    for r in rows:
        lines.append(
            f"{r.probe_cost},{r.criterion},{r.mean_tv_plurality},{r.stderr_tv_plurality},"
            f"{r.mean_tv_borda},{r.stderr_tv_borda},{r.n_trials}"
        )
    return "\n".join(lines) + "\n"


def histogram_csv(rows: Sequence[HistogramRow]) -> str:
    lines = [HISTOGRAM_HEADER]
    for r in rows:
        lines.append(
            f"{r.criterion},{r.iteration},{r.full_ranking},{r.top_choice},"
            f"{r.pairwise},{r.other},{r.active_trials}"
        )
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all trials (optionally in parallel), write outputs, aggregate.

    Failed trials are logged and dropped; the aggregate reports how many
    trials actually contributed.
    """
    collected: list[TrialTrace] = []
    done_trials = 0
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {pool.submit(_run_trial, cfg, t): t for t in range(cfg.trials)}
            outcomes = {}
            for future, trial in futures.items():
                try:
                    outcomes[trial] = future.result()
                except Exception:
                    logger.exception("trial %d failed; dropping it", trial)
            for trial in sorted(outcomes):
                collected.extend(outcomes[trial])
                done_trials += 1
    else:
        for trial in range(cfg.trials):
            try:
                collected.extend(_run_trial(cfg, trial))
                done_trials += 1
            except Exception:
                logger.exception("trial %d failed; dropping it", trial)
    curves = aggregate_curves(collected, cfg.budget) if collected else []
    hist = question_type_histogram(collected, cfg.scenario.m) if collected else []
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        for trace in collected:
            name = f"trial{trace.trial:04d}_{trace.criterion}.csv"
            (out / "traces" / name).write_text(trace.csv_text)
        (out / "aggregate.csv").write_text(curves_csv(curves))
        (out / "question_types.csv").write_text(histogram_csv(hist))
    return ExperimentResult(
        requested_trials=cfg.trials,
        effective_trials=done_trials,
        traces=tuple(collected),
        curves=tuple(curves),
        histogram=tuple(hist),
    )


def load_trace_dir(path: str | Path) -> list[TrialTrace]:
    """Read trial traces back from a directory of trialNNNN_<criterion>.csv files."""
    traces = []
    for file in sorted(Path(path).glob("trial*_*.csv")):
        stem = file.stem
        trial_part, criterion = stem.split("_", 1)
        traces.append(
            TrialTrace(
                trial=int(trial_part.removeprefix("trial")),
                criterion=criterion,
                csv_text=file.read_text(),
            )
        )
    return traces


# ---------------------------------------------------------------------------
# scenario files


def scenario_to_dict(scenario: Scenario, truth: Parameter) -> dict:
    return {
        "m": scenario.m,
        "n_alt_attrs": scenario.n_alt_attrs,
        "n_agent_attrs": scenario.n_agent_attrs,
        "n_key": scenario.n_key,
        "n_regular": scenario.n_regular,
        "alternative_attributes": scenario.alt_matrix.tolist(),
        "agent_attributes": scenario.agent_matrix.tolist(),
        "ground_truth": truth.matrix.tolist(),
    }


def save_scenario(path: str | Path, scenario: Scenario, truth: Parameter) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario, truth), indent=2) + "\n")


def load_scenario(path: str | Path) -> tuple[Scenario, Parameter]:
    doc = json.loads(Path(path).read_text())
    alts = tuple(
        AlternativeProfile(id=i, attributes=np.array(row, dtype=float))
        for i, row in enumerate(doc["alternative_attributes"])
    )
    agents = tuple(
        AgentProfile(
            id=j,
            attributes=np.array(row, dtype=float),
            group=KEY if j < doc["n_key"] else REGULAR,
        )
        for j, row in enumerate(doc["agent_attributes"])
    )
    return Scenario(alternatives=alts, agents=agents), Parameter(
        np.array(doc["ground_truth"], dtype=float)
    )
