import numpy as np
import pytest

from prefelicit.criteria import CriterionSpec
from prefelicit.designs import CostModel, Design, GainConfig, build_design_space
from prefelicit.engine import (
    ElicitationState,
    ScriptedOracle,
    SimulatedOracle,
    initialize_data,
    run_elicitation,
    trace_csv,
)
from prefelicit.errors import ConvergenceError, ElicitationAborted
from prefelicit.model import Dataset, Question, Response
from prefelicit.posterior import FitConfig

from conftest import make_param, make_scenario


def small_setup(rng, spec_kind="d_opt", m=4, n_key=2, n_regular=3):
    scen = make_scenario(rng, m=m, n_key=n_key, n_regular=n_regular)
    truth = make_param(rng)
    designs = build_design_space(scen, [(1, 2)])
    table = CostModel(table={(1, 2): 0.01}, use_builtin=False)
    init = initialize_data(scen, 5, np.random.default_rng(7), truth)
    return scen, truth, designs, table, init, CriterionSpec(kind=spec_kind)


class TestRunElicitation:
    def test_budget_below_cheapest(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng)
        result = run_elicitation(
            scen, designs, table, spec, 0.005, init, SimulatedOracle(scen, truth, rng),
            ground_truth=truth,
        )
        assert result.trace == ()
        assert result.initial.tv_plurality is not None
        assert isinstance(result.output, dict)

    def test_loop_bookkeeping(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng)
        budget = 0.0505  # five questions at a cent each, plus change
        result = run_elicitation(
            scen, designs, table, spec, budget, init,
            SimulatedOracle(scen, truth, np.random.default_rng(11)), ground_truth=truth,
        )
        assert len(result.trace) == 5
        seen = set()
        cumulative = 0.0
        for i, rec in enumerate(result.trace, start=1):
            assert rec.index == i
            cumulative += rec.cost
            assert rec.cumulative_cost == pytest.approx(cumulative, abs=1e-12)
            assert rec.cumulative_cost <= budget + 1e-12
            key = (rec.design.agent, rec.design.question.subset)
            assert key not in seen  # queried designs leave the pool
            seen.add(key)
            assert rec.response.agent == rec.design.agent

    def test_determinism_bytes(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng, spec_kind="mpc_group")

        def run_once():
            return run_elicitation(
                scen, designs, table, spec, 0.04, init,
                SimulatedOracle(scen, truth, np.random.default_rng(42)),
                gain_cfg=GainConfig(seed=3), ground_truth=truth, selection_seed=5,
            )

        assert trace_csv(run_once()) == trace_csv(run_once())

    def test_random_criterion_runs(self, rng):
        scen, truth, designs, table, init, _ = small_setup(rng)
        result = run_elicitation(
            scen, designs, table, CriterionSpec(kind="random"), 0.0305, init,
            SimulatedOracle(scen, truth, np.random.default_rng(2)),
            ground_truth=truth, selection_seed=9,
        )
        assert len(result.trace) == 3
        assert all(rec.criterion_value == 0.0 for rec in result.trace)

    def test_single_key_agent_outputs_ranking(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng, n_key=1)
        result = run_elicitation(
            scen, designs, table, spec, 0.02, init,
            SimulatedOracle(scen, truth, np.random.default_rng(4)),
        )
        assert isinstance(result.output, tuple)
        assert sorted(result.output) == list(range(scen.m))

    def test_oracle_failure_preserves_partial_trace(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng)
        calls = {"n": 0}

        def flaky(design):
            calls["n"] += 1
            if calls["n"] >= 3:
                raise RuntimeError("respondent left")
            return SimulatedOracle(scen, truth, np.random.default_rng(1))(design)

        with pytest.raises(ElicitationAborted) as exc:
            run_elicitation(scen, designs, table, spec, 1.0, init, flaky)
        assert len(exc.value.partial.trace) == 2

    def test_mismatched_response_aborts(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng)
        rogue_q = Question(subset=(0, 1), depth=1)

        def rogue(design):
            return Response(agent=design.agent, question=rogue_q, ranking=(0,))

        with pytest.raises(ElicitationAborted):
            run_elicitation(scen, designs, table, spec, 1.0, init, rogue)

    def test_scripted_replay_matches(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng, spec_kind="mpc_group")
        live = run_elicitation(
            scen, designs, table, spec, 0.04, init,
            SimulatedOracle(scen, truth, np.random.default_rng(21)),
            gain_cfg=GainConfig(seed=1),
        )
        replay = run_elicitation(
            scen, designs, table, spec, 0.04, init,
            ScriptedOracle([rec.response for rec in live.trace]),
            gain_cfg=GainConfig(seed=1),
        )
        assert np.array_equal(live.final_posterior.mean, replay.final_posterior.mean)


class TestFitRetry:
    def test_retry_once_then_succeed(self, rng, monkeypatch):
        scen, truth, designs, table, init, spec = small_setup(rng)
        import prefelicit.engine as engine_mod

        real_fit = engine_mod.fit_posterior
        fails = {"left": 1}

        def sometimes(scenario, data, init=None, cfg=FitConfig()):
            if init is not None and fails["left"] > 0:
                fails["left"] -= 1
                raise ConvergenceError("forced", gradient_norm=1.0)
            return real_fit(scenario, data, init=init, cfg=cfg)

        monkeypatch.setattr(engine_mod, "fit_posterior", sometimes)
        result = run_elicitation(
            scen, designs, table, spec, 0.02, init,
            SimulatedOracle(scen, truth, np.random.default_rng(3)),
        )
        assert len(result.trace) == 2

    def test_double_failure_aborts(self, rng, monkeypatch):
        scen, truth, designs, table, init, spec = small_setup(rng)
        import prefelicit.engine as engine_mod

        real_fit = engine_mod.fit_posterior
        state = {"armed": False}

        def broken(scenario, data, init=None, cfg=FitConfig()):
            if state["armed"]:
                raise ConvergenceError("forced", gradient_norm=1.0)
            return real_fit(scenario, data, init=init, cfg=cfg)

        monkeypatch.setattr(engine_mod, "fit_posterior", broken)
        st = ElicitationState(scen, designs, table, spec, 0.02, init)
        state["armed"] = True
        design = st.select_next()
        resp = SimulatedOracle(scen, truth, np.random.default_rng(3))(design)
        with pytest.raises(ElicitationAborted):
            st.record(design, resp)


class TestInitializeData:
    def test_zero_count(self, rng):
        scen = make_scenario(rng)
        truth = make_param(rng)
        data = initialize_data(scen, 0, rng, truth)
        assert len(data) == 0

    def test_fifty_valid_pairwise(self, rng):
        scen = make_scenario(rng, m=10, n_key=5, n_regular=20)
        truth = make_param(rng)
        data = initialize_data(scen, 50, rng, truth)
        assert len(data) == 50
        regular = {a.id for a in scen.regular_agents}
        for resp in data:
            assert resp.agent in regular
            assert resp.question.depth == 1 and resp.question.size == 2

    def test_seeded_reproducibility(self, rng):
        scen = make_scenario(rng, m=6)
        truth = make_param(rng)
        a = initialize_data(scen, 20, np.random.default_rng(5), truth)
        b = initialize_data(scen, 20, np.random.default_rng(5), truth)
        assert [(r.agent, r.question.subset, r.ranking) for r in a] == [
            (r.agent, r.question.subset, r.ranking) for r in b
        ]


class TestTraceCsv:
    def test_header_and_initial_row(self, rng):
        scen, truth, designs, table, init, spec = small_setup(rng)
        result = run_elicitation(
            scen, designs, table, spec, 0.02, init,
            SimulatedOracle(scen, truth, np.random.default_rng(8)), ground_truth=truth,
        )
        lines = trace_csv(result).strip().split("\n")
        assert lines[0] == (
            "iteration,agent,k,l,subset,cost,cumulative_cost,response,"
            "criterion_value,tv_plurality,tv_borda"
        )
        first = lines[1].split(",")
        assert first[0] == "0" and first[5] == "0.0" and first[6] == "0.0"
        assert len(lines) == 2 + len(result.trace)
        row = lines[2].split(",")
        assert row[2] == "1" and row[3] == "2"  # k and l
        assert "-" not in row[7] or len(row[7].split("-")) == 1  # top-1 answer
