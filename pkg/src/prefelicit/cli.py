"""Command line interface: simulate, scenario, aggregate, serve."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .criteria import parse_criterion
from .harness import (
    ExperimentConfig,
    ScenarioConfig,
    aggregate_curves,
    curves_csv,
    generate_scenario,
    histogram_csv,
    load_trace_dir,
    question_type_histogram,
    run_experiment,
    save_scenario,
)


def _parse_templates(text: str) -> tuple[tuple[int, int], ...]:
    templates = []
    for chunk in text.split(","):
        k_text, l_text = chunk.strip().split(":")
        templates.append((int(k_text), int(l_text)))
    return tuple(templates)


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m", type=int, default=10, help="number of alternatives")
    parser.add_argument("--alt-attrs", type=int, default=3, help="attributes per alternative")
    parser.add_argument("--agent-attrs", type=int, default=3, help="attributes per agent")
    parser.add_argument("--key", type=int, default=5, help="key group size")
    parser.add_argument("--regular", type=int, default=20, help="regular group size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prefelicit",
        description="Cost-effective preference elicitation experiments and service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a multi-trial criterion comparison")
    _add_scenario_flags(sim)
    sim.add_argument("--trials", type=int, default=100)
    sim.add_argument("--budget", type=float, default=0.9)
    sim.add_argument(
        "--criteria",
        default="mpc_group,d_opt,e_opt,random",
        help="comma list, e.g. mpc_group,d_opt,e_opt,random or mpc_unordered:2@0",
    )
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--templates", default="1:2,1:10,9:10", help="comma list of k:l pairs")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--mc-samples", type=int, default=32)
    sim.add_argument("--init-count", type=int, default=50)
    sim.add_argument("--prior-std", type=float, default=10.0)
    sim.add_argument("--jobs", type=int, default=1, help="parallel trial workers")

    scen = sub.add_parser("scenario", help="emit a scenario file with ground truth")
    _add_scenario_flags(scen)
    scen.add_argument("--seed", type=int, default=0)
    scen.add_argument("--out", required=True)

    agg = sub.add_parser("aggregate", help="fold a directory of trace files")
    agg.add_argument("--traces", required=True, help="directory of trialNNNN_<criterion>.csv")
    agg.add_argument("--budget", type=float, default=0.9)
    agg.add_argument("--m", type=int, default=10, help="alternatives (for question categories)")
    agg.add_argument("--out-dir", required=True)

    serve = sub.add_parser("serve", help="run the live session HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--event-log", default=None, help="directory for append-only answer logs")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    if args.command == "simulate":
        cfg = ExperimentConfig(
            scenario=ScenarioConfig(
                m=args.m,
                n_alt_attrs=args.alt_attrs,
                n_agent_attrs=args.agent_attrs,
                n_key=args.key,
                n_regular=args.regular,
            ),
            criteria=tuple(parse_criterion(c) for c in args.criteria.split(",")),
            trials=args.trials,
            budget=args.budget,
            init_count=args.init_count,
            templates=_parse_templates(args.templates),
            mc_samples=args.mc_samples,
            prior_std=args.prior_std,
            seed=args.seed,
            jobs=args.jobs,
            out_dir=args.out_dir,
        )
        result = run_experiment(cfg)
        print(
            f"completed {result.effective_trials}/{result.requested_trials} trials; "
            f"outputs in {args.out_dir}"
        )
        return 0 if result.effective_trials > 0 else 1

    if args.command == "scenario":
        cfg = ScenarioConfig(
            m=args.m,
            n_alt_attrs=args.alt_attrs,
            n_agent_attrs=args.agent_attrs,
            n_key=args.key,
            n_regular=args.regular,
            seed=args.seed,
        )
        scenario, truth = generate_scenario(cfg)
        save_scenario(args.out, scenario, truth)
        print(f"wrote scenario with m={cfg.m} to {args.out}")
        return 0

    if args.command == "aggregate":
        traces = load_trace_dir(args.traces)
        if not traces:
            print(f"no trace files found in {args.traces}", file=sys.stderr)
            return 1
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "aggregate.csv").write_text(curves_csv(aggregate_curves(traces, args.budget)))
        (out / "question_types.csv").write_text(
            histogram_csv(question_type_histogram(traces, args.m))
        )
        print(f"aggregated {len(traces)} traces into {args.out_dir}")
        return 0

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(event_log_dir=args.event_log), host=args.host, port=args.port)
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
