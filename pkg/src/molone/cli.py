"""Command-line interface: batch runs, summaries, and an explanation demo."""

from __future__ import annotations

import argparse
import json
import sys

from . import engine, harness
from .errors import ContractError, DataError, MoloneError
from .explain import render_matrix_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molone",
        description="Preference-based optimization runs with comparative "
                    "why/why-not explanations.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment plan")
    run.add_argument("--plan", required=True, help="plan JSON file")
    run.add_argument("--runs", type=int, default=None,
                     help="override the plan's run count")
    run.add_argument("--jobs", type=int, default=1, help="parallel workers")
    run.add_argument("--out", default="results", help="output directory")

    summ = sub.add_parser("summarize", help="aggregate a results directory")
    summ.add_argument("--in", dest="results_dir", required=True)
    summ.add_argument("--format", choices=("csv", "json"), default="csv")

    demo = sub.add_parser("explain-demo",
                          help="print one comparative matrix as text")
    demo.add_argument("--benchmark", default="dtlz2")
    demo.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    try:
        with open(args.plan, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read plan: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        plan = harness.ExperimentPlan.from_dict(raw)
        if args.runs is not None:
            plan.n_runs = args.runs
            plan.seeds = None
        result = harness.run_experiment(plan, args.out, jobs=max(args.jobs, 1))
    except (ContractError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"completed {result['n_ok']} runs, {result['n_failed']} failures "
          f"-> {result['out_dir']}")
    for failure in result["failures"]:
        print(f"failed: {failure['benchmark']} {failure['agent']} "
              f"seed={failure['seed']}", file=sys.stderr)
    return EXIT_PARTIAL if result["n_failed"] else EXIT_OK


def _cmd_summarize(args) -> int:
    try:
        rows = harness.summarize(args.results_dir)
    except (ContractError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.format == "json":
        print(json.dumps(rows, indent=2))
    else:
        print(harness.summary_csv(rows), end="")
    for benchmark in sorted({r["benchmark"] for r in rows}):
        ranked = harness.final_ranking(rows, benchmark)
        order = " > ".join(f"{agent} ({value:.3f})" for agent, value in ranked)
        print(f"# final ranking [{benchmark}]: {order}", file=sys.stderr)
    return EXIT_OK


def _cmd_explain_demo(args) -> int:
    try:
        config = engine.EngineConfig.from_dict({
            "benchmark": args.benchmark, "seed": args.seed,
            "explanations": True})
        state = engine.initialize(config)
    except MoloneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    bundle = state.pending.bundle
    print(render_matrix_text(bundle.matrix), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        code = _cmd_run(args)
    elif args.command == "summarize":
        code = _cmd_summarize(args)
    else:
        code = _cmd_explain_demo(args)
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
