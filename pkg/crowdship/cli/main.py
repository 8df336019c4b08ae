# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import argparse
import sys
from dataclasses import MISSING, fields

from ..logger import logger
from ..simulation.config import SCENARIO_FIELDS, SCENARIOS, SimConfig, Strategy
from ..version import __version__
from .experiments import SYNTHETIC, ExperimentSpec, RunMode, compare_strategies, run_predict_eval, run_simulation

__all__ = ["build_parser", "spec_from_args", "main"]

# set through dedicated flags
_DEDICATED = {"center", "seed", "strategy"}


def _override_fields():
    return [f for f in fields(SimConfig) if f.name not in _DEDICATED and f.default is not MISSING]


def build_parser() -> argparse.ArgumentParser:
    """Command line of the simulator, with one override flag per configurable field"""
    parser = argparse.ArgumentParser(
        prog="crowdship-sim",
        description="Crowdshipping simulation with streaming delay prediction and task transfers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--mode", choices=[m.value for m in RunMode], default=RunMode.SIMULATE.value, help="Experiment to run"
    )
    parser.add_argument(
        "--scenario",
        choices=[str(n) for n in SCENARIOS] + ["custom"],
        default="1",
        help="Parameter preset: 1 (50 tasks/h, 5%% incidents), 2 (50/h, 10%%), 3 (100/h, 5%%) or custom",
    )
    parser.add_argument(
        "--strategy", choices=[s.value for s in Strategy], default=Strategy.S_BEST.value, help="Transfer strategy"
    )
    parser.add_argument("--seed", type=int, default=42, help="Root seed of all random streams")
    parser.add_argument("--seeds", type=int, nargs="+", default=None, help="Seeds of a strategy comparison")
    parser.add_argument("--traces", default=SYNTHETIC, help="Trace file in the canonical schema or 'synthetic'")
    parser.add_argument("--tasks", default=None, help="Task file to replay instead of Poisson arrivals")
    parser.add_argument("--out", default="results", help="Output directory")
    parser.add_argument("--trips", type=int, default=10_000, help="Synthetic trips of the delay-prediction experiment")
    parser.add_argument("--workers", type=int, default=1, help="Parallel processes of a strategy comparison")
    parser.add_argument("--dump-traces", action="store_true", help="Also write the traces and tasks that were used")
    parser.add_argument(
        "--center", type=float, nargs=2, metavar=("LAT", "LON"), default=None, help="Center of the operating area"
    )

    overrides = parser.add_argument_group("configuration overrides")
    for f in _override_fields():
        overrides.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            type=type(f.default),
            default=None,
            help=f"default: {f.default}",
        )
    return parser


def spec_from_args(parser: argparse.ArgumentParser, args: argparse.Namespace) -> ExperimentSpec:
    """Validate the parsed flags, usage errors exit through the parser"""
    overrides = {f.name: getattr(args, f.name) for f in _override_fields() if getattr(args, f.name) is not None}
    if args.center is not None:
        overrides["center"] = tuple(args.center)

    if args.scenario != "custom":
        fixed = sorted(SCENARIO_FIELDS & overrides.keys())
        if fixed:
            parser.error(f"scenario {args.scenario} fixes {', '.join(fixed)}; use --scenario custom to change them")
    if args.tasks is not None and "tasks_per_hour" in overrides:
        parser.error("--tasks replays a task file and conflicts with --tasks-per-hour")
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    if args.trips < 1:
        parser.error("--trips must be positive")

    spec = ExperimentSpec(
        mode=RunMode(args.mode),
        scenario=args.scenario,
        overrides=overrides,
        strategy=Strategy(args.strategy),
        seed=args.seed,
        seeds=tuple(args.seeds or ()),
        traces=args.traces,
        tasks=args.tasks,
        out=args.out,
        trips=args.trips,
        workers=args.workers,
        dump_traces=args.dump_traces,
    )
    try:
        spec.config()
    except (TypeError, ValueError) as e:
        parser.error(str(e))
    return spec


def main(argv: list[str] | None = None) -> int:
    """
    Main entry point for the crowdship-sim CLI.

    Returns:
        int: 0 on success, 1 on failure, usage errors exit with 2
    """
    parser = build_parser()
    spec = spec_from_args(parser, parser.parse_args(argv))
    try:
        if spec.mode is RunMode.PREDICT_EVAL:
            run_predict_eval(spec)
        elif spec.mode is RunMode.COMPARE:
            print(compare_strategies(spec).to_string(index=False))
        else:
            print(run_simulation(spec).summary(), end="")
    except Exception as e:
        logger.error(f"{type(e).__name__}: {e}")
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"crowdship-sim: error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
