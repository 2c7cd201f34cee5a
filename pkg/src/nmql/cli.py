"""Command-line entry point: ``nmql run|list|validate``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import model
from .scenarios import UnknownScenario, get_scenario, list_scenarios, run_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARTIAL = 2


def _cmd_list(args) -> int:
    width = max(len(name) for name, _ in list_scenarios())
    for name, desc in list_scenarios():
        print(f"{name:<{width}}  {desc}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        config = model.load(args.file)
    except Exception as exc:  # malformed JSON, unknown keys, bad shapes
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = model.validate(config)
    if report.ok:
        print("ok")
        return EXIT_OK
    print(str(report), file=sys.stderr)
    return EXIT_INVALID


def _cmd_run(args) -> int:
    try:
        scenario = get_scenario(args.scenario)
    except UnknownScenario as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_INVALID
    if args.config:
        # the file replaces the base configuration; the sweep axes still apply on top
        config = model.load(args.config)
        report = model.validate(config)
        if not report.ok:
            print(str(report), file=sys.stderr)
            return EXIT_INVALID
        scenario = scenario.with_config(config)
    out = args.out or f"results/{scenario.name}"
    result = run_scenario(scenario, out, threads=args.threads, oracle=True if args.oracle else None)
    for row in result.rows:
        status = row["status"]
        extra = f" steady_EN={row['steady_EN']:.6g}" if status == "ok" else f" ({row.get('message', '')})"
        print(f"[{status}] {row['point']}{extra}")
    print(f"summary: {result.summary_path}")
    return EXIT_PARTIAL if result.failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmql", description="Driven oscillators in non-Markovian baths.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a builtin scenario sweep")
    run.add_argument("scenario")
    run.add_argument("--config", help="JSON configuration replacing the scenario's base configuration")
    run.add_argument("--out", help="output directory (default results/<scenario>)")
    run.add_argument("--oracle", action="store_true", help="also compare against the discrete-bath oracle")
    run.add_argument("--threads", type=int, default=1, help="worker processes for sweep values")
    run.set_defaults(func=_cmd_run)

    lst = sub.add_parser("list", help="list builtin scenarios")
    lst.set_defaults(func=_cmd_list)

    val = sub.add_parser("validate", help="check a JSON configuration file")
    val.add_argument("file")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
