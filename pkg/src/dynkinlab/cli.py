"""Command line: ``dynkinlab run|validate|list-examples``.

Exit codes: 0 all checks pass, 1 a check failed, 2 config error,
3 numerical error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import list_examples, parse_config
from .errors import ConfigError, DynkinLabError
from .runner import emit_report, run_scenario

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynkinlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its report")
    run.add_argument("config", help="scenario file, or the name of a shipped example")
    run.add_argument("--out", default=None, help="report directory (default: reports/<name>)")
    run.add_argument("--seed", type=int, default=None, help="seed for randomized property sweeps")
    run.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key, e.g. lattice.N=4 (repeatable)",
    )

    val = sub.add_parser("validate", help="parse and validate a scenario without solving")
    val.add_argument("config")
    val.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    sub.add_parser("list-examples", help="list shipped scenarios")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.command == "list-examples":
        for path in list_examples():
            print(path.stem)
        return EXIT_OK

    overrides = list(args.override)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    try:
        scenario = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"{scenario.name}: ok ({scenario.pipeline.value})")
        return EXIT_OK

    try:
        report = run_scenario(scenario)
    except DynkinLabError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = Path(args.out) if args.out else Path("reports") / scenario.name
    try:
        code = emit_report(report, out)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for check in report.checks:
        mark = "PASS" if check.passed else "FAIL"
        extra = "" if check.value is None else f" value={check.value:.3g}"
        extra += "" if check.tolerance is None else f" tol={check.tolerance:g}"
        print(f"{mark} {check.name}{extra}")
    print(f"{scenario.name}: {'pass' if code == 0 else 'fail'} -> {out} ({report.wall_time:.2f}s)")
    return code


if __name__ == "__main__":
    sys.exit(main())
