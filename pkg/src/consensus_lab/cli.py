"""Command line: run, compare, verify-chain, print-defaults.

Exit codes: 0 success, 1 usage or config error, 2 runtime abort, 3 safety violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, EngineAbort
from .runner.compare import compare
from .runner.config import defaults, load_config
from .runner.dump import DumpError, dump_chain, verify_chain, write_dump
from .runner.run import report_json, run_scenario, summary_csv

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_UNSAFE = 0, 1, 2, 3

log = logging.getLogger("consensus_lab")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.scenario, args.seed)
    try:
        rep, world = run_scenario(cfg, trace=args.trace is not None)
    except EngineAbort as exc:
        print(f"run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    text = report_json(rep)
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".csv").write_text(summary_csv([rep]))
    else:
        sys.stdout.write(text)
    if args.dump:
        write_dump(args.dump, dump_chain(cfg, world))
    if args.trace:
        Path(args.trace).write_text("".join(line + "\n" for line in world.net.trace))
    if rep["safety_violations"]:
        print(f"safety violations detected: {rep['safety_violations']}", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    if len(args.files) < 2:
        print("compare needs at least two scenario files", file=sys.stderr)
        return EXIT_CONFIG
    try:
        table = compare(args.files, args.seed, args.workers)
    except EngineAbort as exc:
        print(f"run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for warning in table.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    sys.stdout.write(table.text())
    sys.stdout.write("\n" + table.csv())
    if args.csv:
        Path(args.csv).write_text(table.csv())
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        result = verify_chain(args.file)
    except (DumpError, OSError) as exc:
        print(f"cannot verify: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(result.describe())
    return EXIT_OK if result.ok else EXIT_UNSAFE


def cmd_defaults(args: argparse.Namespace) -> int:
    print(json.dumps(defaults(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus-lab", description="Deterministic consensus simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and print its report")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", help="write the JSON report here (plus a .csv summary)")
    run.add_argument("--dump", help="write the canonical chain of the first live honest node here")
    run.add_argument("--trace", help="write one JSON line per delivered message here")
    run.set_defaults(func=cmd_run)

    cmp = sub.add_parser("compare", help="run several scenarios and tabulate their metrics")
    cmp.add_argument("files", nargs="+", help="scenario JSON files")
    cmp.add_argument("--seed", type=int, help="override every scenario seed")
    cmp.add_argument("--workers", type=int, default=4, help="worker threads (default 4)")
    cmp.add_argument("--csv", help="also write the delimited table here")
    cmp.set_defaults(func=cmd_compare)

    ver = sub.add_parser("verify-chain", help="revalidate a chain dump")
    ver.add_argument("file")
    ver.set_defaults(func=cmd_verify)

    pd = sub.add_parser("print-defaults", help="print every configuration default")
    pd.set_defaults(func=cmd_defaults)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
