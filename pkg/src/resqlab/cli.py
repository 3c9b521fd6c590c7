"""Command-line entry point: ``resqlab run|curves|oracle``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import (WORKERS_ENV, ConfigError, emit_curve_data, load_config, load_results,
                         run_experiment, run_oracle)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resqlab", description="Physics-inspired MIMO detection experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario sweep")
    run.add_argument("--config", required=True, help="TOML config or a previous run's manifest.json")
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable; wins over the file)")
    run.add_argument("--workers", type=int, default=None,
                     help=f"worker processes (default: ${WORKERS_ENV} or 1)")

    curves = sub.add_parser("curves", help="emit long-format curve data from results.json")
    curves.add_argument("--input", required=True)
    curves.add_argument("--axis", required=True, choices=["snr", "lp", "time"])
    curves.add_argument("--out", required=True)

    oracle = sub.add_parser("oracle", help="brute-force ML pass that caches objectives")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config, args.override)
            summary = run_experiment(cfg, workers=args.workers)
            for f in summary.failures:
                print(f"FAILED {f['point']}: {f['error']}", file=sys.stderr)
            print(summary.paths.get("csv", ""))
            return EXIT_PARTIAL if summary.failures else EXIT_OK
        if args.command == "curves":
            records, timing = load_results(args.input)
            Path(args.out).write_text(emit_curve_data(records, args.axis, timing))
            return EXIT_OK
        if args.command == "oracle":
            cfg = load_config(args.config, args.override)
            print(run_oracle(cfg))
            return EXIT_OK
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
