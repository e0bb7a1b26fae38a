"""Command line entry point.

    distbandit run --config exp.json [--out DIR] [--workers K]
    distbandit validate --config exp.json
    distbandit plot --from runs.csv [--out DIR]

Exit codes: 0 success, 1 configuration error, 2 some runs failed.
The default output directory comes from $DISTBANDIT_OUT_DIR, else ./results.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import aggregate, default_out_dir, emit_outputs, emit_plots, load_experiment, read_runs_csv, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distbandit", description="Cooperative contextual bandit experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a sweep and write runs.csv, summary.json and plots")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--workers", type=int, default=1)
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("--config", required=True)
    plot = sub.add_parser("plot", help="redraw plots from an existing runs.csv")
    plot.add_argument("--from", dest="source", required=True)
    plot.add_argument("--out", default=None)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            cfg = load_experiment(args.config)
            n = len(cfg.run_configs())
            print(f"ok: {cfg.algorithm}, {len(cfg.points())} sweep points x {len(cfg.seeds)} seeds = {n} runs")
            return EXIT_OK
        if args.command == "run":
            cfg = load_experiment(args.config)
            out = args.out or cfg.out_dir or default_out_dir()
            cfg.out_dir = out
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            results = run_experiment(cfg, workers=args.workers)
            emit_outputs(results, out, cfg)
            failed = sum(not r.ok for r in results)
            print(f"{len(results)} runs, {failed} failed; outputs in {out}")
            return EXIT_FAILED if failed else EXIT_OK
        if args.command == "plot":
            src = Path(args.source)
            if not src.exists():
                raise ConfigError(f"{src} does not exist")
            out = Path(args.out) if args.out else src.parent
            out.mkdir(parents=True, exist_ok=True)
            emit_plots(aggregate(read_runs_csv(src)), out)
            print(f"plots written to {out}")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
