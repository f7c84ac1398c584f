"""Command line entry point: ``pkslab <experiment> [--config F] [--out D] [--seed S] [--threads T]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time

from .config import KINDS, load_config
from .errors import CFLError, ConfigError, DomainError, InternalError, OutputError, PkslabError, StatisticsError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="TOML config file (flat dotted keys)")
    parser.add_argument("--out", default=default, help="output directory (overrides experiment.out)")
    parser.add_argument("--seed", type=int, default=default, help="base seed (overrides experiment.seed)")
    parser.add_argument("--threads", type=int, default=default, help="worker cap (overrides experiment.threads)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pkslab", description="Run a reproducible experiment and write its tables.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, metavar="experiment")
    helps = {
        "simulate": "particle ensemble (Euler-Maruyama)",
        "pde": "mean-field density evolution",
        "liouville": "N-particle Liouville equation on a grid",
        "ldp": "partition functions, exponential moments, fixed point",
        "converge": "particle ensembles against the mean-field limit",
        "phase": "blow-up sweep over lambda / sigma (d = 2)",
    }
    for kind in KINDS:
        sp = sub.add_parser(kind, help=helps[kind])
        _common(sp, suppress=True)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (OutputError, OSError)):
        return EXIT_IO
    if isinstance(exc, (CFLError, InternalError, StatisticsError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment.kind": args.command}
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    if args.threads is not None:
        overrides["experiment.threads"] = args.threads
    if args.out is not None:
        overrides["experiment.out"] = args.out
    try:
        from .experiments import emit_results, run_experiment

        cfg = load_config(args.config, overrides)
        start = time.perf_counter()
        result = run_experiment(cfg)
        manifest = emit_results(result, cfg["experiment.out"], cfg, time.perf_counter() - start)
    except PkslabError as exc:
        code = _exit_code(exc)
        print(f"pkslab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"pkslab {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(manifest['files']['tables'])} table(s) to {cfg['experiment.out']} (config {manifest['config_hash'][:12]})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
