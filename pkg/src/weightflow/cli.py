"""Command-line interface.

    weightflow <subcommand> --config cfg.ini [--out DIR] [--seed N] [--threads N]

Subcommands run individual pipeline stages (`make-population`,
`canonicalize`, `fit-pca`, `train-flow`, `generate`, `evaluate`, `report`)
or the whole pipeline (`run`). Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import parse_config
from .errors import (ConfigError, DataError, IntegrationError, NumericError,
                     ShapeError, TrainingDivergedError, WeightFlowError)
from .pipeline import STAGES, run_pipeline

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def exit_code(exc: WeightFlowError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (NumericError, TrainingDivergedError, IntegrationError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, ShapeError)):
        return EXIT_DATA
    return EXIT_DATA


def _set_threads(n: int) -> None:
    """Best-effort cap on BLAS worker threads."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weightflow",
        description="Weight-space generative modeling pipeline.")
    parser.add_argument("command", choices=sorted(STAGES) + ["run"],
                        help="pipeline stage to execute (or `run` for all)")
    parser.add_argument("--config", required=True, help="run config file")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides [run] out_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the run seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (best effort)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out_dir = args.out or cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "run":
            result = run_pipeline(cfg, out_dir)
        else:
            result = STAGES[args.command](cfg, out_dir)
        if result:
            print(result)
        return 0
    except WeightFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
