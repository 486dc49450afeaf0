"""Command-line entry point for the anti-spoofing experiment pipeline.

Subcommands mirror the pipeline stages plus `run-all`. Exit codes:
0 success, 2 configuration error, 3 missing or stale prerequisite
artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import pipeline
from .pipeline import ConfigError, MissingArtifactError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

_STAGE_FUNCS = {
    "corpus": pipeline.stage_corpus,
    "extract": pipeline.stage_extract,
    "train": pipeline.stage_train,
    "score": pipeline.stage_score,
    "fuse": pipeline.stage_fuse,
    "eval": pipeline.stage_eval,
    "run-all": pipeline.run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antispoof",
        description="Speech anti-spoofing countermeasure experiments on a synthetic corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _STAGE_FUNCS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", default=None, help="INI config file ([section] key=value)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--jobs", type=int, default=None, help="worker processes for extraction")
        p.add_argument("--work-dir", default=None, help="artifact directory root")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_ini(
            args.config,
            overrides={"seed": args.seed, "jobs": args.jobs, "work_dir": args.work_dir},
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _STAGE_FUNCS[args.command](cfg)
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{args.command}: done (work dir {cfg.work_dir})")
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
