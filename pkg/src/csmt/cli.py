"""Command-line entry point: `csmt <stage> --config FILE [--seed N]`."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from typing import Optional, Sequence

from .pipeline import STAGES, PipelineConfig, PipelineError, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csmt",
        description="Code-switching pipeline for lexicon-constrained translation.",
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workdir", default=None, help="override the config workdir")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = PipelineConfig.load(args.config, workdir=args.workdir, seed=args.seed)
        artifacts = run_stage(args.stage, cfg)
    except PipelineError as exc:
        print(f"csmt: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1
    for artifact in artifacts:
        print(artifact)
    return 0


if __name__ == "__main__":
    sys.exit(main())
