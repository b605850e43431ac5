"""Command line entry point: python -m eam_metrology --config run.conf."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import parse_config
from .exceptions import ConfigError, InvalidParameter, SequenceError, VerificationFailed
from .runner import Runner

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_VERIFY_FAILED = 2


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser."""
    parser = argparse.ArgumentParser(
        prog="eam_metrology",
        description="Environment-assisted metrology simulator and sensitivity toolkit.",
    )
    parser.add_argument(
        "--config",
        type=Path,
        required=True,
        help="Path of the run configuration (sectioned key = value file)",
    )
    parser.add_argument(
        "--output",
        type=Path,
        default=None,
        help="Output directory, overrides [run] output",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=-1,
        help="Worker processes for Monte-Carlo trials, default=-1 (all cores)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Base seed, overrides [run] seed",
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default="info",
        help="Provide logging level. Example --log-level debug, default=info, "
        "possible=(critical, error, warning, info, debug)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run the configured command and return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    logger = logging.getLogger(__package__)
    try:
        config = parse_config(args.config.read_text(encoding="utf-8"))
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        Runner(config, args.output, args.threads).run()
    except VerificationFailed as err:
        logger.error("Verification failed: %s", err)
        return EXIT_VERIFY_FAILED
    except (ConfigError, InvalidParameter, SequenceError, OSError) as err:
        logger.error("Invalid run: %s", err)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
