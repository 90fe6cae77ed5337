"""
Command-line entry point: train, sample, eval, check and experiment verbs.
"""

import argparse
import logging
import sys
from typing import List, Optional

from commands import check, evaluate, experiment, sample, train
from config.settings import LOG_LEVEL
from utils.debug import debug
from utils.errors import CommandError

logger = logging.getLogger("lmatch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmatch",
        description="Likelihood matching for diffusion models: training, sampling and evaluation",
    )
    parser.add_argument("--debug", action="store_true", help="verbose numerical tracing")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (train, sample, evaluate, check, experiment):
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.debug:
        debug.enable()
    logging.basicConfig(
        level=logging.DEBUG if debug.is_enabled() else LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CommandError as exc:
        logger.error(f"{args.command} failed: {exc.detail}")
        print(f"Error: {exc.detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
