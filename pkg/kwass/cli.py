"""
Command Line Entry Point

Builds the `kwass` parser and dispatches to the subcommand modules in
kwass.commands:
- simulate, distance, bounds, verify, run
- scenarios list / validate

Exit codes:
- 0: verdict passes (or the command completed)
- 1: verdict fails
- 2: usage or configuration error
- 3: numerical failure
"""

import argparse
import logging
import sys
from typing import List, Optional

import kwass
from kwass.commands import bounds, distance, run, scenarios, simulate, verify
from kwass.config import settings
from kwass.exceptions import KwassError

logger = logging.getLogger("kwass")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kwass",
        description="Kinetic Wasserstein stability: simulate particle pairs, measure distances, verify bounds",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {kwass.__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # One module per subcommand, registered like routers on an app
    for module in (simulate, distance, bounds, verify, run, scenarios):
        module.add_parser(subparsers)
    return parser


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose or settings.DEBUG else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        parser.error("--threads must be at least 1")

    try:
        return args.func(args)
    except KwassError as e:
        logger.error(e.detail)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
