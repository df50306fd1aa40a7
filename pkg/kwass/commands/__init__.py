"""
Subcommands of the `kwass` command line.

Each module exposes `add_parser(subparsers)`, which registers the
subcommand and binds its handler as `func`. Handlers return the process
exit code; library errors propagate to kwass.cli, which maps them.
"""

import argparse
import os
from typing import Optional

from kwass.config import settings
from kwass.pipeline import prepare_scenario
from kwass.schemas import Scenario


def add_common_options(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", required=config_required, help="scenario file (TOML or JSON) or bundled scenario name")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override sim.seed")
    parser.add_argument("--threads", type=int, help="worker threads (default: KWASS_THREADS)")


def output_dir(args: argparse.Namespace, scenario_name: str, configured: Optional[str] = None) -> str:
    out = args.out or configured or os.path.join(settings.OUTPUT_DIR, scenario_name)
    os.makedirs(out, exist_ok=True)
    return out


def load_with_overrides(args: argparse.Namespace) -> Scenario:
    """Checked scenario from --config with --seed applied."""
    return prepare_scenario(args.config, args.seed)
