"""
`kwass run`: simulate, measure, bound and verify a scenario in one go.
"""

import argparse

from kwass.commands import add_common_options
from kwass.pipeline import run_scenario


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("run", help="run a scenario end to end")
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    result = run_scenario(args.config, out_dir=args.out, seed=args.seed, threads=args.threads)
    for name, ok in result.checks.items():
        print(f"{name}: {'pass' if ok else 'fail'}")
    print(f"verdict: {result.verdict.value} ({result.out_dir})")
    return result.exit_code
