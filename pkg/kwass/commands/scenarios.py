"""
`kwass scenarios list|validate`: inspect bundled and user scenario files.
"""

import argparse

from kwass.pipeline import list_scenarios, validate_config


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("scenarios", help="list or validate scenario files")
    actions = parser.add_subparsers(dest="action", required=True)

    lister = actions.add_parser("list", help="list bundled scenarios")
    lister.set_defaults(func=list_command)

    validator = actions.add_parser("validate", help="validate a scenario file without running it")
    validator.add_argument("--config", required=True)
    validator.set_defaults(func=validate_command)


def list_command(args: argparse.Namespace) -> int:
    for info in list_scenarios():
        print(f"{info.name}\t{info.description}")
    return 0


def validate_command(args: argparse.Namespace) -> int:
    diag = validate_config(args.config)
    for w in diag.warnings:
        print(f"warning: {w}")
    for e in diag.errors:
        print(f"error: {e}")
    if not diag.ok:
        return 2
    print(f"{args.config}: ok ({diag.scenario.name})")
    return 0
