"""
`kwass simulate`: evolve the scenario's initial pair and write trajectory.csv.
"""

import argparse
import logging
import os

from kwass.commands import add_common_options, load_with_overrides, output_dir
from kwass.dynamics import write_trajectory
from kwass.measures import write_ensemble
from kwass.pipeline import simulate_stage

logger = logging.getLogger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="simulate a coupled pair and write its diagnostics")
    add_common_options(parser)
    parser.add_argument("--snapshots", action="store_true", help="also write every snapshot ensemble as CSV")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    scn = load_with_overrides(args)
    out = output_dir(args, scn.name, scn.output)
    traj = simulate_stage(scn, args.threads)
    write_trajectory(os.path.join(out, "trajectory.csv"), traj)
    if args.snapshots:
        for i, (mu, nu) in enumerate(traj.snapshots):
            write_ensemble(os.path.join(out, f"snapshot_{i:04d}_mu.csv"), mu)
            write_ensemble(os.path.join(out, f"snapshot_{i:04d}_nu.csv"), nu)
    logger.info(f"Wrote {len(traj)} snapshots to {out}")
    print(os.path.join(out, "trajectory.csv"))
    return 0
