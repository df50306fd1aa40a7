"""
`kwass verify`: compare measured distances with the scenario's bounds.

`--from DIR` reuses trajectory.csv and distances.csv from an earlier
`simulate`/`distance` run instead of simulating again. Without snapshots
there is nothing to resample, so the allowance falls back to the rounding
floor unless `--allowance` is given.
"""

import argparse
import os

from kwass import bounds as bnd
from kwass.commands import add_common_options, load_with_overrides, output_dir
from kwass.dynamics import read_trajectory, write_trajectory
from kwass.exceptions import ConfigError
from kwass.pipeline import (
    ALLOWANCE_FLOOR,
    bootstrap_stage,
    bounds_stage,
    measure_stage,
    read_distances,
    required_distances,
    simulate_stage,
    verify_stage,
    write_distances,
    write_q_series,
    write_verdict,
)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="check bounds against measured distances and write a verdict")
    add_common_options(parser)
    parser.add_argument("--from", dest="from_dir", help="directory holding trajectory.csv and distances.csv")
    parser.add_argument("--allowance", type=float, help="relative allowance for every bound (overrides the bootstrap)")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    scn = load_with_overrides(args)
    out = output_dir(args, scn.name, scn.output)
    if args.allowance is not None and args.allowance < 0.0:
        raise ConfigError("--allowance must be nonnegative")

    if args.from_dir:
        try:
            times, diagnostics = read_trajectory(os.path.join(args.from_dir, "trajectory.csv"))
            d_times, distances = read_distances(os.path.join(args.from_dir, "distances.csv"))
        except OSError as e:
            raise ConfigError(f"{args.from_dir}: {e.strerror or e}")
        missing = [s.column for s in required_distances(scn) if s.column not in distances]
        if missing:
            raise ConfigError(f"{args.from_dir}/distances.csv lacks columns {missing}")
        if len(d_times) != len(times):
            raise ConfigError(f"{args.from_dir}: trajectory.csv and distances.csv have different snapshot counts")
        allowances = {c: ALLOWANCE_FLOOR for c in distances}
        coupling_label = f"read from {args.from_dir}"
    else:
        traj = simulate_stage(scn, args.threads)
        write_trajectory(os.path.join(out, "trajectory.csv"), traj)
        times, diagnostics = traj.times, traj.diagnostics
        distances = measure_stage(scn, traj)
        write_distances(os.path.join(out, "distances.csv"), times, distances)
        allowances = bootstrap_stage(scn, traj, distances)
        coupling_label = traj.coupling_label

    if args.allowance is not None:
        allowances = {c: args.allowance for c in list(distances) + ["Q"]}

    stage = bounds_stage(scn, times, distances, diagnostics)
    result = verify_stage(scn, times, distances, stage, allowances)
    bnd.write_bounds(os.path.join(out, "bounds.csv"), stage.curves)
    write_q_series(os.path.join(out, "q_series.csv"), stage)
    bnd.write_reports(os.path.join(out, "report.csv"), result.reports, result.measure_names)
    write_verdict(os.path.join(out, "verdict.txt"), scn, stage, result, coupling_label)

    print(f"{result.verdict.value}: {os.path.join(out, 'verdict.txt')}")
    return 0 if all(result.checks.values()) else 1
