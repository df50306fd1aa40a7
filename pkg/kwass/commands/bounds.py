"""
`kwass bounds`: evaluate one stability bound on a time grid.

With `--config` the scenario is simulated and every configured bound is
written, with constants taken from the measurements at t=0.
"""

import argparse
import logging
import os

import numpy as np

from kwass import bounds as bnd
from kwass.commands import add_common_options, load_with_overrides, output_dir
from kwass.config import settings
from kwass.exceptions import ConfigError
from kwass.models import BoundKind
from kwass.pipeline import bounds_stage, measure_stage, simulate_stage

logger = logging.getLogger(__name__)

KIND_CHOICES = {
    "dobrushin": BoundKind.DOBRUSHIN,
    "improved": BoundKind.IMPROVED_FREE_FLOW,
    "combined": BoundKind.COMBINED,
    "loeper-classical": BoundKind.LOEPER_CLASSICAL,
    "loeper-improved": BoundKind.LOEPER_IMPROVED,
    "R": BoundKind.R_OF_T,
    "gronwall": BoundKind.GRONWALL,
}


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("bounds", help="evaluate stability bounds")
    add_common_options(parser, config_required=False)
    parser.add_argument("--kind", choices=list(KIND_CHOICES))
    parser.add_argument("--B", type=float, default=0.0, help="Hessian bound of the interaction kernel")
    parser.add_argument("--W0", type=float, help="initial distance (W1 or W2 by kind)")
    parser.add_argument("--Q0", type=float, help="initial nonlinear quantity for --kind R")
    parser.add_argument("--t-end", dest="t_end", type=float, default=1.0)
    parser.add_argument("--points", type=int, default=101)
    parser.add_argument("--eps", type=float, default=1.0)
    parser.add_argument("--A", type=float, default=1.0, help="constant density bound; the time integral is A*t")
    parser.add_argument("--C", type=float, default=1.0)
    parser.add_argument("--c-d", dest="c_d", type=float, default=1.0)
    parser.add_argument("--C-d", dest="C_d", type=float, default=settings.C_D)
    parser.add_argument("--c0", type=float, default=settings.C0)
    parser.add_argument("--crossover", action="store_true", help="print the time where the improved W1 bound overtakes the classical one")
    parser.set_defaults(func=run)


def curve_from_args(args: argparse.Namespace) -> bnd.BoundCurve:
    kind = KIND_CHOICES[args.kind]
    if args.points < 2 or args.t_end < 0.0:
        raise ConfigError("--points must be at least 2 and --t-end nonnegative")
    times = np.linspace(0.0, args.t_end, args.points)

    if kind == BoundKind.R_OF_T:
        if args.Q0 is None:
            raise ConfigError("--kind R needs --Q0")
        return bnd.r_curve(times, args.Q0, args.eps, args.A * times, args.C_d)
    if args.W0 is None:
        raise ConfigError(f"--kind {args.kind} needs --W0")
    if kind in (BoundKind.DOBRUSHIN, BoundKind.IMPROVED_FREE_FLOW, BoundKind.COMBINED):
        return bnd.w1_curve(kind, times, args.B, args.W0)
    if kind == BoundKind.LOEPER_CLASSICAL:
        return bnd.loeper_classical_curve(times, args.W0, args.C, args.c_d)
    if kind == BoundKind.GRONWALL:
        return bnd.gronwall_curve(times, args.W0, args.C)
    return bnd.loeper_improved_curve(times, args.W0, args.eps, args.A * times, args.C_d, args.c0)


def run(args: argparse.Namespace) -> int:
    if args.crossover:
        cross = bnd.crossover_time(args.B)
        print(f"{cross.t_star!r}" if cross.found else "none")
        if not args.kind and not args.config:
            return 0

    if args.config:
        scn = load_with_overrides(args)
        out = output_dir(args, scn.name, scn.output)
        traj = simulate_stage(scn, args.threads)
        stage = bounds_stage(scn, traj.times, measure_stage(scn, traj), traj.diagnostics)
        curves = stage.curves
    elif args.kind:
        out = output_dir(args, "bounds")
        curves = [curve_from_args(args)]
    else:
        raise ConfigError("bounds needs --kind, --config or --crossover")

    path = os.path.join(out, "bounds.csv")
    bnd.write_bounds(path, curves)
    for curve in curves:
        if not curve.hypothesis_ok:
            logger.warning(f"{curve.kind.value}: hypotheses fail at {int(np.sum(~curve.valid))} of {len(curve.times)} times")
    print(path)
    return 0
