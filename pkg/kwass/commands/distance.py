"""
`kwass distance`: transport distances.

Two forms:
- `--config FILE`: simulate the scenario and write distances.csv
- `--in-mu A.csv --in-nu B.csv`: one distance between two ensemble files,
  emitted as a `variant,p,params,value,converged` CSV row
"""

import argparse
import csv
import os
import sys
from typing import List, Tuple

from kwass.commands import add_common_options, load_with_overrides, output_dir
from kwass.dynamics import write_trajectory
from kwass.exceptions import ConfigError
from kwass.measures import CostSpec, read_ensemble
from kwass.models import SolverKind, WeightVariant
from kwass.pipeline import measure_stage, simulate_stage, write_distances
from kwass.transport import WeightFunction, nonlinear_wasserstein, optimal_transport

COST_CHOICES = ("plain", "aniso", "quad", "shifted", "nonlinear")
HEADER = ("variant", "p", "params", "value", "converged")


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("distance", help="measure transport distances")
    add_common_options(parser, config_required=False)
    parser.add_argument("--in-mu", dest="in_mu", help="source ensemble CSV (x1..xd,v1..vd,w)")
    parser.add_argument("--in-nu", dest="in_nu", help="target ensemble CSV")
    parser.add_argument("--cost", choices=COST_CHOICES, default="plain")
    parser.add_argument("--p", type=float, default=1.0)
    parser.add_argument("--lambda", dest="lam", type=float, default=1.0, help="position weight (aniso, shifted)")
    parser.add_argument("--abc", help="quadratic form coefficients as a,b,c")
    parser.add_argument("--t", type=float, default=0.0, help="shift time of the shifted cost")
    parser.add_argument("--eps", type=float, default=1.0, help="eps of the nonlinear weight")
    parser.add_argument("--weight", choices=[v.value for v in WeightVariant], default=WeightVariant.LOG_EPS.value)
    parser.add_argument("--solver", choices=[SolverKind.EXACT.value, SolverKind.ENTROPIC.value])
    parser.add_argument("--eta", type=float, help="entropic regularization")
    parser.set_defaults(func=run)


def _parse_abc(raw: str) -> Tuple[float, float, float]:
    try:
        a, b, c = (float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"--abc expects three comma-separated numbers (got '{raw}')")
    return a, b, c


def cost_from_args(args: argparse.Namespace) -> CostSpec:
    try:
        if args.cost == "aniso":
            return CostSpec.anisotropic(args.lam, args.p)
        if args.cost == "quad":
            if not args.abc:
                raise ConfigError("--cost quad needs --abc a,b,c")
            return CostSpec.quadratic(*_parse_abc(args.abc), p=args.p)
        if args.cost == "shifted":
            return CostSpec.shifted(args.t, args.p, args.lam)
        return CostSpec.plain(args.p)
    except ValueError as e:
        raise ConfigError(f"invalid cost parameters: {e}")


def distance_row(args: argparse.Namespace) -> List[str]:
    mu, nu = read_ensemble(args.in_mu), read_ensemble(args.in_nu)
    if args.cost == "nonlinear":
        try:
            w = WeightFunction(variant=args.weight, eps=args.eps)
        except ValueError as e:
            raise ConfigError(f"invalid weight parameters: {e}")
        result = nonlinear_wasserstein(mu, nu, args.p, w)
        params = f"weight={w.variant.value};eps={w.eps:g}"
        return ["nonlinear", f"{args.p:g}", params, repr(result.distance), str(result.converged).lower()]

    spec = cost_from_args(args)
    solver = SolverKind(args.solver) if args.solver else None
    result = optimal_transport(mu, nu, spec, solver=solver, eta=args.eta)
    return [spec.variant.value, f"{spec.p:g}", spec.params_label(), repr(result.value), str(result.converged).lower()]


def run(args: argparse.Namespace) -> int:
    if args.config:
        scn = load_with_overrides(args)
        out = output_dir(args, scn.name, scn.output)
        traj = simulate_stage(scn, args.threads)
        write_trajectory(os.path.join(out, "trajectory.csv"), traj)
        write_distances(os.path.join(out, "distances.csv"), traj.times, measure_stage(scn, traj))
        print(os.path.join(out, "distances.csv"))
        return 0

    if not (args.in_mu and args.in_nu):
        raise ConfigError("distance needs --config, or both --in-mu and --in-nu")
    row = distance_row(args)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "distance.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEADER)
            writer.writerow(row)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(HEADER)
    writer.writerow(row)
    return 0
