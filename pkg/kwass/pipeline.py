"""
Scenario Pipeline

Runs a scenario file end to end:
1. Simulate: sample μ₀ and ν₀, couple them, evolve the pair
2. Measure: transport distances at every snapshot
3. Bound: evaluate the declared bound curves on the snapshot times
4. Verify: compare measurements with bounds and write a verdict

Outputs (per run directory):
- trajectory.csv, distances.csv, bounds.csv, report.csv, q_series.csv
- verdict.txt, manifest.json, plot.gp

Key Design Decisions:
1. Every random draw is seeded from the scenario, so reruns are byte-identical
2. A failed run removes the outputs it wrote
3. Stages after simulation work on arrays, so `verify` can rerun them from CSVs
"""

import csv
import hashlib
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from importlib import metadata
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pydantic import ValidationError

import kwass
from kwass import bounds as bnd
from kwass.config import settings
from kwass.dynamics import PairedTrajectory, sample_ensemble, simulate_pair, write_trajectory
from kwass.exceptions import ConfigError
from kwass.measures import CostSpec, Coupling, PhaseEnsemble
from kwass.models import BoundKind, CostVariant, PairKind, SimMode, SolverKind, Verdict
from kwass.schemas import BoundSpec, DistanceSpec, Scenario
from kwass.transport import nonlinear_wasserstein, optimal_transport, solve_exact

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "scenarios")

W1_BOUNDS = {BoundKind.DOBRUSHIN, BoundKind.IMPROVED_FREE_FLOW, BoundKind.COMBINED}
W2_BOUNDS = {BoundKind.LOEPER_CLASSICAL, BoundKind.LOEPER_IMPROVED, BoundKind.GRONWALL}
POISSON_BOUNDS = {BoundKind.LOEPER_IMPROVED, BoundKind.R_OF_T}

# Relative slack for rounding in measured-versus-bound comparisons
ALLOWANCE_FLOOR = 1e-9

W1_COLUMN = DistanceSpec(p=1.0).column
W2_COLUMN = DistanceSpec(p=2.0).column


def _format_validation_error(source: str, exc: ValidationError) -> str:
    lines = [f"{source}: invalid scenario"]
    for err in exc.errors():
        path = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"  {path}: {err['msg']}")
    return "\n".join(lines)


def resolve_scenario(name_or_path: str) -> str:
    """A file path as given, or the path of a bundled scenario by name."""
    if os.path.isfile(name_or_path):
        return name_or_path
    stem = name_or_path[:-5] if name_or_path.endswith(".toml") else name_or_path
    bundled = os.path.join(SCENARIO_DIR, f"{stem}.toml")
    if os.path.isfile(bundled):
        return bundled
    raise ConfigError(f"scenario file not found: {name_or_path}")


def load_scenario(path: str) -> Scenario:
    """
    Parse and validate a TOML or JSON scenario.

    Raises:
        ConfigError: unreadable file, syntax error or schema violation
            (one line per offending field, with its dotted path).
    """
    path = resolve_scenario(path)
    try:
        if path.lower().endswith(".json"):
            with open(path) as fh:
                data = json.load(fh)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"{path}: {e}")
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(path, e))


@dataclass
class ScenarioInfo:
    name: str
    path: str
    description: str


def list_scenarios() -> List[ScenarioInfo]:
    """Bundled scenarios, sorted by file name."""
    found = []
    for fname in sorted(os.listdir(SCENARIO_DIR)):
        if not fname.endswith(".toml"):
            continue
        path = os.path.join(SCENARIO_DIR, fname)
        scn = load_scenario(path)
        found.append(ScenarioInfo(fname[:-5], path, scn.description))
    return found


@dataclass
class Diagnostics:
    ok: bool
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    scenario: Optional[Scenario] = None


def check_scenario(scn: Scenario) -> Tuple[List[str], List[str]]:
    """Cross-field checks that the schema alone cannot express."""
    errors, warnings = [], []
    mode = scn.sim.mode
    for i, b in enumerate(scn.bounds):
        where = f"bounds.{i}.kind"
        if b.kind in POISSON_BOUNDS and mode != SimMode.POISSON:
            errors.append(f"{where}: {b.kind.value} needs sim.mode = poisson")
        if b.kind in W1_BOUNDS and mode == SimMode.POISSON:
            errors.append(f"{where}: {b.kind.value} applies to free or kernel mode")
        if b.kind in W1_BOUNDS and mode == SimMode.KERNEL and b.B is not None:
            declared = scn.sim.kernel.build().hessian_bound
            if b.B < declared:
                warnings.append(f"bounds.{i}.B: {b.B:g} is below the kernel's hessian bound {declared:g}")
    for i, d in enumerate(scn.distances):
        if d.weight is not None and d.variant != CostVariant.PLAIN:
            errors.append(f"distances.{i}.weight: the nonlinear distance uses the plain cost")
    if scn.sweep is not None and scn.sweep.eps and mode != SimMode.POISSON:
        warnings.append("sweep.eps: eps only affects poisson mode")
    if scn.sim.N > settings.EXACT_MEASURE_POINTS:
        warnings.append(
            f"sim.N: {scn.sim.N} particles exceed {settings.EXACT_MEASURE_POINTS}; "
            f"distances use the entropic solver and π₀ the index pairing"
        )
    return errors, warnings


def validate_config(path: str) -> Diagnostics:
    """Validate a scenario file without running anything."""
    try:
        scn = load_scenario(path)
    except ConfigError as e:
        return Diagnostics(False, e.detail.splitlines()[1:] or [e.detail])
    errors, warnings = check_scenario(scn)
    return Diagnostics(not errors, errors, warnings, scn)


def prepare_scenario(path: str, seed: Optional[int] = None) -> Scenario:
    """
    Load, cross-check and apply a seed override.

    Raises:
        ConfigError: schema or cross-field errors; warnings are only logged.
    """
    scn = load_scenario(path)
    errors, warnings = check_scenario(scn)
    for w in warnings:
        logger.warning(w)
    if errors:
        raise ConfigError("\n".join([f"{path}: invalid scenario"] + [f"  {e}" for e in errors]))
    if seed is not None:
        scn = scn.model_copy(update={"sim": scn.sim.model_copy(update={"seed": seed})})
    return scn


def build_initial_pair(scn: Scenario) -> Tuple[PhaseEnsemble, PhaseEnsemble]:
    """μ₀ from the initial-data spec and ν₀ derived from it by the pair spec."""
    rng = np.random.default_rng(scn.sim.seed)
    mu0 = sample_ensemble(scn.initial, scn.sim.N, rng, label="mu")
    pair = scn.pair
    if pair.kind == PairKind.VELOCITY_SHIFT:
        nu0 = PhaseEnsemble.from_arrays(mu0.x, mu0.v + pair.delta, mu0.weights, label="nu")
    elif pair.kind == PairKind.POSITION_SHIFT:
        nu0 = PhaseEnsemble.from_arrays(mu0.x + pair.delta, mu0.v, mu0.weights, label="nu")
    else:
        seed = scn.sim.seed + 1 if pair.seed is None else pair.seed
        nu0 = sample_ensemble(scn.initial, scn.sim.N, np.random.default_rng(seed), label="nu")
    return mu0, nu0


def coupling_exponent(scn: Scenario) -> float:
    """W2-type runs are coupled by an optimal W2 plan, the rest by an optimal W1 plan."""
    if scn.sim.mode == SimMode.POISSON or any(b.kind in W2_BOUNDS | POISSON_BOUNDS for b in scn.bounds):
        return 2.0
    return 1.0


def initial_coupling(mu0: PhaseEnsemble, nu0: PhaseEnsemble, p: float) -> Tuple[Coupling, str]:
    """
    Optimal plan on initial data at desk scale; above that, the index pairing
    (equal sizes) or an entropic plan, labeled as such.
    """
    if max(mu0.size, nu0.size) <= settings.EXACT_MEASURE_POINTS:
        return solve_exact(mu0, nu0, CostSpec.plain(p)).plan, "optimal"
    if mu0.size == nu0.size:
        logger.warning(f"Using the index pairing as π₀ for N={mu0.size}: suboptimal coupling")
        return Coupling.diagonal(mu0, nu0), "suboptimal"
    logger.warning(f"Using an entropic plan as π₀ for {mu0.size}x{nu0.size} particles")
    return optimal_transport(mu0, nu0, CostSpec.plain(p), solver=SolverKind.ENTROPIC).plan, "entropic"


def simulate_stage(scn: Scenario, threads: Optional[int] = None) -> PairedTrajectory:
    mu0, nu0 = build_initial_pair(scn)
    pi0, label = initial_coupling(mu0, nu0, coupling_exponent(scn))
    return simulate_pair(scn.sim, mu0, nu0, pi0, threads=threads, coupling_label=label)


def required_distances(scn: Scenario) -> List[DistanceSpec]:
    """Declared distances plus the plain W1/W2 the bounds are checked against."""
    specs = list(scn.distances)
    columns = {d.column for d in specs}
    kinds = {b.kind for b in scn.bounds}
    if kinds & W1_BOUNDS and W1_COLUMN not in columns:
        specs.append(DistanceSpec(p=1.0))
    if kinds & W2_BOUNDS and W2_COLUMN not in columns:
        specs.append(DistanceSpec(p=2.0))
    return specs


def measure_distance(spec: DistanceSpec, mu: PhaseEnsemble, nu: PhaseEnsemble, t: float, eps: float) -> float:
    w = spec.weight_function(eps)
    if w is not None:
        return nonlinear_wasserstein(mu, nu, spec.p, w).distance
    return optimal_transport(
        mu, nu, spec.cost(t), solver=spec.solver, eta=spec.eta, exact_limit=settings.EXACT_MEASURE_POINTS
    ).value


def measure_stage(scn: Scenario, traj: PairedTrajectory) -> Dict[str, np.ndarray]:
    """Every required distance at every snapshot, keyed by CSV column."""
    out: Dict[str, np.ndarray] = {}
    for spec in required_distances(scn):
        values = [
            measure_distance(spec, mu, nu, float(t), scn.sim.eps)
            for t, (mu, nu) in zip(traj.times, traj.snapshots)
        ]
        out[spec.column] = np.asarray(values)
        logger.info(f"Measured {spec.column} at {len(values)} snapshots")
    return out


def bootstrap_stage(scn: Scenario, traj: PairedTrajectory, distances: Dict[str, np.ndarray]) -> Dict[str, float]:
    """Relative Monte-Carlo allowance per plain W1/W2 column, estimated on the last snapshot."""
    allowances: Dict[str, float] = {}
    mu, nu = traj.snapshots[-1]
    for column, p in ((W1_COLUMN, 1.0), (W2_COLUMN, 2.0)):
        if column not in distances:
            continue
        if not scn.bootstrap:
            allowances[column] = ALLOWANCE_FLOOR
            continue
        spec = CostSpec.plain(p)
        boot = bnd.bootstrap_allowance(
            mu, nu,
            lambda a, b: optimal_transport(a, b, spec).value,
            float(distances[column][-1]),
            seed=scn.sim.seed,
        )
        allowances[column] = max(boot, ALLOWANCE_FLOOR)
        logger.info(f"Bootstrap allowance for {column}: {allowances[column]:.3e}")
    return allowances


def _bound_B(scn: Scenario, spec: BoundSpec) -> float:
    if spec.B is not None:
        return spec.B
    if scn.sim.mode == SimMode.KERNEL:
        return scn.sim.kernel.build().hessian_bound
    return 0.0


@dataclass
class BoundStage:
    curves: List[bnd.BoundCurve]
    specs: List[BoundSpec]
    q_series: bnd.QSeries
    A_int: np.ndarray
    free_flow: Optional[bnd.FreeFlowQ] = None


def bounds_stage(
    scn: Scenario,
    times: np.ndarray,
    distances: Dict[str, np.ndarray],
    diagnostics: Dict[str, np.ndarray],
) -> BoundStage:
    """Bound curves on the snapshot times, with constants taken from the measurements at t=0."""
    eps = scn.sim.eps
    q = bnd.compute_Q_series(_DiagnosticView(times, diagnostics), eps)
    A = diagnostics["A"]
    A_int = bnd.integrate_A(times, A) if np.all(np.isfinite(A)) else np.full(times.shape, math.nan)

    curves, specs = [], []
    for spec in scn.bounds:
        kind = spec.kind
        consts = spec.constants
        if kind in W1_BOUNDS:
            curve = bnd.w1_curve(kind, times, _bound_B(scn, spec), float(distances[W1_COLUMN][0]))
        elif kind == BoundKind.LOEPER_CLASSICAL:
            curve = bnd.loeper_classical_curve(times, float(distances[W2_COLUMN][0]), spec.C, spec.c_d)
        elif kind == BoundKind.GRONWALL:
            curve = bnd.gronwall_curve(times, float(distances[W2_COLUMN][0]), spec.C)
        elif kind == BoundKind.LOEPER_IMPROVED:
            curve = bnd.loeper_improved_curve(
                times, float(distances[W2_COLUMN][0]), eps, A_int, consts["C_d"], consts["c0"]
            )
        else:
            Q0 = float(q.Q[0])
            if not (q.defined[0] and 0.0 < Q0 < 1.0):
                raise ConfigError(f"R_of_t needs Q(0) in (0, 1) (got {Q0})")
            curve = bnd.r_curve(times, Q0, eps, A_int, consts["C_d"])
        curves.append(curve)
        specs.append(spec)

    free_flow = None
    w1_specs = [s for s in scn.bounds if s.kind in W1_BOUNDS]
    if w1_specs:
        free_flow = bnd.free_flow_q_series(_DiagnosticView(times, diagnostics), _bound_B(scn, w1_specs[0]))
    return BoundStage(curves, specs, q, A_int, free_flow)


class _DiagnosticView:
    """Trajectory-like access to diagnostics read back from CSV."""

    def __init__(self, times: np.ndarray, diagnostics: Dict[str, np.ndarray]):
        self.times = times
        self.diagnostics = diagnostics
        self.D = diagnostics["D"]
        self.E = diagnostics["E"]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.diagnostics[key]


@dataclass
class VerifyStage:
    reports: List[bnd.StabilityReport]
    measure_names: List[str]
    checks: Dict[str, bool]

    @property
    def verdict(self) -> Verdict:
        return Verdict.PASS if all(self.checks.values()) else Verdict.FAIL


def verify_stage(
    scn: Scenario,
    times: np.ndarray,
    distances: Dict[str, np.ndarray],
    stage: BoundStage,
    allowances: Dict[str, float],
) -> VerifyStage:
    """Join measurements and curves into reports and named pass/fail checks."""
    reports, names, checks = [], [], {}
    for spec, curve in zip(stage.specs, stage.curves):
        if spec.kind in W1_BOUNDS:
            column = W1_COLUMN
            measured = distances[column]
        elif spec.kind == BoundKind.R_OF_T:
            column = "Q"
            measured = np.nan_to_num(stage.q_series.Q, nan=math.inf)
        else:
            column = W2_COLUMN
            measured = distances[column]
        allowance = spec.allowance if spec.allowance is not None else allowances.get(column, ALLOWANCE_FLOOR)
        report = bnd.verify_bound(times, measured, curve, allowance)
        reports.append(report)
        names.append(column)
        if spec.verify:
            checks[f"{spec.kind.value}:{column}"] = report.passed

    q = stage.q_series
    if scn.sim.mode == SimMode.POISSON:
        checks["Q>=E"] = bool(np.all(q.Q[q.defined] >= q.E[q.defined]))
    if stage.free_flow is not None:
        checks["Q_w1:telescoping"] = bool(np.all(stage.free_flow.telescoping_ok))
        checks["Q_w1:growth"] = bool(np.all(stage.free_flow.growth_ok))
    return VerifyStage(reports, names, checks)


def write_distances(path: str, times: np.ndarray, distances: Dict[str, np.ndarray]) -> None:
    columns = list(distances)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + columns)
        for i, t in enumerate(times):
            writer.writerow([repr(float(t))] + [repr(float(distances[c][i])) for c in columns])


def read_distances(path: str) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        columns = [c for c in (reader.fieldnames or []) if c != "t"]
    times = np.array([float(r["t"]) for r in rows])
    return times, {c: np.array([float(r[c]) for r in rows]) for c in columns}


def write_q_series(path: str, stage: BoundStage) -> None:
    q = stage.q_series
    r = next((c for c in stage.curves if c.kind == BoundKind.R_OF_T), None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "D", "E", "Q", "defined", "degenerate", "proxy", "A_int", "R", "window_ok", "Q_w1"])
        for i, t in enumerate(q.times):
            writer.writerow([
                repr(float(t)), repr(float(q.D[i])), repr(float(q.E[i])), repr(float(q.Q[i])),
                int(q.defined[i]), int(q.degenerate[i]), repr(float(q.proxy[i])),
                repr(float(stage.A_int[i])),
                repr(float(r.values[i])) if r is not None else "nan",
                int(r.valid[i]) if r is not None else "",
                repr(float(stage.free_flow.Q[i])) if stage.free_flow is not None else "nan",
            ])


def write_verdict(path: str, scn: Scenario, stage: BoundStage, result: VerifyStage, coupling_label: str) -> None:
    lines = [
        f"scenario: {scn.name}",
        f"mode: {scn.sim.mode.value}  N: {scn.sim.N}  dt: {scn.sim.dt:g}  t_end: {scn.sim.t_end:g}  eps: {scn.sim.eps:g}",
        f"initial coupling: {coupling_label}",
        "",
    ]
    for curve in stage.curves:
        params = ", ".join(f"{k}={v:g}" for k, v in sorted(curve.params.items()))
        lines.append(f"bound {curve.kind.value}: {params}")
    lines.append("")
    for rep, name in zip(result.reports, result.measure_names):
        valid = int(np.sum(rep.bound.valid))
        worst = float(np.min(np.where(rep.bound.valid, rep.margin, np.inf))) if valid else math.nan
        lines.append(
            f"{rep.bound.kind.value} vs {name}: {rep.verdict.value} "
            f"(valid times {valid}/{len(rep.times)}, min margin {worst:.6e}, allowance {rep.allowance:.3e})"
        )
    for name, ok in result.checks.items():
        lines.append(f"check {name}: {'pass' if ok else 'fail'}")
    lines.append("")
    lines.append(f"verdict: {result.verdict.value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_plot_script(path: str, distance_columns: List[str], curves: List[bnd.BoundCurve]) -> None:
    """gnuplot script drawing measured distances against bound curves."""
    plots = [
        f'"distances.csv" using 1:{i + 2} with linespoints title "{c}"'
        for i, c in enumerate(distance_columns)
    ]
    plots += [
        f'"bounds.csv" using 1:(strcol(2) eq "{c.kind.value}" ? $3 : NaN) with lines title "{c.kind.value}"'
        for c in curves
    ]
    script = [
        'set datafile separator ","',
        'set terminal pngcairo size 900,600',
        'set output "distances.png"',
        'set xlabel "t"',
        'set logscale y',
        'set key left top',
        "plot " + ", \\\n     ".join(plots) if plots else "# nothing to plot",
        "",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(script))


def _versions() -> Dict[str, str]:
    versions = {"kwass": kwass.__version__}
    for dist in ("numpy", "scipy", "POT", "pydantic", "pydantic-settings"):
        try:
            versions[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            versions[dist] = "unknown"
    return versions


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, scn: Scenario, out_dir: str, files: List[str], verdict: Verdict, coupling_label: str) -> None:
    manifest = {
        "scenario": scn.model_dump(mode="json"),
        "seeds": {"sim": scn.sim.seed, "pair": scn.pair.seed if scn.pair.seed is not None else scn.sim.seed + 1},
        "constants": {"C_d": settings.C_D, "c0": settings.C0, "bootstrap_factor": settings.BOOTSTRAP_FACTOR},
        "initial_coupling": coupling_label,
        "versions": _versions(),
        "files": {f: _sha256(os.path.join(out_dir, f)) for f in files},
        "verdict": verdict.value,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunResult:
    verdict: Verdict
    out_dir: str
    files: List[str]
    checks: Dict[str, bool]
    children: List["RunResult"] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.verdict == Verdict.PASS else 1


class _Outputs:
    """Tracks files written into a run directory so a failed run can remove them."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.created = not os.path.isdir(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        self.files: List[str] = []

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def cleanup(self) -> None:
        if self.created:
            shutil.rmtree(self.out_dir, ignore_errors=True)
            return
        for name in self.files:
            try:
                os.remove(os.path.join(self.out_dir, name))
            except OSError:
                pass


def _run_single(scn: Scenario, out_dir: str, threads: Optional[int], outputs: Optional[_Outputs] = None) -> RunResult:
    outputs = outputs or _Outputs(out_dir)
    try:
        traj = simulate_stage(scn, threads)
        write_trajectory(outputs.path("trajectory.csv"), traj)

        distances = measure_stage(scn, traj)
        write_distances(outputs.path("distances.csv"), traj.times, distances)

        stage = bounds_stage(scn, traj.times, distances, traj.diagnostics)
        bnd.write_bounds(outputs.path("bounds.csv"), stage.curves)
        write_q_series(outputs.path("q_series.csv"), stage)

        allowances = bootstrap_stage(scn, traj, distances)
        result = verify_stage(scn, traj.times, distances, stage, allowances)
        bnd.write_reports(outputs.path("report.csv"), result.reports, result.measure_names)
        write_verdict(outputs.path("verdict.txt"), scn, stage, result, traj.coupling_label)
        write_plot_script(outputs.path("plot.gp"), list(distances), stage.curves)

        hashed = list(outputs.files)
        write_manifest(outputs.path("manifest.json"), scn, out_dir, hashed, result.verdict, traj.coupling_label)
    except Exception as e:
        logger.error(f"Scenario '{scn.name}' failed: {e}")
        outputs.cleanup()
        raise

    logger.info(f"Scenario '{scn.name}' finished in {out_dir}: {result.verdict.value}")
    return RunResult(result.verdict, out_dir, outputs.files, result.checks)


def run_scenario(
    path: str,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> RunResult:
    """
    Run a scenario file end to end and write its artifacts.

    A `[sweep] eps = [...]` table runs once per value in `eps_<value>/`
    subdirectories; the overall verdict passes only if every run passes.

    Raises:
        ConfigError: invalid scenario (nothing is written).
        KwassError: numerical failure during the run (partial outputs removed).
    """
    scn = prepare_scenario(path, seed)
    out_dir = out_dir or scn.output or os.path.join(settings.OUTPUT_DIR, scn.name)

    if scn.sweep is None or not scn.sweep.eps:
        return _run_single(scn, out_dir, threads)

    parent = _Outputs(out_dir)
    done: List[_Outputs] = []
    children = []
    try:
        for eps in scn.sweep.eps:
            sub = scn.model_copy(update={"sim": scn.sim.model_copy(update={"eps": eps})})
            child = _Outputs(os.path.join(out_dir, f"eps_{eps:g}"))
            children.append(_run_single(sub, child.out_dir, threads, child))
            done.append(child)
    except Exception:
        # A sweep leaves all of its runs or none of them
        for child in done:
            child.cleanup()
        parent.cleanup()
        raise
    verdict = Verdict.PASS if all(c.verdict == Verdict.PASS for c in children) else Verdict.FAIL
    checks = {f"eps={eps:g}": c.verdict == Verdict.PASS for eps, c in zip(scn.sweep.eps, children)}
    return RunResult(verdict, out_dir, [], checks, children)

