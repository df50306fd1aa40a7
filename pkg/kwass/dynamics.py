"""
Characteristic Flows

Particle integration of the Vlasov system with a smooth kernel and of the
ε-scaled Vlasov-Poisson system, for single ensembles and for pairs that
share a fixed initial coupling π₀.

Integration scheme: kick-drift-kick leapfrog, positions wrapped to [0, 1)
after every drift. Free flow runs through the same scheme with a zero
force; free_transport is its exact map.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from kwass.config import settings
from kwass.exceptions import ConfigError, DomainError, NumericalError, StructuralError
from kwass.fields import (
    FieldSolution,
    KernelSpec,
    TorusGrid,
    deposit_density,
    interaction_energy,
    kernel_force,
    poisson_solve,
)
from kwass.measures import Coupling, PhaseEnsemble, minimal_image, validate_coupling
from kwass.models import SimMode
from kwass.schemas import InitialData, SimConfig

logger = logging.getLogger(__name__)


class FreeForce:
    """No force: characteristics are straight lines."""

    mode = SimMode.FREE

    def __call__(self, ens: PhaseEnsemble) -> np.ndarray:
        return np.zeros_like(ens.x)

    def potential_energy(self, ens: PhaseEnsemble) -> float:
        return 0.0


class KernelForce:
    """Self-consistent smooth-kernel force ∇K ∗ ρ, summed over all pairs."""

    mode = SimMode.KERNEL

    def __init__(self, kernel: KernelSpec):
        self.kernel = kernel

    def __call__(self, ens: PhaseEnsemble) -> np.ndarray:
        return kernel_force(ens, self.kernel, ens.x)

    def potential_energy(self, ens: PhaseEnsemble) -> float:
        # The force is +∇K∗ρ, so the interaction enters the conserved energy with a minus sign
        u = interaction_energy(ens, self.kernel)
        return 0.0 if u is None else -u


class PoissonForce:
    """
    Self-consistent field of −ε²ΔU = ρ − 1: deposit, solve, interpolate E = −∇U.
    """

    mode = SimMode.POISSON

    def __init__(self, eps: float, n: int):
        if not 0.0 < eps <= 1.0:
            raise DomainError(f"poisson mode requires eps in (0, 1] (got {eps})")
        self.eps = eps
        self.n = n

    def deposit(self, ens: PhaseEnsemble) -> TorusGrid:
        return deposit_density(ens, self.n)

    def solve(self, ens: PhaseEnsemble, rho: Optional[TorusGrid] = None) -> FieldSolution:
        return poisson_solve(self.deposit(ens) if rho is None else rho, self.eps)

    def __call__(self, ens: PhaseEnsemble) -> np.ndarray:
        return self.solve(ens).at(ens.x)

    def potential_energy(self, ens: PhaseEnsemble, solution: Optional[FieldSolution] = None) -> float:
        solution = self.solve(ens) if solution is None else solution
        return solution.field_energy()

    def density_max(self, ens: PhaseEnsemble, rho: Optional[TorusGrid] = None) -> float:
        return float((self.deposit(ens) if rho is None else rho).values.max())


ForceModel = Union[FreeForce, KernelForce, PoissonForce]


def make_force(cfg: SimConfig) -> ForceModel:
    if cfg.mode == SimMode.KERNEL:
        return KernelForce(cfg.kernel.build())
    if cfg.mode == SimMode.POISSON:
        return PoissonForce(cfg.eps, cfg.grid)
    return FreeForce()


def free_transport(ens: PhaseEnsemble, t: float) -> PhaseEnsemble:
    """Exact free flow: x ← x + t·v (wrapped), v unchanged."""
    if t < 0:
        raise DomainError(f"free transport needs t >= 0 (got {t})")
    return ens.with_state(ens.x + t * ens.v, ens.v)


def _kick_drift_kick(
    ens: PhaseEnsemble,
    force: Callable[[PhaseEnsemble], np.ndarray],
    dt: float,
    acc: np.ndarray,
) -> Tuple[PhaseEnsemble, np.ndarray]:
    v_half = ens.v + 0.5 * dt * acc
    drifted = ens.with_state(ens.x + dt * v_half, v_half)
    new_acc = force(drifted)
    if not np.all(np.isfinite(new_acc)):
        raise NumericalError(f"non-finite force after drift (dt={dt:g}, ensemble '{ens.label}')")
    return drifted.with_state(drifted.x, v_half + 0.5 * dt * new_acc), new_acc


def step(ens: PhaseEnsemble, force: Callable[[PhaseEnsemble], np.ndarray], dt: float) -> PhaseEnsemble:
    """
    One kick-drift-kick leapfrog step of size dt (negative dt integrates backwards).

    Raises:
        NumericalError: the force evaluates to NaN or infinity.
    """
    acc = force(ens)
    if not np.all(np.isfinite(acc)):
        raise NumericalError(f"non-finite force (ensemble '{ens.label}')")
    return _kick_drift_kick(ens, force, dt, acc)[0]


def advance(ens: PhaseEnsemble, force: ForceModel, dt: float, n_steps: int) -> PhaseEnsemble:
    """n_steps leapfrog steps, reusing the closing force of each step as the next opening one."""
    acc = force(ens)
    if not np.all(np.isfinite(acc)):
        raise NumericalError(f"non-finite force (ensemble '{ens.label}')")
    for _ in range(n_steps):
        ens, acc = _kick_drift_kick(ens, force, dt, acc)
    return ens


@dataclass(frozen=True)
class EnergyTerms:
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def energy_terms(ens: PhaseEnsemble, force: Optional[ForceModel] = None, solution: Optional[FieldSolution] = None) -> EnergyTerms:
    kinetic = 0.5 * float(np.dot(ens.weights, np.sum(ens.v ** 2, axis=1)))
    if force is None:
        return EnergyTerms(kinetic, 0.0)
    if isinstance(force, PoissonForce):
        return EnergyTerms(kinetic, force.potential_energy(ens, solution))
    return EnergyTerms(kinetic, force.potential_energy(ens))


def energy(ens: PhaseEnsemble, force: Optional[ForceModel] = None, solution: Optional[FieldSolution] = None) -> float:
    """
    Energy of a snapshot.

    Kinetic ½Σw|v|² plus, in poisson mode, the field term (ε²/2)∫|∇U|² and,
    in kernel mode, minus the interaction ½ΣΣ w_i w_j K(x_i − x_j) when the
    kernel supplies K.
    """
    return energy_terms(ens, force, solution).total


def sample_ensemble(initial: InitialData, n: int, rng: np.random.Generator, label: str = "mu") -> PhaseEnsemble:
    """
    Draw n uniform-weight particles: x₁ from 1 + α cos(2πk x₁) by rejection,
    other position coordinates uniform, velocities normal.
    """
    d = initial.d
    x = rng.random((n, d))
    if initial.alpha > 0.0:
        filled = 0
        first = np.empty(n)
        while filled < n:
            cand = rng.random(n)
            accept = rng.random(n) * (1.0 + initial.alpha) < 1.0 + initial.alpha * np.cos(2 * math.pi * initial.k * cand)
            take = cand[accept][: n - filled]
            first[filled:filled + take.size] = take
            filled += take.size
        x[:, 0] = first
    v = initial.v_mean + initial.v_std * rng.standard_normal((n, d))
    return PhaseEnsemble.from_arrays(x, v, label=label)


@dataclass(frozen=True, eq=False)
class PairedTrajectory:
    """
    Snapshots of two ensembles evolved from μ₀ and ν₀ under the same dynamics,
    paired by the fixed initial coupling π₀.

    Diagnostics (arrays over snapshot times):
    - D = ½∫|ΔX|² dπ₀, E = ½∫|ΔV|² dπ₀ (minimal-image ΔX)
    - W1x = ∫|ΔX| dπ₀, W1v = ∫|ΔV| dπ₀
    - shifted = ∫|(X₁ − tV₁) − (X₂ − tV₂)| dπ₀
    - energy1, energy2 per ensemble
    - A = max ρ₁ + max ρ₂ on the grid (poisson mode, NaN otherwise)
    """

    times: np.ndarray
    snapshots: List[Tuple[PhaseEnsemble, PhaseEnsemble]]
    coupling: Coupling
    diagnostics: Dict[str, np.ndarray]
    mode: SimMode = SimMode.FREE
    eps: float = 1.0
    coupling_label: str = "optimal"

    def __len__(self) -> int:
        return int(self.times.size)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.diagnostics[key]

    @property
    def D(self) -> np.ndarray:
        return self.diagnostics["D"]

    @property
    def E(self) -> np.ndarray:
        return self.diagnostics["E"]

    @property
    def A(self) -> np.ndarray:
        return self.diagnostics["A"]

    def coupling_w1(self) -> np.ndarray:
        """∫|ΔX| + |ΔV| dπ₀, an upper bound on W1 at each snapshot."""
        return self.diagnostics["W1x"] + self.diagnostics["W1v"]

    def coupling_w2(self) -> np.ndarray:
        """(∫|ΔX|² + |ΔV|² dπ₀)^{1/2} = √(2D + 2E), an upper bound on W2."""
        return np.sqrt(2.0 * (self.D + self.E))


DIAGNOSTIC_COLUMNS = ("D", "E", "W1x", "W1v", "shifted", "energy1", "energy2", "A")


def pair_diagnostics(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    coupling: Coupling,
    t: float,
    force: Optional[ForceModel] = None,
) -> Dict[str, float]:
    """Coupling moments, energies and density maxima of one snapshot of a pair."""
    m = coupling.mass
    dx = minimal_image(mu.x[coupling.rows] - nu.x[coupling.cols])
    dv = mu.v[coupling.rows] - nu.v[coupling.cols]
    nx = np.linalg.norm(dx, axis=1)
    nv = np.linalg.norm(dv, axis=1)
    ns = np.linalg.norm(minimal_image(dx - t * dv), axis=1)

    out = {
        "D": 0.5 * float(np.dot(m, nx ** 2)),
        "E": 0.5 * float(np.dot(m, nv ** 2)),
        "W1x": float(np.dot(m, nx)),
        "W1v": float(np.dot(m, nv)),
        "shifted": float(np.dot(m, ns)),
    }
    if isinstance(force, PoissonForce):
        rho1, rho2 = force.deposit(mu), force.deposit(nu)
        out["energy1"] = energy(mu, force, force.solve(mu, rho1))
        out["energy2"] = energy(nu, force, force.solve(nu, rho2))
        out["A"] = force.density_max(mu, rho1) + force.density_max(nu, rho2)
    else:
        out["energy1"] = energy(mu, force)
        out["energy2"] = energy(nu, force)
        out["A"] = math.nan
    return out


def _time_grid(cfg: SimConfig, snap_every: int) -> Tuple[float, int, List[int]]:
    n_steps = int(math.ceil(cfg.t_end / cfg.dt - 1e-9)) if cfg.t_end > 0 else 0
    dt = cfg.t_end / n_steps if n_steps else cfg.dt
    if n_steps and abs(dt - cfg.dt) > 1e-12 * cfg.dt:
        logger.info(f"Adjusted dt from {cfg.dt:g} to {dt:g} to land on t_end={cfg.t_end:g}")
    marks = list(range(0, n_steps + 1, snap_every))
    if marks[-1] != n_steps:
        marks.append(n_steps)
    return dt, n_steps, marks


def simulate_pair(
    cfg: SimConfig,
    mu0: PhaseEnsemble,
    nu0: PhaseEnsemble,
    pi0: Coupling,
    snap_every: Optional[int] = None,
    threads: Optional[int] = None,
    coupling_label: str = "optimal",
    force: Optional[ForceModel] = None,
) -> PairedTrajectory:
    """
    Evolve μ₀ and ν₀ independently, each in its own self-consistent field,
    and record pair diagnostics under π₀ every `snap_every` steps (and at t_end).

    With threads ≥ 2 the two ensembles advance concurrently between
    snapshots; results do not depend on the thread count.

    Raises:
        StructuralError: π₀ does not couple μ₀ and ν₀.
    """
    check = validate_coupling(pi0, mu0, nu0)
    if not check.passed:
        raise StructuralError(f"initial coupling does not match the ensembles (residual {check.residual:.3e})")
    if mu0.dim != nu0.dim:
        raise ConfigError("ensembles must have the same dimension")

    snap_every = cfg.snap_every if snap_every is None else snap_every
    threads = settings.THREADS if threads is None else threads
    force = make_force(cfg) if force is None else force
    dt, n_steps, marks = _time_grid(cfg, snap_every)

    logger.info(
        f"Simulating pair: mode={cfg.mode.value}, N={mu0.size}/{nu0.size}, "
        f"steps={n_steps}, snapshots={len(marks)}, threads={threads}"
    )

    times: List[float] = []
    snapshots: List[Tuple[PhaseEnsemble, PhaseEnsemble]] = []
    rows: Dict[str, List[float]] = {k: [] for k in DIAGNOSTIC_COLUMNS}

    def record(step_index: int, mu: PhaseEnsemble, nu: PhaseEnsemble) -> None:
        t = step_index * dt if step_index < n_steps else cfg.t_end
        times.append(t)
        snapshots.append((mu, nu))
        for k, val in pair_diagnostics(mu, nu, pi0, t, force).items():
            rows[k].append(val)

    mu, nu = mu0, nu0
    record(0, mu, nu)
    with ThreadPoolExecutor(max_workers=max(1, min(threads, 2))) as pool:
        for prev, mark in zip(marks[:-1], marks[1:]):
            k = mark - prev
            if threads >= 2:
                fut_mu = pool.submit(advance, mu, force, dt, k)
                fut_nu = pool.submit(advance, nu, force, dt, k)
                mu, nu = fut_mu.result(), fut_nu.result()
            else:
                mu, nu = advance(mu, force, dt, k), advance(nu, force, dt, k)
            record(mark, mu, nu)

    return PairedTrajectory(
        times=np.asarray(times),
        snapshots=snapshots,
        coupling=pi0,
        diagnostics={k: np.asarray(v) for k, v in rows.items()},
        mode=cfg.mode,
        eps=cfg.eps,
        coupling_label=coupling_label,
    )


def write_trajectory(path: Union[str, Path], traj: PairedTrajectory) -> None:
    """CSV with one row per snapshot: time and every diagnostic."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("t",) + DIAGNOSTIC_COLUMNS)
        for i, t in enumerate(traj.times):
            writer.writerow([repr(float(t))] + [repr(float(traj.diagnostics[k][i])) for k in DIAGNOSTIC_COLUMNS])


def read_trajectory(path: Union[str, Path]) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Inverse of write_trajectory: snapshot times and diagnostic columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", *DIAGNOSTIC_COLUMNS} - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: missing trajectory columns {sorted(missing)}")
        data = [row for row in reader]
    times = np.array([float(r["t"]) for r in data])
    return times, {k: np.array([float(r[k]) for r in data]) for k in DIAGNOSTIC_COLUMNS}
