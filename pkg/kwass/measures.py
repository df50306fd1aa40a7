"""
Phase-Space Measures

Geometry of the phase space T^d × R^d, weighted particle ensembles that
represent probability measures on it, couplings between two ensembles, and
the family of ground costs the transport module minimizes.

Conventions:
- Positions live on the unit flat torus, every coordinate in [0, 1).
- Position differences always go through the minimal image, so |Δx| is the
  geodesic distance on T^d.
- All value types are immutable after construction (arrays are made
  read-only), so they can be shared between threads freely.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from kwass.exceptions import ConfigError, StructuralError
from kwass.models import CostVariant

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
MARGINAL_TOL = 1e-10
PLAN_TRUNCATION = 1e-15

PathLike = Union[str, Path]


def wrap_positions(x) -> np.ndarray:
    """Map positions onto [0, 1) coordinate-wise."""
    x = np.asarray(x, dtype=float)
    wrapped = x - np.floor(x)
    # x - floor(x) rounds up to exactly 1.0 for tiny negative x
    return np.where(wrapped >= 1.0, 0.0, wrapped)


def minimal_image(d) -> np.ndarray:
    """Representative of a displacement with every component in [-1/2, 1/2)."""
    d = np.asarray(d, dtype=float)
    return d - np.floor(d + 0.5)


def torus_displacement(x, y) -> np.ndarray:
    """
    Signed displacement x - y of minimal absolute value per coordinate.

    Broadcasts over leading axes; the last axis is the dimension d.

    Example:
        torus_displacement([0.1], [0.9]) -> [0.2]   (not -0.8)
    """
    return minimal_image(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))


def torus_distance(x, y) -> np.ndarray:
    """Geodesic distance on T^d."""
    return np.linalg.norm(np.atleast_1d(torus_displacement(x, y)), axis=-1)


@dataclass(frozen=True)
class PhasePoint:
    """A single point (x, v) of phase space."""

    x: Tuple[float, ...]
    v: Tuple[float, ...]

    def __post_init__(self):
        if len(self.x) != len(self.v):
            raise ValueError("position and velocity must have the same dimension")
        if any(not (0.0 <= c < 1.0) for c in self.x):
            raise ValueError(f"torus coordinates must lie in [0, 1): {self.x}")
        if any(not math.isfinite(c) for c in self.v):
            raise ValueError(f"velocity must be finite: {self.v}")

    @classmethod
    def of(cls, x, v) -> "PhasePoint":
        """Build from scalars or sequences; positions are wrapped onto the torus."""
        xs = tuple(float(c) for c in np.atleast_1d(wrap_positions(x)))
        vs = tuple(float(c) for c in np.atleast_1d(np.asarray(v, dtype=float)))
        return cls(xs, vs)


class CostSpec(BaseModel):
    """
    Parameterized phase-space ground cost for exponent p ≥ 1.

    Use the named constructors rather than filling fields by hand:

        CostSpec.plain(p=2)
        CostSpec.anisotropic(lam=10, p=1)
        CostSpec.quadratic(a=2, b=0.5, c=1, p=2)
        CostSpec.shifted(t=0.5, p=1)

    The shifted variant also takes a weight λ on the shifted position term,
    which combines it with the anisotropic one.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    p: float = Field(1.0, ge=1.0)
    variant: CostVariant = CostVariant.PLAIN
    lam: float = Field(1.0, gt=0.0)
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    t: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_quadratic_form(self) -> "CostSpec":
        if self.variant == CostVariant.QUADRATIC:
            if self.a <= 0 or self.c <= 0 or not math.sqrt(self.a * self.c) > abs(self.b):
                raise ValueError(
                    f"quadratic cost needs a, c > 0 and sqrt(ac) > |b| "
                    f"(got a={self.a}, b={self.b}, c={self.c})"
                )
        return self

    @classmethod
    def plain(cls, p: float = 1.0) -> "CostSpec":
        return cls(p=p)

    @classmethod
    def anisotropic(cls, lam: float, p: float = 1.0) -> "CostSpec":
        return cls(p=p, variant=CostVariant.ANISOTROPIC, lam=lam)

    @classmethod
    def quadratic(cls, a: float, b: float, c: float, p: float = 2.0) -> "CostSpec":
        return cls(p=p, variant=CostVariant.QUADRATIC, a=a, b=b, c=c)

    @classmethod
    def shifted(cls, t: float, p: float = 1.0, lam: float = 1.0) -> "CostSpec":
        return cls(p=p, variant=CostVariant.SHIFTED, t=t, lam=lam)

    def params_label(self) -> str:
        """Compact parameter string for CSV output."""
        if self.variant == CostVariant.ANISOTROPIC:
            return f"lam={self.lam:g}"
        if self.variant == CostVariant.QUADRATIC:
            return f"a={self.a:g};b={self.b:g};c={self.c:g}"
        if self.variant == CostVariant.SHIFTED:
            return f"t={self.t:g};lam={self.lam:g}"
        return ""


def cost_from_differences(dx, dv, spec: CostSpec) -> np.ndarray:
    """
    Evaluate the cost integrand from raw differences.

    Args:
        dx: x1 - x2, not yet reduced to the minimal image, shape (..., d)
        dv: v1 - v2, shape (..., d)
        spec: the cost to evaluate

    Returns:
        Array of shape (...) of nonnegative costs.
    """
    dx = np.asarray(dx, dtype=float)
    dv = np.asarray(dv, dtype=float)
    p = spec.p
    nv = np.linalg.norm(dv, axis=-1)

    if spec.variant == CostVariant.QUADRATIC:
        wx = minimal_image(dx)
        form = (
            spec.a * np.sum(wx * wx, axis=-1)
            + 2.0 * spec.b * np.sum(wx * dv, axis=-1)
            + spec.c * np.sum(dv * dv, axis=-1)
        )
        return np.power(np.maximum(form, 0.0), p / 2.0)

    if spec.variant == CostVariant.SHIFTED:
        # Minimal image of the shifted displacement over all integer translates
        nx = np.linalg.norm(minimal_image(dx - spec.t * dv), axis=-1)
    else:
        nx = np.linalg.norm(minimal_image(dx), axis=-1)

    lam = 1.0 if spec.variant == CostVariant.PLAIN else spec.lam
    return lam * np.power(nx, p) + np.power(nv, p)


def phase_cost(pt1: PhasePoint, pt2: PhasePoint, spec: CostSpec) -> float:
    """Cost between two phase points under `spec`."""
    dx = np.asarray(pt1.x) - np.asarray(pt2.x)
    dv = np.asarray(pt1.v) - np.asarray(pt2.v)
    return float(cost_from_differences(dx, dv, spec))


@dataclass(frozen=True, eq=False)
class PhaseEnsemble:
    """
    Weighted particle cloud on T^d × R^d representing a probability measure.

    Build with `PhaseEnsemble.from_arrays`, which wraps positions, drops
    zero-weight particles and normalizes the weights. The raw constructor only
    validates.
    """

    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape != self.v.shape:
            raise ValueError(f"positions {self.x.shape} and velocities {self.v.shape} must be (N, d)")
        if self.weights.shape != (self.x.shape[0],):
            raise ValueError("one weight per particle is required")
        if self.x.shape[0] == 0:
            raise ValueError("ensemble must not be empty")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("positions and velocities must be finite")
        if np.any(self.x < 0.0) or np.any(self.x >= 1.0):
            raise ValueError("positions must lie in [0, 1)")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")
        total = float(np.sum(self.weights))
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        for arr in (self.x, self.v, self.weights):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, x, v, weights=None, label: str = "") -> "PhaseEnsemble":
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if weights is None:
            weights = np.full(x.shape[0], 1.0 / max(x.shape[0], 1))
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")

        keep = weights > 0.0
        if not np.all(keep):
            logger.debug(f"Dropping {int(np.sum(~keep))} zero-weight particles")
        x, v, weights = x[keep], v[keep], weights[keep]
        weights = weights / np.sum(weights)
        return cls(wrap_positions(x).copy(), v.copy(), weights, label)

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def point(self, i: int) -> PhasePoint:
        return PhasePoint(tuple(self.x[i].tolist()), tuple(self.v[i].tolist()))

    def with_state(self, x, v) -> "PhaseEnsemble":
        """Same particles and weights, new positions (wrapped) and velocities."""
        return PhaseEnsemble(wrap_positions(x), np.array(v, dtype=float), self.weights, self.label)

    def resample(self, indices) -> "PhaseEnsemble":
        """Ensemble made of the particles at `indices`, duplicates allowed."""
        idx = np.asarray(indices, dtype=int)
        return PhaseEnsemble.from_arrays(self.x[idx], self.v[idx], self.weights[idx], self.label)


def cost_matrix(mu: PhaseEnsemble, nu: PhaseEnsemble, spec: CostSpec) -> np.ndarray:
    """Dense (N, M) matrix of pairwise costs between two ensembles."""
    dx = mu.x[:, None, :] - nu.x[None, :, :]
    dv = mu.v[:, None, :] - nu.v[None, :, :]
    return cost_from_differences(dx, dv, spec)


@dataclass(frozen=True, eq=False)
class Coupling:
    """
    Sparse transport plan: entry k moves `mass[k]` from source particle
    `rows[k]` to target particle `cols[k]`.
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    n_source: int
    n_target: int
    source: str = "mu"
    target: str = "nu"

    def __post_init__(self):
        if not (self.rows.shape == self.cols.shape == self.mass.shape):
            raise StructuralError("coupling entries must have matching lengths")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= self.n_source):
            raise StructuralError(f"source index out of range for {self.n_source} particles")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= self.n_target):
            raise StructuralError(f"target index out of range for {self.n_target} particles")
        if np.any(self.mass <= 0.0):
            raise StructuralError("coupling masses must be positive")
        total = float(np.sum(self.mass))
        if abs(total - 1.0) > WEIGHT_TOL:
            raise StructuralError(f"coupling mass must sum to 1 (got {total!r})")
        for arr in (self.rows, self.cols, self.mass):
            arr.setflags(write=False)

    @classmethod
    def from_entries(cls, rows, cols, mass, n_source: int, n_target: int, **labels) -> "Coupling":
        return cls(
            np.asarray(rows, dtype=np.int64),
            np.asarray(cols, dtype=np.int64),
            np.asarray(mass, dtype=float),
            int(n_source),
            int(n_target),
            **labels,
        )

    @classmethod
    def diagonal(cls, mu: PhaseEnsemble, nu: Optional[PhaseEnsemble] = None) -> "Coupling":
        """Index pairing i -> i carrying the source weights."""
        nu = mu if nu is None else nu
        if mu.size != nu.size:
            raise StructuralError("diagonal coupling needs ensembles of equal size")
        idx = np.arange(mu.size)
        return cls.from_entries(idx, idx, mu.weights, mu.size, nu.size)

    @classmethod
    def product(cls, mu: PhaseEnsemble, nu: PhaseEnsemble) -> "Coupling":
        rows, cols = np.meshgrid(np.arange(mu.size), np.arange(nu.size), indexing="ij")
        mass = np.outer(mu.weights, nu.weights)
        return cls.from_entries(rows.ravel(), cols.ravel(), mass.ravel() / mass.sum(), mu.size, nu.size)

    @classmethod
    def from_dense(cls, plan, truncate: float = PLAN_TRUNCATION) -> "Coupling":
        """Sparsify a dense plan: entries below `truncate` are dropped, the rest renormalized."""
        plan = np.asarray(plan, dtype=float)
        rows, cols = np.nonzero(plan > truncate)
        mass = plan[rows, cols]
        return cls.from_entries(rows, cols, mass / mass.sum(), plan.shape[0], plan.shape[1])

    @property
    def nnz(self) -> int:
        return int(self.mass.size)

    def marginals(self) -> Tuple[np.ndarray, np.ndarray]:
        row_sums = np.bincount(self.rows, weights=self.mass, minlength=self.n_source)
        col_sums = np.bincount(self.cols, weights=self.mass, minlength=self.n_target)
        return row_sums, col_sums

    def to_dense(self) -> np.ndarray:
        plan = np.zeros((self.n_source, self.n_target))
        np.add.at(plan, (self.rows, self.cols), self.mass)
        return plan

    def transport_cost(self, mu: PhaseEnsemble, nu: PhaseEnsemble, spec: CostSpec) -> float:
        """∫ c dπ, evaluated entry by entry."""
        dx = mu.x[self.rows] - nu.x[self.cols]
        dv = mu.v[self.rows] - nu.v[self.cols]
        return float(np.dot(self.mass, cost_from_differences(dx, dv, spec)))


@dataclass(frozen=True)
class CouplingCheck:
    passed: bool
    residual: float
    mass_error: float


def validate_coupling(c: Coupling, mu: PhaseEnsemble, nu: PhaseEnsemble) -> CouplingCheck:
    """
    Check that `c` has marginals `mu` and `nu`.

    Raises:
        StructuralError: entries point outside the two ensembles. This is
            reported separately from a marginal mismatch, which only fails
            the check.
    """
    if c.n_source != mu.size or c.n_target != nu.size:
        raise StructuralError(
            f"coupling is {c.n_source}x{c.n_target} but ensembles have {mu.size} and {nu.size} particles"
        )
    row_sums, col_sums = c.marginals()
    residual = max(
        float(np.max(np.abs(row_sums - mu.weights))),
        float(np.max(np.abs(col_sums - nu.weights))),
    )
    mass_error = abs(float(np.sum(c.mass)) - 1.0)
    return CouplingCheck(
        passed=residual < MARGINAL_TOL and mass_error <= WEIGHT_TOL,
        residual=residual,
        mass_error=mass_error,
    )


def _ensemble_header(d: int) -> Sequence[str]:
    return [f"x{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)] + ["w"]


def read_ensemble(path: PathLike, label: Optional[str] = None) -> PhaseEnsemble:
    """
    Load an ensemble CSV with header `x1..xd,v1..vd,w`.

    Weights are normalized and positions wrapped into [0, 1).
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), None)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}")
    if not header:
        raise ConfigError(f"{path}: empty ensemble file")
    header = [h.strip() for h in header]
    d = sum(1 for h in header if h.startswith("x"))
    if d == 0 or list(header) != list(_ensemble_header(d)):
        raise ConfigError(f"{path}: expected header {','.join(_ensemble_header(max(d, 1)))}")

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] == 0:
            raise ConfigError(f"{path}: no particles")
        return PhaseEnsemble.from_arrays(
            data[:, :d], data[:, d:2 * d], data[:, 2 * d], label=label or path.stem
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")


def write_ensemble(path: PathLike, ens: PhaseEnsemble) -> None:
    data = np.hstack([ens.x, ens.v, ens.weights[:, None]])
    np.savetxt(
        path, data, delimiter=",", fmt="%.17g",
        header=",".join(_ensemble_header(ens.dim)), comments="",
    )
