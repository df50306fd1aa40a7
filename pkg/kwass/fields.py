"""
Force Fields on the Torus

Two force models act on particle ensembles:
1. Smooth interaction kernels: F = ∇K ∗ ρ, summed exactly over all pairs.
2. The ε-scaled Poisson equation −ε²ΔU = ρ − 1, solved spectrally on a
   periodic grid with E = −∇U, coupled to particles by cloud-in-cell
   deposition and interpolation.

Also provides the numerical checks of the potential-difference estimates:
the L² bound by W₂ and the log-Lipschitz modulus of the field.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft

from kwass.exceptions import ConfigError, DomainError, NumericalError
from kwass.measures import CostSpec, PhaseEnsemble, minimal_image
from kwass.transport import optimal_transport

logger = logging.getLogger(__name__)

NEUTRALITY_FLAG = 1e-8
NEUTRALITY_WARN = 1e-6
LOEPER_ALLOWANCE = 0.05
MIN_GRID = 4

# Pairwise force sums are evaluated on blocks of at most this many (query, particle) pairs
PAIR_BLOCK = 4_000_000

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Values on the n^d nodes i/n of the unit torus, stored with shape (n,)*d."""

    n: int
    d: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.n,) * self.d:
            raise ValueError(f"grid values of shape {self.values.shape} do not match n={self.n}, d={self.d}")

    @classmethod
    def from_function(cls, func: Callable[..., np.ndarray], n: int, d: int = 1) -> "TorusGrid":
        """Sample func(x1, ..., xd) on the grid nodes."""
        axes = np.meshgrid(*([np.arange(n) / n] * d), indexing="ij")
        return cls(n, d, np.asarray(func(*axes), dtype=float) * np.ones((n,) * d))

    @classmethod
    def constant(cls, n: int, d: int = 1, value: float = 1.0) -> "TorusGrid":
        return cls(n, d, np.full((n,) * d, float(value)))

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (n^d, d), in the row-major order of `values`."""
        axes = np.meshgrid(*([np.arange(self.n) / self.n] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def is_density(self, tol: float = 1e-10) -> bool:
        return bool(np.all(self.values >= 0.0) and abs(self.mean - 1.0) <= tol)

    def to_ensemble(self, label: str = "") -> PhaseEnsemble:
        """Density grid as a node-supported ensemble at rest (weights ρ/n^d)."""
        nodes = self.nodes()
        weights = np.clip(self.values.ravel(), 0.0, None)
        return PhaseEnsemble.from_arrays(nodes, np.zeros_like(nodes), weights, label=label)


def write_grid(path: Union[str, Path], grid: TorusGrid) -> None:
    """CSV with columns `i1..id,value`."""
    idx = np.stack(np.unravel_index(np.arange(grid.values.size), grid.values.shape), axis=-1)
    data = np.hstack([idx.astype(float), grid.values.reshape(-1, 1)])
    header = ",".join([f"i{k + 1}" for k in range(grid.d)] + ["value"])
    fmt = ["%d"] * grid.d + ["%.17g"]
    np.savetxt(path, data, delimiter=",", fmt=fmt, header=header, comments="")


def read_grid(path: Union[str, Path]) -> TorusGrid:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1] - 1
    n = round(data.shape[0] ** (1.0 / d)) if d > 0 else 0
    if d < 1 or n ** d != data.shape[0]:
        raise ConfigError(f"{path}: not a square grid")
    values = np.zeros((n,) * d)
    values[tuple(data[:, :d].astype(int).T)] = data[:, d]
    return TorusGrid(n, d, values)


def _cic_stencil(x: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cloud-in-cell stencil: for each point, the 2^d surrounding node indices
    (row-major flat) and their multilinear weights, which sum to 1.
    """
    s = x * n
    base = np.floor(s).astype(np.int64)
    frac = s - base
    base %= n
    k, d = x.shape
    idx = np.empty((k, 2 ** d), dtype=np.int64)
    wts = np.empty((k, 2 ** d))
    for corner, offsets in enumerate(itertools.product((0, 1), repeat=d)):
        flat = np.zeros(k, dtype=np.int64)
        w = np.ones(k)
        for axis, o in enumerate(offsets):
            flat = flat * n + (base[:, axis] + o) % n
            w = w * (frac[:, axis] if o else 1.0 - frac[:, axis])
        idx[:, corner] = flat
        wts[:, corner] = w
    return idx, wts


def deposit_density(ens: PhaseEnsemble, n: int) -> TorusGrid:
    """
    Cloud-in-cell density of an ensemble on an n^d grid.

    Grid masses sum to the ensemble mass (1); the density is mass·n^d so that
    its grid mean is 1.
    """
    if n < MIN_GRID:
        raise DomainError(f"grid needs at least {MIN_GRID} cells per dimension (got {n})")
    d = ens.dim
    idx, wts = _cic_stencil(ens.x, n)
    mass = np.bincount(idx.ravel(), weights=(wts * ens.weights[:, None]).ravel(), minlength=n ** d)
    return TorusGrid(n, d, (mass * n ** d).reshape((n,) * d))


def interpolate(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cloud-in-cell interpolation of grid values at points x of shape (K, d)."""
    n = values.shape[0]
    idx, wts = _cic_stencil(np.atleast_2d(x), n)
    return np.sum(values.ravel()[idx] * wts, axis=1)


@dataclass(frozen=True)
class KernelSpec:
    """
    Interaction kernel K with ‖D²K‖_∞ = hessian_bound.

    `gradient` and `potential` act on displacements of shape (..., d);
    `potential` is optional and only feeds the interaction energy.
    """

    name: str
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian_bound: float
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: Dict[str, object] = field(default_factory=dict)

    def empirical_lipschitz(self, d: int = 1, pairs: int = 10_000, seed: int = 0) -> float:
        """Largest |∇K(x) − ∇K(y)| / |x − y| over random pairs on T^d."""
        rng = np.random.default_rng(seed)
        x = rng.random((pairs, d))
        y = (x + rng.normal(scale=rng.choice([1e-3, 1e-2, 1e-1], size=(pairs, 1)), size=(pairs, d))) % 1.0
        dist = np.linalg.norm(minimal_image(x - y), axis=-1)
        ok = dist > 1e-12
        diff = np.linalg.norm(self.gradient(x[ok]) - self.gradient(y[ok]), axis=-1)
        return float(np.max(diff / dist[ok]))


def zero_kernel() -> KernelSpec:
    return KernelSpec(
        "zero",
        gradient=lambda x: np.zeros_like(x, dtype=float),
        hessian_bound=0.0,
        potential=lambda x: np.zeros(np.shape(x)[:-1]),
    )


def sum_of_modes_kernel(coeffs: Sequence[float]) -> KernelSpec:
    """
    K(x) = −Σ_k Σ_m c_m cos(2πm x_k) / (2πm)², so that
    ∂_k K(x) = Σ_m c_m sin(2πm x_k) / (2πm) and ‖D²K‖_∞ = Σ|c_m|.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
        raise ConfigError("sum_of_modes needs a nonempty list of finite coefficients")
    m = np.arange(1, c.size + 1, dtype=float)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        phase = TWO_PI * x[..., None] * m
        return np.sum(c * np.sin(phase) / (TWO_PI * m), axis=-1)

    def potential(x):
        x = np.asarray(x, dtype=float)
        phase = TWO_PI * x[..., None] * m
        return -np.sum(c * np.cos(phase) / (TWO_PI * m) ** 2, axis=(-2, -1))

    return KernelSpec(
        "sum_of_modes",
        gradient=gradient,
        hessian_bound=float(np.sum(np.abs(c))),
        potential=potential,
        params={"coeffs": c.tolist()},
    )


def single_mode_kernel(B: float) -> KernelSpec:
    """∇K(x) = B·sin(2πx)/(2π) per coordinate."""
    if B < 0 or not math.isfinite(B):
        raise ConfigError(f"single_mode needs B >= 0 (got {B})")
    spec = sum_of_modes_kernel([B])
    return KernelSpec("single_mode", spec.gradient, float(B), spec.potential, {"B": float(B)})


KERNELS: Dict[str, Callable[..., KernelSpec]] = {
    "zero": zero_kernel,
    "single_mode": single_mode_kernel,
    "sum_of_modes": sum_of_modes_kernel,
}


def make_kernel(name: str, **params) -> KernelSpec:
    """Look up a kernel by registry name and build it with the given parameters."""
    try:
        factory = KERNELS[name]
    except KeyError:
        raise ConfigError(f"unknown kernel '{name}' (known: {', '.join(sorted(KERNELS))})")
    try:
        return factory(**params)
    except TypeError as e:
        raise ConfigError(f"kernel '{name}': {e}")


def kernel_force(ens: PhaseEnsemble, kernel: KernelSpec, x) -> np.ndarray:
    """
    Σ_j w_j ∇K(x − x_j) at query points x (shape (d,) or (K, d)).

    Exact pairwise sum with minimal-image displacements, evaluated in blocks
    with a fixed summation order.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    q = np.atleast_2d(x)
    out = np.empty_like(q)
    block = max(1, PAIR_BLOCK // max(ens.size, 1))
    for start in range(0, q.shape[0], block):
        chunk = q[start:start + block]
        disp = minimal_image(chunk[:, None, :] - ens.x[None, :, :])
        out[start:start + block] = np.einsum("j,kjd->kd", ens.weights, kernel.gradient(disp))
    return out[0] if single else out


def interaction_energy(ens: PhaseEnsemble, kernel: KernelSpec) -> Optional[float]:
    """½ΣΣ w_i w_j K(x_i − x_j), or None when the kernel has no potential."""
    if kernel.potential is None:
        return None
    total = 0.0
    block = max(1, PAIR_BLOCK // max(ens.size, 1))
    for start in range(0, ens.size, block):
        disp = minimal_image(ens.x[start:start + block, None, :] - ens.x[None, :, :])
        total += float(ens.weights[start:start + block] @ (kernel.potential(disp) @ ens.weights))
    return 0.5 * total


@dataclass(frozen=True, eq=False)
class FieldSolution:
    """
    Spectral solution of −ε²ΔU = ρ − 1.

    `field` holds the d components of E = −∇U on the grid. `neutrality_flag`
    is set when the input density mean differed from 1 by more than 1e-8 and
    had to be subtracted.
    """

    potential: TorusGrid
    field: Tuple[np.ndarray, ...]
    eps: float
    residual: float
    neutrality_deviation: float = 0.0
    neutrality_flag: bool = False

    @property
    def n(self) -> int:
        return self.potential.n

    @property
    def d(self) -> int:
        return self.potential.d

    def at(self, x: np.ndarray) -> np.ndarray:
        """E interpolated at points x of shape (K, d) with the deposition stencil."""
        x = np.atleast_2d(x)
        idx, wts = _cic_stencil(x, self.n)
        return np.stack([np.sum(c.ravel()[idx] * wts, axis=1) for c in self.field], axis=-1)

    def field_energy(self) -> float:
        """(ε²/2)∫|∇U|², by grid quadrature."""
        sq = sum(np.mean(c ** 2) for c in self.field)
        return 0.5 * self.eps ** 2 * float(sq)


def _wavenumbers(n: int, d: int) -> Tuple[np.ndarray, ...]:
    k = TWO_PI * fft.fftfreq(n, d=1.0 / n)
    return tuple(np.meshgrid(*([k] * d), indexing="ij"))


def _derivative_wavenumbers(n: int, d: int) -> Tuple[np.ndarray, ...]:
    """Same as _wavenumbers with the Nyquist mode zeroed for odd derivatives."""
    k = TWO_PI * fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return tuple(np.meshgrid(*([k] * d), indexing="ij"))


def poisson_solve(rho: TorusGrid, eps: float) -> FieldSolution:
    """
    Solve −ε²ΔU = ρ − 1 on the periodic grid.

    Û(k) = ρ̂(k) / (ε²|k|²) for k ≠ 0 and Û(0) = 0; E = −∇U by spectral
    differentiation. A density whose mean is not 1 is neutralized by
    subtracting its mean.

    Raises:
        DomainError: ε ≤ 0.
        NumericalError: non-finite density values.
    """
    if not eps > 0.0:
        raise DomainError(f"eps must be positive (got {eps})")
    if not np.all(np.isfinite(rho.values)):
        raise NumericalError("density grid contains NaN or infinite values")

    n, d = rho.n, rho.d
    mean = rho.mean
    deviation = abs(mean - 1.0)
    if deviation > NEUTRALITY_WARN:
        logger.warning(f"Density mean {mean:.12g} deviates from 1; subtracting the mean")
    source = rho.values - mean

    k = _wavenumbers(n, d)
    k2 = sum(kk ** 2 for kk in k)
    k2[(0,) * d] = 1.0
    u_hat = fft.fftn(source) / (eps ** 2 * k2)
    u_hat[(0,) * d] = 0.0

    potential = fft.ifftn(u_hat).real
    kd = _derivative_wavenumbers(n, d)
    field = tuple(-fft.ifftn(1j * kk * u_hat).real for kk in kd)

    k2[(0,) * d] = 0.0
    laplacian = fft.ifftn(eps ** 2 * k2 * u_hat).real
    residual = float(np.max(np.abs(laplacian - source)))

    return FieldSolution(
        potential=TorusGrid(n, d, potential),
        field=field,
        eps=eps,
        residual=residual,
        neutrality_deviation=deviation,
        neutrality_flag=deviation > NEUTRALITY_FLAG,
    )


@dataclass(frozen=True)
class LoeperCheck:
    lhs: float
    rhs: float
    passed: bool
    w2: float


def verify_loeper_L2(rho1: TorusGrid, rho2: TorusGrid, eps: float, allowance: float = LOEPER_ALLOWANCE) -> LoeperCheck:
    """
    Check ε²‖∇Ψ₁ − ∇Ψ₂‖_{L²} ≤ max(‖ρ₁‖_∞, ‖ρ₂‖_∞)^{1/2} · W₂(ρ₁, ρ₂).

    W₂ is computed between the node-supported ensembles of the two densities.
    The comparison accepts a relative discretization allowance (default 5%).
    """
    if (rho1.n, rho1.d) != (rho2.n, rho2.d):
        raise ConfigError("densities must live on the same grid")
    f1 = poisson_solve(rho1, eps)
    f2 = poisson_solve(rho2, eps)
    diff = sum(np.mean((a - b) ** 2) for a, b in zip(f1.field, f2.field))
    lhs = eps ** 2 * math.sqrt(float(diff))

    w2 = optimal_transport(rho1.to_ensemble("rho1"), rho2.to_ensemble("rho2"), CostSpec.plain(2.0)).value
    rhs = math.sqrt(max(float(rho1.values.max()), float(rho2.values.max()))) * w2
    passed = lhs <= rhs * (1.0 + allowance) + 1e-14
    logger.debug(f"L2 potential check: lhs={lhs:.6e} rhs={rhs:.6e} passed={passed}")
    return LoeperCheck(lhs, rhs, passed, w2)


@dataclass(frozen=True)
class ModulusEstimate:
    value: float
    degenerate: bool
    samples: int


def log_lipschitz_modulus(field: FieldSolution, rho: TorusGrid, samples: int = 2000, seed: int = 0) -> ModulusEstimate:
    """
    Empirical constant in ε²|∇Ψ(x) − ∇Ψ(y)| ≤ C|x − y| log(4√d/|x − y|) ‖ρ − 1‖_∞.

    Pairs are drawn with separations spread log-uniformly over [1e-4, 1/2).
    A neutral density (ρ ≡ 1) yields a zero field and the degenerate flag.
    """
    if samples < 1000:
        raise DomainError(f"at least 1000 samples are required (got {samples})")
    amplitude = float(np.max(np.abs(rho.values - 1.0)))
    if amplitude <= 1e-14:
        return ModulusEstimate(math.nan, True, samples)

    d = field.d
    rng = np.random.default_rng(seed)
    x = rng.random((samples, d))
    direction = rng.normal(size=(samples, d))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    r = np.exp(rng.uniform(math.log(1e-4), math.log(0.5), size=samples))
    y = (x + r[:, None] * direction) % 1.0
    dist = np.linalg.norm(minimal_image(x - y), axis=-1)

    de = np.linalg.norm(field.at(x) - field.at(y), axis=-1) * field.eps ** 2
    denom = dist * np.log(4.0 * math.sqrt(d) / dist) * amplitude
    ok = (dist > 0.0) & (dist < 1.0)
    return ModulusEstimate(float(np.max(de[ok] / denom[ok])), False, samples)
