"""
Stability Bounds

Closed-form stability estimates for pairs of Vlasov solutions, their
hypothesis checks, the implicit Q(t) diagnostic and the bound-versus-
measurement verdicts.

W1 bounds (smooth kernel with ‖D²K‖_∞ = B):
- dobrushin:          e^{(1+2B)t} W1(0)
- improved_free_flow: (1+t) e^{(2/3)B((1+t)³−1)} W1(0)
- combined:           pointwise minimum of the two

W2 bounds (ε-scaled Vlasov-Poisson):
- loeper_classical:   c_d exp(log(W2(0)/c_d) e^{−Ct})
- loeper_improved:    (2 exp(−(√|log X| − (C_d/ε)∫A)²))^{1/2}
- R_of_t:             exp(−(√|log Q(0)| − (C_d/ε)∫A)²)
- gronwall:           e^{Ct} W2(0)
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import root_scalar

from kwass.config import settings
from kwass.exceptions import DomainError, GridMismatchError, KwassError
from kwass.measures import PhaseEnsemble
from kwass.models import BoundKind, Verdict
from kwass.transport import WeightFunction, implicit_weight_solve

logger = logging.getLogger(__name__)

INV_E = math.exp(-1.0)
CROSSOVER_SCAN = np.logspace(-6, 3, 4000)
CROSSOVER_XTOL = 1e-10
TIME_GRID_TOL = 1e-12


def _check_nonneg(**values) -> None:
    for name, val in values.items():
        arr = np.asarray(val, dtype=float)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"{name} must be finite and nonnegative (got {val})")


def dobrushin_bound(B: float, t, W10: float):
    """e^{(1+2B)t}·W10."""
    _check_nonneg(B=B, t=t, W10=W10)
    return np.exp((1.0 + 2.0 * B) * np.asarray(t, dtype=float)) * W10


def improved_bound(B: float, t, W10: float):
    """(1+t)·e^{(2/3)B((1+t)³−1)}·W10."""
    _check_nonneg(B=B, t=t, W10=W10)
    s = 1.0 + np.asarray(t, dtype=float)
    return s * np.exp((2.0 / 3.0) * B * (s ** 3 - 1.0)) * W10


def combined_bound(B: float, t, W10: float):
    return np.minimum(dobrushin_bound(B, t, W10), improved_bound(B, t, W10))


@dataclass(frozen=True)
class Crossover:
    B: float
    t_star: float
    found: bool


def _log_ratio(B: float, t: float) -> float:
    """
    log(improved/dobrushin), independent of W10.

    Expanded as (log(1+t) − t) + 2Bt² + (2/3)Bt³ so that the t-linear terms
    cancel exactly; the ratio is O(t³) near zero when B = 1/4.
    """
    return (math.log1p(t) - t) + 2.0 * B * t * t + (2.0 / 3.0) * B * t ** 3


def crossover_time(B: float) -> Crossover:
    """
    Smallest t* > 0 where the improved bound overtakes the Dobrushin bound.

    The log-ratio vanishes to second order at t = 0 with curvature 4B − 1,
    so a crossing exists exactly when B < 1/4. Otherwise the result has
    found=False.
    """
    if not 0.0 < B <= 1.0:
        raise DomainError(f"crossover_time needs 0 < B <= 1 (got {B})")
    h = np.array([_log_ratio(B, t) for t in CROSSOVER_SCAN])
    neg = h < 0.0
    change = np.nonzero(neg[:-1] & ~neg[1:])[0]
    if not np.any(neg) or change.size == 0:
        logger.warning(f"No crossover of the W1 bounds in (0, 1e3] for B={B:g}")
        return Crossover(B, math.nan, False)
    i = int(change[0])
    sol = root_scalar(
        lambda t: _log_ratio(B, t),
        bracket=[CROSSOVER_SCAN[i], CROSSOVER_SCAN[i + 1]],
        method="bisect",
        xtol=CROSSOVER_XTOL,
    )
    return Crossover(B, float(sol.root), True)


def loeper_classical_bound(W20: float, t, C: float = 1.0, c_d: float = 1.0):
    """
    c_d·exp(log(W20/c_d)·e^{−Ct}) for W20 < c_d.

    Raises:
        DomainError: W20 ≥ c_d, outside the small-data regime.
    """
    _check_nonneg(W20=W20, t=t)
    if W20 >= c_d:
        raise DomainError(f"classical W2 bound needs W2(0) < c_d (got {W20:g} >= {c_d:g})")
    t = np.asarray(t, dtype=float)
    if W20 == 0.0:
        return np.zeros_like(t)
    return c_d * np.exp(math.log(W20 / c_d) * np.exp(-C * t))


def gronwall_bound(W20: float, t, C: float = 1.0):
    """e^{Ct}·W20, the plain exponential W2 rate."""
    _check_nonneg(W20=W20, t=t)
    return np.exp(C * np.asarray(t, dtype=float)) * W20


@dataclass(frozen=True)
class LoeperImproved:
    """
    The improved W2 bound together with its hypotheses.

    `small_data` is ½ε⁻²W2(0)² ≤ c0; `main_hyp` compares
    √|log X| against (C_d/ε)∫A + √|log(ε/e)|. The value is computed even
    when a flag fails, and is then not rigorous.
    """

    value: float
    X: float
    small_data: bool
    main_hyp: bool
    hyp_lhs: float
    hyp_rhs: float

    @property
    def hypothesis_ok(self) -> bool:
        return self.small_data and self.main_hyp


def loeper_improved_bound(
    W20: float,
    t: float,
    eps: float,
    A_int: float,
    C_d: Optional[float] = None,
    c0: Optional[float] = None,
) -> LoeperImproved:
    """
    W2(t) ≤ (2·exp(−(√|log X| − (C_d/ε)·∫₀ᵗA)²))^{1/2}, X = ε⁻²W20²·|log(½ε⁻²W20²)|.

    Raises:
        DomainError: ε ∉ (0, 1], ½ε⁻²W20² ≥ 1 or X ∉ (0, 1).
    """
    C_d = settings.C_D if C_d is None else C_d
    c0 = settings.C0 if c0 is None else c0
    _check_nonneg(W20=W20, t=t, A_int=A_int)
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps must lie in (0, 1] (got {eps})")

    drift = (C_d / eps) * A_int
    floor = math.sqrt(abs(math.log(eps / math.e)))
    if W20 == 0.0:
        return LoeperImproved(0.0, 0.0, True, True, math.inf, drift + floor)

    tau = 0.5 * W20 ** 2 / eps ** 2
    if tau >= 1.0:
        raise DomainError(f"initial distance too large for the improved W2 bound (W20^2/(2 eps^2)={tau:.6g} >= 1)")
    X = 2.0 * tau * abs(math.log(tau))
    if not 0.0 < X < 1.0:
        raise DomainError(f"initial distance outside the improved W2 bound's range (X={X:.6g})")
    root = math.sqrt(abs(math.log(X)))
    value = math.sqrt(2.0 * math.exp(-((root - drift) ** 2)))
    return LoeperImproved(value, X, tau <= c0, root >= drift + floor, root, drift + floor)


@dataclass(frozen=True)
class ROfT:
    value: float
    sup: float
    window_ok: bool


def R_of_t(
    Q0: float,
    eps: float,
    A_int_fn: Union[Callable[[float], float], float],
    t: float,
    C_d: Optional[float] = None,
) -> ROfT:
    """
    R(t) = exp(−(√|log Q0| − (C_d/ε)∫₀ᵗA)²) and the window flag sup_{s≤t} R(s) ≤ ε/e.

    `A_int_fn` maps t to ∫₀ᵗA (a number is taken as that integral). While
    the bracket stays nonnegative R is nondecreasing, so the supremum is
    R(t); once it turns negative R has passed through 1.

    Raises:
        DomainError: Q0 ∉ (0, 1) or ε ∉ (0, 1].
    """
    C_d = settings.C_D if C_d is None else C_d
    if not 0.0 < Q0 < 1.0:
        raise DomainError(f"Q(0) must lie in (0, 1) (got {Q0})")
    if not 0.0 < eps <= 1.0:
        raise DomainError(f"eps must lie in (0, 1] (got {eps})")
    A_int = A_int_fn(t) if callable(A_int_fn) else float(A_int_fn)
    _check_nonneg(t=t, A_int=A_int)
    arg = math.sqrt(abs(math.log(Q0))) - (C_d / eps) * A_int
    value = Q0 if A_int == 0.0 else math.exp(-(arg ** 2))
    sup = value if arg >= 0.0 else 1.0
    return ROfT(value, sup, sup <= eps / math.e)


def phi_modulus(s: float) -> float:
    """s·log²s on (0, 1/e], s above; continuous at 1/e."""
    if not s > 0.0:
        raise DomainError(f"phi is defined for s > 0 (got {s})")
    if s <= INV_E:
        return s * math.log(s) ** 2
    return s


def integrate_A(times: np.ndarray, A: np.ndarray) -> np.ndarray:
    """∫₀ᵗA at every snapshot time, trapezoid rule."""
    return cumulative_trapezoid(A, times, initial=0.0)


@dataclass(frozen=True, eq=False)
class BoundCurve:
    """
    A bound sampled on snapshot times.

    `valid` marks times where the bound's hypotheses hold; verdicts only
    look at valid times. `params` records every constant used.
    """

    kind: BoundKind
    times: np.ndarray
    values: np.ndarray
    valid: np.ndarray
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def hypothesis_ok(self) -> bool:
        return bool(np.all(self.valid))


def _curve(kind: BoundKind, times, values, valid=None, **params) -> BoundCurve:
    times = np.asarray(times, dtype=float)
    values = np.broadcast_to(np.asarray(values, dtype=float), times.shape).copy()
    valid = np.ones(times.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return BoundCurve(kind, times, values, valid, params)


def w1_curve(kind: BoundKind, times, B: float, W10: float) -> BoundCurve:
    funcs = {
        BoundKind.DOBRUSHIN: dobrushin_bound,
        BoundKind.IMPROVED_FREE_FLOW: improved_bound,
        BoundKind.COMBINED: combined_bound,
    }
    return _curve(kind, times, funcs[kind](B, times, W10), B=B, W10=W10)


def loeper_classical_curve(times, W20: float, C: float = 1.0, c_d: float = 1.0) -> BoundCurve:
    if W20 >= c_d:
        logger.warning(f"W2(0)={W20:g} >= c_d={c_d:g}: classical W2 bound is vacuous")
        return _curve(BoundKind.LOEPER_CLASSICAL, times, math.nan, np.zeros(np.shape(times), bool), W20=W20, C=C, c_d=c_d)
    return _curve(BoundKind.LOEPER_CLASSICAL, times, loeper_classical_bound(W20, times, C, c_d), W20=W20, C=C, c_d=c_d)


def gronwall_curve(times, W20: float, C: float = 1.0) -> BoundCurve:
    return _curve(BoundKind.GRONWALL, times, gronwall_bound(W20, times, C), W20=W20, C=C)


def loeper_improved_curve(times, W20: float, eps: float, A_int: np.ndarray, C_d: Optional[float] = None, c0: Optional[float] = None) -> BoundCurve:
    C_d = settings.C_D if C_d is None else C_d
    c0 = settings.C0 if c0 is None else c0
    values, valid = [], []
    for t, a in zip(np.asarray(times, dtype=float), A_int):
        res = loeper_improved_bound(W20, t, eps, a, C_d, c0)
        values.append(res.value)
        valid.append(res.hypothesis_ok)
    if not all(valid):
        logger.warning(f"Improved W2 bound hypotheses fail at {valid.count(False)} of {len(valid)} times (eps={eps:g})")
    return _curve(BoundKind.LOEPER_IMPROVED, times, values, valid, W20=W20, eps=eps, C_d=C_d, c0=c0)


def r_curve(times, Q0: float, eps: float, A_int: np.ndarray, C_d: Optional[float] = None) -> BoundCurve:
    """R(t) on the snapshot times; valid where the running supremum of R stays below ε/e."""
    C_d = settings.C_D if C_d is None else C_d
    res = [R_of_t(Q0, eps, float(a), float(t), C_d) for t, a in zip(times, A_int)]
    sup = np.maximum.accumulate([r.sup for r in res])
    return _curve(BoundKind.R_OF_T, times, [r.value for r in res], sup <= eps / math.e, Q0=Q0, eps=eps, C_d=C_d)


def stability_horizon(
    kind: BoundKind,
    theta: float,
    level: float = 0.1,
    C: float = 1.0,
    c_d: float = 1.0,
    eps: float = 1.0,
    A: float = 2.0,
    C_d: Optional[float] = None,
) -> float:
    """
    First time at which a W2 bound started from W2(0) = θ reaches `level`.

    The improved bound uses a constant density bound A (∫A = A·t). The three
    horizons scale like |log θ| (gronwall), log|log θ| (loeper_classical)
    and |log θ|^{1/2} (loeper_improved).
    """
    C_d = settings.C_D if C_d is None else C_d
    if kind == BoundKind.GRONWALL:
        def g(t): return float(gronwall_bound(theta, t, C)) - level
    elif kind == BoundKind.LOEPER_CLASSICAL:
        if level >= c_d:
            raise DomainError("level must lie below c_d for the classical bound")
        def g(t): return float(loeper_classical_bound(theta, t, C, c_d)) - level
    elif kind == BoundKind.LOEPER_IMPROVED:
        def g(t): return loeper_improved_bound(theta, t, eps, A * t, C_d, 1.0).value - level
    else:
        raise DomainError(f"no horizon defined for bound kind '{kind.value}'")

    if g(0.0) >= 0.0:
        return 0.0
    hi = 1.0
    while g(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError(f"{kind.value} bound never reaches {level:g}")
    return float(root_scalar(g, bracket=[0.0, hi], method="brentq", xtol=1e-12).root)


@dataclass(frozen=True, eq=False)
class QSeries:
    """
    Q(t) per snapshot, from Q = ε⁻²|log Q|·D + E (or the capped weight).

    `defined` is False where the equation has no root (E ≥ 1 with the log
    weight); Q is NaN there. `proxy` is ½∫|ΔX|² + |ΔV|² dπ₀ = D + E.
    """

    times: np.ndarray
    Q: np.ndarray
    defined: np.ndarray
    degenerate: np.ndarray
    D: np.ndarray
    E: np.ndarray
    residual: np.ndarray
    eps: float

    @property
    def proxy(self) -> np.ndarray:
        return self.D + self.E

    def proxy_dominated(self) -> np.ndarray:
        """Where ε⁻²|log Q| ≥ 1, D + E ≤ Q must hold."""
        with np.errstate(divide="ignore", invalid="ignore"):
            active = self.defined & (self.Q > 0) & (np.abs(np.log(self.Q)) / self.eps ** 2 >= 1.0)
        return ~active | (self.proxy <= self.Q * (1.0 + 1e-12))

    def lipschitz_quotients(self, floor: float = 1e-6) -> np.ndarray:
        """|ΔQ/Δt| between consecutive defined snapshots with Q > floor."""
        ok = self.defined & (np.nan_to_num(self.Q) > floor)
        pairs = ok[:-1] & ok[1:] & (np.diff(self.times) > 0)
        dq = np.abs(np.diff(self.Q))[pairs]
        return dq / np.diff(self.times)[pairs]


def compute_Q_series(traj, eps: float, w: Optional[WeightFunction] = None) -> QSeries:
    """Q(t) at every snapshot via implicit_weight_solve(r=D(t), s=E(t), w)."""
    w = WeightFunction.log_eps(eps) if w is None else w
    D, E = np.asarray(traj.D, dtype=float), np.asarray(traj.E, dtype=float)
    n = D.size
    Q = np.full(n, math.nan)
    defined = np.zeros(n, dtype=bool)
    degenerate = np.zeros(n, dtype=bool)
    residual = np.full(n, math.nan)
    for i in range(n):
        try:
            sol = implicit_weight_solve(float(D[i]), float(E[i]), w)
        except KwassError as e:
            logger.debug(f"Q undefined at t={traj.times[i]:g}: {e.detail}")
            continue
        Q[i], defined[i], degenerate[i], residual[i] = sol.q, True, sol.degenerate, sol.residual
    if not np.all(defined):
        logger.warning(f"Q(t) undefined at {int(np.sum(~defined))} of {n} snapshots")
    return QSeries(np.asarray(traj.times, dtype=float), Q, defined, degenerate, D, E, residual, eps)


@dataclass(frozen=True, eq=False)
class FreeFlowQ:
    """
    W1 shifted functional Q(t) = ∫|(X₁−tV₁)−(X₂−tV₂)| + |V₁−V₂| dπ₀ and its checks.
    """

    times: np.ndarray
    Q: np.ndarray
    telescoping_ok: np.ndarray
    growth_bound: np.ndarray
    growth_ok: np.ndarray


def free_flow_q_series(traj, B: float = 0.0) -> FreeFlowQ:
    """
    Q(t) with the telescoping check ∫|ΔX| + |ΔV| dπ₀ ≤ (1+t)Q(t) and the
    growth check Q(t) ≤ e^{(2/3)B((1+t)³−1)}Q(0).
    """
    times = np.asarray(traj.times, dtype=float)
    Q = traj["shifted"] + traj["W1v"]
    w1 = traj["W1x"] + traj["W1v"]
    tol = 1e-9 * np.abs(Q)
    telescoping = w1 <= (1.0 + times) * Q + tol
    growth = np.exp((2.0 / 3.0) * B * ((1.0 + times) ** 3 - 1.0)) * Q[0]
    return FreeFlowQ(times, Q, telescoping, growth, Q <= growth + tol)


def bootstrap_allowance(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    measure: Callable[[PhaseEnsemble, PhaseEnsemble], float],
    value: float,
    resamples: Optional[int] = None,
    subsample: Optional[int] = None,
    factor: Optional[float] = None,
    seed: int = 0,
) -> float:
    """
    Relative Monte-Carlo allowance c·σ/value for a measured distance.

    Particles are resampled with replacement (index-paired when the two
    ensembles have equal size), on subsamples of size m ≤ N whose spread is
    scaled back by √(m/N).
    """
    resamples = settings.BOOTSTRAP_RESAMPLES if resamples is None else resamples
    subsample = settings.BOOTSTRAP_SUBSAMPLE if subsample is None else subsample
    factor = settings.BOOTSTRAP_FACTOR if factor is None else factor
    if value <= 0.0 or resamples < 2:
        return 0.0

    rng = np.random.default_rng(seed)
    n = max(mu.size, nu.size)
    m = min(subsample, mu.size, nu.size)
    paired = mu.size == nu.size
    draws = []
    for _ in range(resamples):
        i = rng.integers(0, mu.size, size=m)
        j = i if paired else rng.integers(0, nu.size, size=m)
        draws.append(measure(mu.resample(i), nu.resample(j)))
    sigma = float(np.std(draws, ddof=1)) * math.sqrt(m / n)
    return factor * sigma / value


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Measured distances against a bound curve at every snapshot."""

    times: np.ndarray
    measured: np.ndarray
    bound: BoundCurve
    margin: np.ndarray
    allowance: float
    ok: np.ndarray
    verdict: Verdict

    @property
    def passed(self) -> bool:
        return self.verdict == Verdict.PASS


def verify_bound(traj_or_times, measured: Sequence[float], curve: BoundCurve, allowance: float = 0.0) -> StabilityReport:
    """
    Pass iff measured ≤ bound·(1 + allowance) at every snapshot where the
    bound is valid.

    Raises:
        GridMismatchError: measurement and curve are on different times.
    """
    times = np.asarray(getattr(traj_or_times, "times", traj_or_times), dtype=float)
    measured = np.asarray(measured, dtype=float)
    if times.shape != measured.shape or times.shape != curve.times.shape:
        raise GridMismatchError(
            f"time grids differ: {times.size} snapshots, {measured.size} measurements, {curve.times.size} bound values"
        )
    if np.any(np.abs(times - curve.times) > TIME_GRID_TOL * np.maximum(1.0, np.abs(times))):
        raise GridMismatchError("bound curve is sampled on different times than the measurement")

    margin = curve.values - measured
    ok = ~curve.valid | (measured <= curve.values * (1.0 + allowance))
    verdict = Verdict.PASS if bool(np.all(ok)) else Verdict.FAIL
    if verdict == Verdict.FAIL:
        worst = int(np.argmin(np.where(curve.valid, margin, np.inf)))
        logger.info(
            f"{curve.kind.value} bound violated at t={times[worst]:g}: "
            f"measured {measured[worst]:.6e} > bound {curve.values[worst]:.6e}"
        )
    return StabilityReport(times, measured, curve, margin, allowance, ok, verdict)


def write_bounds(path: Union[str, Path], curves: List[BoundCurve]) -> None:
    """Long-format CSV `t,kind,value,hypothesis_ok`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "kind", "value", "hypothesis_ok"])
        for curve in curves:
            for t, val, ok in zip(curve.times, curve.values, curve.valid):
                writer.writerow([repr(float(t)), curve.kind.value, repr(float(val)), int(bool(ok))])


def write_reports(path: Union[str, Path], reports: List[StabilityReport], measure_names: List[str]) -> None:
    """CSV `t,kind,measure,measured,bound,margin,allowance,ok`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "kind", "measure", "measured", "bound", "margin", "allowance", "ok"])
        for rep, name in zip(reports, measure_names):
            for i, t in enumerate(rep.times):
                writer.writerow([
                    repr(float(t)), rep.bound.kind.value, name,
                    repr(float(rep.measured[i])), repr(float(rep.bound.values[i])),
                    repr(float(rep.margin[i])), repr(float(rep.allowance)), int(bool(rep.ok[i])),
                ])
