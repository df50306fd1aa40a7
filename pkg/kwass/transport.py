"""
Optimal Transport Solvers

Discrete optimal transport between two PhaseEnsembles for every CostSpec
variant, the Kantorovich dual lower bound for W1, and the nonlinear distance
W_{Φ,p} defined through an implicit weight.

Solvers:
1. Exact: assignment fast path (scipy) for equal-size uniform ensembles,
   ties broken towards the lexicographically smallest assignment, otherwise
   the network simplex from POT.
2. Entropic: log-domain Sinkhorn from POT, the plan rounded onto the set of
   couplings so that its marginals are exact.

Every solver returns a TransportResult whose plan passes validate_coupling.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
import ot
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import linear_sum_assignment, root_scalar

from kwass.config import settings
from kwass.exceptions import CapacityError, DomainError, LipschitzViolation, NoRootError, NumericalError
from kwass.measures import (
    CostSpec,
    Coupling,
    PhaseEnsemble,
    cost_from_differences,
    cost_matrix,
    minimal_image,
)
from kwass.models import SolverKind, WeightVariant

logger = logging.getLogger(__name__)

LIPSCHITZ_SLACK = 1e-9
INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class SolverInfo:
    kind: SolverKind
    eta: Optional[float] = None
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


@dataclass(frozen=True, eq=False)
class TransportResult:
    """
    Outcome of one transport solve.

    `raw_objective` is ∫c dπ for the plan; `value` is its p-th root. For the
    quadratic variant the cost already carries the (p/2) power, so the same
    root applies.
    """

    plan: Coupling
    value: float
    raw_objective: float
    solver: SolverInfo
    spec: CostSpec

    @property
    def converged(self) -> bool:
        return self.solver.converged


def _result(plan: Coupling, C: np.ndarray, spec: CostSpec, info: SolverInfo) -> TransportResult:
    raw = float(np.dot(plan.mass, C[plan.rows, plan.cols]))
    raw = max(raw, 0.0)
    return TransportResult(plan, raw ** (1.0 / spec.p), raw, info, spec)


def _alternating_path(
    tight: list, sigma: np.ndarray, inv: np.ndarray, fixed: np.ndarray, start: int, taken: int, target: int
) -> Optional[list]:
    """
    Breadth-first search for rows that can shift along tight edges so that
    `start` leaves column `taken` and some row ends on `target`.

    Returns the new (row, column) pairs, or None when no such path exists.
    """
    parent = {taken: -1}
    queue = deque([start])
    seen = {start}
    while queue:
        r = queue.popleft()
        for c in tight[r]:
            if fixed[c] or c in parent:
                continue
            parent[c] = r
            if c == target:
                moves = []
                while True:
                    row = parent[c]
                    moves.append((row, c))
                    if row == start:
                        return moves
                    c = sigma[row]
            nxt = inv[c]
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return None


def _lexicographic_assignment(C: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Among all optimal assignments pick the one whose column sequence
    (σ(0), σ(1), ...) is lexicographically smallest.

    Column potentials come from Bellman-Ford on the residual graph of the
    given optimum; every optimal assignment then uses only edges with zero
    reduced cost. Rows are fixed in order, each to the smallest tight column
    that still completes to a perfect matching.
    """
    n = len(cols)
    rows = np.arange(n)
    sigma = np.asarray(cols, dtype=int).copy()
    base = C[rows, sigma]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(C))))

    pi = np.zeros(n)
    for _ in range(n):
        cand = ((pi[sigma] - base)[:, None] + C).min(axis=0)
        better = cand < pi - tol
        if not better.any():
            break
        pi = np.where(better, cand, pi)

    reduced = C - base[:, None] + pi[sigma][:, None] - pi[None, :]
    mask = reduced <= 2.0 * tol
    if int(mask.sum()) == n:
        return sigma

    tight = [np.flatnonzero(mask[i]) for i in range(n)]
    inv = np.empty(n, dtype=int)
    inv[sigma] = rows
    fixed = np.zeros(n, dtype=bool)
    for i in range(n):
        target = sigma[i]
        for j in tight[i]:
            if j >= target:
                break
            if fixed[j]:
                continue
            moves = _alternating_path(tight, sigma, inv, fixed, int(inv[j]), int(j), int(target))
            if moves is None:
                continue
            sigma[i], inv[j] = j, i
            for r, c in moves:
                sigma[r], inv[c] = c, r
            break
        fixed[sigma[i]] = True

    if C[rows, sigma].sum() > base.sum() + 2.0 * n * tol:
        logger.debug("lexicographic refinement lost optimality; keeping the solver's assignment")
        return np.asarray(cols, dtype=int)
    return sigma


def solve_exact(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    spec: CostSpec,
    max_points: Optional[int] = None,
) -> TransportResult:
    """
    Solve the discrete transport problem exactly.

    Args:
        mu, nu: source and target ensembles
        spec: ground cost
        max_points: capacity cap, defaults to settings.MAX_EXACT_POINTS

    Raises:
        CapacityError: either ensemble is larger than the cap; use
            solve_entropic for such sizes.
    """
    cap = settings.MAX_EXACT_POINTS if max_points is None else max_points
    if max(mu.size, nu.size) > cap:
        raise CapacityError(
            f"exact transport limited to {cap} points (got {mu.size}x{nu.size}); "
            f"use the entropic solver"
        )

    C = cost_matrix(mu, nu, spec)
    if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
        rows, cols = linear_sum_assignment(C)
        cols = _lexicographic_assignment(C, cols)
        plan = Coupling.from_entries(rows, cols, mu.weights[rows], mu.size, nu.size)
    else:
        dense = ot.emd(mu.weights, nu.weights, C, numItermax=10_000_000)
        plan = Coupling.from_dense(dense)
    return _result(plan, C, spec, SolverInfo(SolverKind.EXACT))


def _round_to_couplings(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto Π(a, b): scale rows and columns down, then add the rank-one remainder."""
    row = P.sum(axis=1)
    P = P * np.minimum(np.divide(a, row, out=np.ones_like(a), where=row > 0), 1.0)[:, None]
    col = P.sum(axis=0)
    P = P * np.minimum(np.divide(b, col, out=np.ones_like(b), where=col > 0), 1.0)[None, :]
    err_a = np.maximum(a - P.sum(axis=1), 0.0)
    err_b = np.maximum(b - P.sum(axis=0), 0.0)
    total = err_a.sum()
    if total > 0.0:
        P = P + np.outer(err_a, err_b) / total
    return P


def solve_entropic(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    spec: CostSpec,
    eta: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> TransportResult:
    """
    Entropically regularized transport via POT's log-domain Sinkhorn.

    The log-domain iteration keeps η down to 1e-4 finite. Convergence is
    judged on the largest marginal residual of the returned plan, before it
    is rounded onto Π(μ, ν). A solve that hits `max_iter` is returned with
    `converged=False` and logged.
    """
    eta = settings.ENTROPIC_ETA if eta is None else eta
    tol = settings.ENTROPIC_TOL if tol is None else tol
    max_iter = settings.ENTROPIC_MAX_ITER if max_iter is None else max_iter
    if eta <= 0 or tol <= 0:
        raise DomainError(f"entropic solver needs eta > 0 and tol > 0 (got {eta}, {tol})")

    C = cost_matrix(mu, nu, spec)
    a, b = mu.weights, nu.weights
    P, log = ot.bregman.sinkhorn_log(a, b, C, eta, numItermax=max_iter, stopThr=tol, log=True, warn=False)
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        raise NumericalError("entropic plan overflowed; increase eta")

    iterations = int(log.get("niter", max_iter - 1)) + 1
    residual = float(max(np.max(np.abs(P.sum(axis=1) - a)), np.max(np.abs(P.sum(axis=0) - b))))
    converged = residual <= tol
    if not converged:
        logger.warning(
            f"Sinkhorn did not reach tol={tol:g} in {iterations} iterations "
            f"(eta={eta:g}, residual={residual:.3e})"
        )

    plan = Coupling.from_dense(_round_to_couplings(P, a, b))
    info = SolverInfo(SolverKind.ENTROPIC, eta=eta, iterations=iterations, residual=residual, converged=converged)
    return _result(plan, C, spec, info)


def optimal_transport(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    spec: CostSpec,
    solver: Optional[SolverKind] = None,
    eta: Optional[float] = None,
    exact_limit: Optional[int] = None,
) -> TransportResult:
    """Dispatch to solve_exact when the sizes allow it, else to solve_entropic."""
    limit = settings.MAX_EXACT_POINTS if exact_limit is None else exact_limit
    if solver is None:
        solver = SolverKind.EXACT if max(mu.size, nu.size) <= limit else SolverKind.ENTROPIC
    if solver == SolverKind.ENTROPIC:
        return solve_entropic(mu, nu, spec, eta=eta)
    return solve_exact(mu, nu, spec)


def wasserstein(mu: PhaseEnsemble, nu: PhaseEnsemble, spec: CostSpec, **kwargs) -> float:
    """W for the given cost (plain, anisotropic, quadratic or shifted)."""
    return optimal_transport(mu, nu, spec, **kwargs).value


def kantorovich_lower_bound(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    psi: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_pairs: int = 4096,
    seed: int = 0,
) -> float:
    """
    ∫ψ d(μ − ν) for a 1-Lipschitz test function ψ(x, v).

    ψ is evaluated on arrays of shape (K, d) and must return shape (K,). Its
    Lipschitz constant with respect to |Δx| + |Δv| (geodesic in x) is
    estimated on random pairs drawn around both supports, far apart and close
    together.

    Raises:
        LipschitzViolation: the empirical constant exceeds 1 + 1e-9.
    """
    rng = np.random.default_rng(seed)
    x_pool = np.vstack([mu.x, nu.x])
    v_pool = np.vstack([mu.v, nu.v])
    d = mu.dim
    v_lo, v_hi = v_pool.min() - 1.0, v_pool.max() + 1.0

    half = n_pairs // 2
    idx = rng.integers(0, x_pool.shape[0], size=half)
    x1 = np.vstack([x_pool[idx], rng.random((half, d))])
    v1 = np.vstack([v_pool[idx], rng.uniform(v_lo, v_hi, size=(half, d))])
    far = rng.permutation(x1.shape[0])
    near = rng.normal(scale=1e-3, size=(2, x1.shape[0], d))
    x2 = np.vstack([x1[far], x1 + near[0]]) % 1.0
    v2 = np.vstack([v1[far], v1 + near[1]])
    x1 = np.vstack([x1, x1])
    v1 = np.vstack([v1, v1])

    dist = cost_from_differences(x1 - x2, v1 - v2, CostSpec.plain(1.0))
    ok = dist > 1e-14
    slopes = np.abs(psi(x1[ok], v1[ok]) - psi(x2[ok], v2[ok])) / dist[ok]
    lip = float(np.max(slopes)) if slopes.size else 0.0
    if lip > 1.0 + LIPSCHITZ_SLACK:
        raise LipschitzViolation(f"test function has empirical Lipschitz constant {lip:.12g} > 1")

    return float(np.dot(mu.weights, psi(mu.x, mu.v)) - np.dot(nu.weights, psi(nu.x, nu.v)))


class WeightFunction(BaseModel):
    """
    Decreasing weight Φ for the nonlinear distance.

    - log_eps:    Φ(s) = ε⁻²|log s| on (0, 1]
    - capped_phi: Φ(s) = ε⁻²|log s| for s ≤ 1/e, ε⁻² e⁻¹ s⁻¹ above; C¹ at 1/e
      and defined on all of (0, ∞)
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: WeightVariant = WeightVariant.LOG_EPS
    eps: float = Field(1.0, gt=0.0)

    @classmethod
    def log_eps(cls, eps: float = 1.0) -> "WeightFunction":
        return cls(variant=WeightVariant.LOG_EPS, eps=eps)

    @classmethod
    def capped_phi(cls, eps: float = 1.0) -> "WeightFunction":
        return cls(variant=WeightVariant.CAPPED_PHI, eps=eps)

    @property
    def scale(self) -> float:
        return self.eps ** -2

    def _check(self, s: float) -> None:
        if not s > 0.0:
            raise DomainError(f"weight is defined for s > 0 only (got {s})")
        if self.variant == WeightVariant.LOG_EPS and s > 1.0:
            raise DomainError(f"log weight is defined on (0, 1] only (got {s})")

    def __call__(self, s: float) -> float:
        self._check(s)
        if self.variant == WeightVariant.CAPPED_PHI and s > INV_E:
            return self.scale * INV_E / s
        return self.scale * abs(math.log(s))

    def derivative(self, s: float) -> float:
        self._check(s)
        if self.variant == WeightVariant.CAPPED_PHI and s > INV_E:
            return -self.scale * INV_E / (s * s)
        return -self.scale / s


@dataclass(frozen=True)
class ImplicitSolution:
    q: float
    degenerate: bool = False
    iterations: int = 0
    residual: float = 0.0


def implicit_weight_solve(r: float, s: float, w: WeightFunction) -> ImplicitSolution:
    """
    Solve q − Φ(q)·r = s for q.

    For the log weight this is Q = ε⁻²|log Q|·D + E, uniquely solvable in
    (0, 1) exactly when s < 1. The capped weight is decreasing on (0, ∞),
    so a root always exists. In both cases q ≥ s and q grows with r and s.

    Raises:
        NoRootError: log weight with s ≥ 1.
        DomainError: negative moments.
    """
    if not (math.isfinite(r) and math.isfinite(s)) or r < 0 or s < 0:
        raise DomainError(f"moments must be finite and nonnegative (got r={r}, s={s})")
    if w.variant == WeightVariant.LOG_EPS and s >= 1.0:
        raise NoRootError(f"no root in (0, 1) for s={s} >= 1")
    if r == 0.0 and s == 0.0:
        return ImplicitSolution(0.0, degenerate=True)
    if r == 0.0:
        return ImplicitSolution(float(s))

    def F(q: float) -> float:
        return q - w(q) * r - s

    if s > 0.0:
        lo = s
    else:
        lo = 0.5
        while F(lo) >= 0.0:
            lo *= 0.5
            if lo < 1e-300:
                raise NumericalError(f"could not bracket the root for r={r}, s={s}")

    if w.variant == WeightVariant.LOG_EPS:
        hi = 1.0
    else:
        hi = s + w(s) * r if s > 0.0 else 1.0
        while F(hi) <= 0.0:
            hi *= 2.0

    if F(lo) == 0.0:
        return ImplicitSolution(lo)
    sol = root_scalar(F, bracket=[lo, hi], method="brentq", xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if not sol.converged:
        raise NumericalError(f"root finding failed for r={r}, s={s}: {sol.flag}")
    q = float(sol.root)
    return ImplicitSolution(q, iterations=sol.iterations, residual=abs(F(q)))


def coupling_moments(plan: Coupling, mu: PhaseEnsemble, nu: PhaseEnsemble, p: float) -> Tuple[float, float]:
    """(∫|Δx|^p dπ, ∫|Δv|^p dπ) with Δx taken as the minimal image."""
    dx = minimal_image(mu.x[plan.rows] - nu.x[plan.cols])
    dv = mu.v[plan.rows] - nu.v[plan.cols]
    mx = float(np.dot(plan.mass, np.power(np.linalg.norm(dx, axis=-1), p)))
    mv = float(np.dot(plan.mass, np.power(np.linalg.norm(dv, axis=-1), p)))
    return mx, mv


def nonlinear_cost(plan: Coupling, mu: PhaseEnsemble, nu: PhaseEnsemble, p: float, w: WeightFunction) -> ImplicitSolution:
    """D_p(π, Φ): the implicit weighted cost of one given coupling."""
    mx, mv = coupling_moments(plan, mu, nu, p)
    return implicit_weight_solve(mx, mv, w)


@dataclass(frozen=True, eq=False)
class NonlinearResult:
    """
    `value` is the un-rooted D_p of `plan`, an upper bound on W_{Φ,p}^p;
    `distance` is its p-th root.
    """

    value: float
    plan: Coupling
    lambda_star: Optional[float]
    converged: bool
    degenerate: bool
    iterations: int
    solver: SolverKind
    p: float

    @property
    def distance(self) -> float:
        return self.value ** (1.0 / self.p)


def _brute_force_nonlinear(mu, nu, p, w) -> NonlinearResult:
    best: Optional[Tuple[ImplicitSolution, Coupling]] = None
    count = 0
    idx = np.arange(mu.size)
    for perm in itertools.permutations(range(nu.size)):
        count += 1
        plan = Coupling.from_entries(idx, perm, mu.weights, mu.size, nu.size)
        try:
            sol = nonlinear_cost(plan, mu, nu, p, w)
        except NoRootError:
            continue
        if best is None or sol.q < best[0].q:
            best = (sol, plan)
    if best is None:
        raise NoRootError("no coupling admits a finite nonlinear cost")
    sol, plan = best
    lam = w(sol.q) if sol.q > 0.0 else None
    return NonlinearResult(sol.q, plan, lam, True, sol.degenerate, count, SolverKind.BRUTE_FORCE, p)


def nonlinear_wasserstein(
    mu: PhaseEnsemble,
    nu: PhaseEnsemble,
    p: float,
    w: WeightFunction,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    brute_force_limit: int = 6,
) -> NonlinearResult:
    """
    Certified upper bound on W_{Φ,p}(μ, ν)^p.

    Small equal-size uniform instances are enumerated over all permutation
    couplings. Otherwise the scheme alternates between a transport solve
    with cost λ|Δx|^p + |Δv|^p and the update λ ← Φ(D_p(plan)); each step can
    only lower D_p, and the best plan seen is returned. `converged` is False
    when the iteration cap is reached before the value settles.
    """
    tol = settings.NONLINEAR_TOL if tol is None else tol
    max_iter = settings.NONLINEAR_MAX_ITER if max_iter is None else max_iter

    if mu.size == nu.size <= brute_force_limit and mu.is_uniform and nu.is_uniform:
        return _brute_force_nonlinear(mu, nu, p, w)

    plan = optimal_transport(mu, nu, CostSpec.plain(p)).plan
    sol = nonlinear_cost(plan, mu, nu, p, w)
    if sol.degenerate:
        return NonlinearResult(0.0, plan, None, True, True, 0, SolverKind.EXACT, p)

    best_sol, best_plan = sol, plan
    s_prev = sol.q
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        lam = w(s_prev)
        plan = optimal_transport(mu, nu, CostSpec.anisotropic(lam, p)).plan
        sol = nonlinear_cost(plan, mu, nu, p, w)
        if sol.q < best_sol.q:
            best_sol, best_plan = sol, plan
        if abs(sol.q - s_prev) < tol:
            converged = True
            break
        s_prev = sol.q

    if not converged:
        logger.warning(f"Nonlinear distance did not settle in {max_iter} iterations; returning best value seen")
    lam_star = w(best_sol.q) if best_sol.q > 0.0 else None
    return NonlinearResult(best_sol.q, best_plan, lam_star, converged, best_sol.degenerate, k, SolverKind.EXACT, p)
