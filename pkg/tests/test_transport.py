"""
Unit Tests for Exact, Entropic and Nonlinear Transport

Brute force over permutations is the reference for the small instances.
"""

import itertools
import math

import numpy as np
import pytest

from kwass.exceptions import CapacityError, DomainError, LipschitzViolation, NoRootError
from kwass.measures import CostSpec, Coupling, PhaseEnsemble, cost_matrix, validate_coupling
from kwass.models import SolverKind, WeightVariant
from kwass.transport import (
    WeightFunction,
    coupling_moments,
    implicit_weight_solve,
    kantorovich_lower_bound,
    nonlinear_cost,
    nonlinear_wasserstein,
    optimal_transport,
    solve_entropic,
    solve_exact,
    wasserstein,
)


def brute_force_value(mu, nu, spec):
    C = cost_matrix(mu, nu, spec)
    best = min(np.mean(C[np.arange(mu.size), list(perm)]) for perm in itertools.permutations(range(nu.size)))
    return best ** (1.0 / spec.p)


def assignment_of(plan):
    """Column of each row for a permutation plan."""
    return plan.cols[np.argsort(plan.rows)]


def lexicographic_optimum(C, tol=1e-9):
    """First permutation in lexicographic order whose total cost is minimal."""
    n = C.shape[0]
    perms = list(itertools.permutations(range(n)))
    totals = [C[np.arange(n), list(perm)].sum() for perm in perms]
    best = min(totals)
    return list(next(perm for perm, total in zip(perms, totals) if total <= best + tol))


# ============================================================================
# TEST SUITE 1: Exact transport
# ============================================================================

class TestExactTransport:
    """Test cases for the exact solver."""

    def test_identical_ensembles_have_zero_distance(self, make_ensemble):
        """Test that W(mu, mu) = 0."""
        mu = make_ensemble(20)
        assert wasserstein(mu, mu, CostSpec.plain(2.0)) == 0.0

    @pytest.mark.parametrize("lam", [1.0, 10.0])
    def test_matches_brute_force(self, make_ensemble, lam):
        """
        Test Case: N=4, anisotropic lam in {1, 10}
        Expected: assignment value equals the minimum over all 24 permutations
        """
        mu, nu = make_ensemble(4), make_ensemble(4, label="nu")
        spec = CostSpec.anisotropic(lam, p=1.0)
        assert solve_exact(mu, nu, spec).value == pytest.approx(brute_force_value(mu, nu, spec), rel=1e-12)

    def test_velocity_shift_gives_delta(self, shifted_pair):
        """Test that a constant velocity shift delta has W1 = delta."""
        mu, nu = shifted_pair(50, delta=1e-3)
        assert solve_exact(mu, nu, CostSpec.plain(1.0)).value == pytest.approx(1e-3, rel=1e-9)

    def test_value_is_root_of_raw_objective(self, make_ensemble):
        """Test that value = raw_objective^(1/p)."""
        mu, nu = make_ensemble(6), make_ensemble(6, label="nu")
        res = solve_exact(mu, nu, CostSpec.plain(2.0))
        assert res.value == pytest.approx(math.sqrt(res.raw_objective), rel=1e-12)

    def test_non_uniform_weights_use_general_solver(self):
        """Test that unequal sizes give a valid optimal plan."""
        mu = PhaseEnsemble.from_arrays([0.1, 0.6], [0.0, 0.0], [0.3, 0.7])
        nu = PhaseEnsemble.from_arrays([0.1, 0.6, 0.62], [0.0, 0.0, 0.0])
        res = solve_exact(mu, nu, CostSpec.plain(1.0))
        assert validate_coupling(res.plan, mu, nu).passed
        # 1/3 - 0.3 must move from 0.1 onward; the rest matches in place or moves 0.02
        assert res.value == pytest.approx((1.0 / 3.0 - 0.3) * 0.5 + (1.0 / 3.0) * 0.02, rel=1e-9)

    def test_capacity_cap(self, make_ensemble):
        """Test that ensembles above the cap raise CapacityError."""
        mu = make_ensemble(4)
        with pytest.raises(CapacityError):
            solve_exact(mu, mu, CostSpec.plain(), max_points=3)

    def test_dispatch_switches_to_entropic(self, make_ensemble):
        """Test that optimal_transport picks the entropic solver above exact_limit."""
        mu, nu = make_ensemble(5), make_ensemble(5, label="nu")
        res = optimal_transport(mu, nu, CostSpec.plain(), exact_limit=3, eta=0.05)
        assert res.solver.kind == SolverKind.ENTROPIC

    def test_equal_costs_give_identity(self):
        """Test that a cost matrix with every entry equal resolves to i -> i."""
        mu = PhaseEnsemble.from_arrays(np.full(6, 0.25), np.zeros(6))
        nu = PhaseEnsemble.from_arrays(np.full(6, 0.5), np.ones(6), label="nu")
        res = solve_exact(mu, nu, CostSpec.plain(1.0))
        np.testing.assert_array_equal(assignment_of(res.plan), np.arange(6))

    def test_ties_broken_lexicographically(self):
        """
        Test Case: 5x5 ensembles on a 1/8 lattice, plain W1 cost, many exact ties
        Expected: the first optimal permutation in lexicographic order
        """
        spec = CostSpec.plain(1.0)
        for seed in range(100):
            gen = np.random.default_rng(seed)
            mu = PhaseEnsemble.from_arrays(gen.integers(0, 8, 5) / 8.0, gen.integers(-4, 4, 5) / 8.0)
            nu = PhaseEnsemble.from_arrays(gen.integers(0, 8, 5) / 8.0, gen.integers(-4, 4, 5) / 8.0, label="nu")
            res = solve_exact(mu, nu, spec)
            assert assignment_of(res.plan).tolist() == lexicographic_optimum(cost_matrix(mu, nu, spec)), seed


# ============================================================================
# TEST SUITE 2: Entropic transport
# ============================================================================

class TestEntropicTransport:
    """Test cases for log-domain Sinkhorn."""

    def test_plan_is_a_coupling(self, make_ensemble):
        """Test that the rounded entropic plan has the right marginals."""
        mu, nu = make_ensemble(12), make_ensemble(12, label="nu")
        res = solve_entropic(mu, nu, CostSpec.plain(2.0), eta=0.01)
        row, col = res.plan.marginals()
        np.testing.assert_allclose(row, mu.weights, atol=1e-12)
        np.testing.assert_allclose(col, nu.weights, atol=1e-12)

    def test_entropic_value_not_below_exact(self, make_ensemble):
        """Test that the entropic plan costs at least the optimum."""
        mu, nu = make_ensemble(10), make_ensemble(10, label="nu")
        spec = CostSpec.plain(1.0)
        exact = solve_exact(mu, nu, spec).raw_objective
        entropic = solve_entropic(mu, nu, spec, eta=0.01).raw_objective
        assert entropic >= exact - 1e-9

    def test_small_eta_stays_finite(self, make_ensemble):
        """Test that eta = 1e-4 neither overflows nor underflows."""
        mu, nu = make_ensemble(8), make_ensemble(8, label="nu")
        res = solve_entropic(mu, nu, CostSpec.plain(1.0), eta=1e-4, max_iter=200)
        assert math.isfinite(res.value)

    def test_iteration_cap_reports_non_convergence(self, make_ensemble):
        """Test that hitting max_iter returns converged=False instead of raising."""
        mu, nu = make_ensemble(8), make_ensemble(8, label="nu")
        res = solve_entropic(mu, nu, CostSpec.plain(1.0), eta=0.05, tol=1e-300, max_iter=5)
        assert not res.converged
        assert res.solver.iterations == 5

    def test_converged_solve_reports_residual(self, make_ensemble):
        """Test that a converged solve reports a marginal residual within tol and a finite iteration count."""
        mu, nu = make_ensemble(10), make_ensemble(10, label="nu")
        res = solve_entropic(mu, nu, CostSpec.plain(1.0), eta=0.05, tol=1e-9)
        assert res.converged
        assert res.solver.residual <= 1e-9
        assert 0 < res.solver.iterations < 20000

    def test_value_approaches_exact_as_eta_shrinks(self, make_ensemble):
        """Test that the plan cost decreases towards the optimum for eta = 1e-1, 1e-2, 1e-3."""
        mu, nu = make_ensemble(10), make_ensemble(10, label="nu")
        spec = CostSpec.plain(1.0)
        exact = solve_exact(mu, nu, spec).raw_objective
        values = [solve_entropic(mu, nu, spec, eta=eta).raw_objective for eta in (1e-1, 1e-2, 1e-3)]
        assert values[0] >= values[1] - 1e-9 >= values[2] - 2e-9
        assert values[2] >= exact - 1e-9
        assert values[2] - exact < values[0] - exact

    def test_invalid_eta(self, make_ensemble):
        """Test that eta <= 0 is a domain error."""
        mu = make_ensemble(3)
        with pytest.raises(DomainError):
            solve_entropic(mu, mu, CostSpec.plain(), eta=0.0)


class TestKantorovichLowerBound:
    """Test cases for the dual lower bound."""

    def test_velocity_test_function_is_sharp(self, shifted_pair):
        """Test that psi = -v certifies W1 >= delta for a velocity shift."""
        mu, nu = shifted_pair(40, delta=1e-2)
        lower = kantorovich_lower_bound(mu, nu, lambda x, v: -v[:, 0])
        assert lower == pytest.approx(1e-2, rel=1e-9)
        assert lower <= wasserstein(mu, nu, CostSpec.plain(1.0)) + 1e-12

    def test_steep_test_function_rejected(self, shifted_pair):
        """Test that a 2-Lipschitz test function raises LipschitzViolation."""
        mu, nu = shifted_pair(10)
        with pytest.raises(LipschitzViolation):
            kantorovich_lower_bound(mu, nu, lambda x, v: 2.0 * v[:, 0])


# ============================================================================
# TEST SUITE 3: Weights and the implicit equation
# ============================================================================

class TestWeightFunction:
    """Test cases for the decreasing weights."""

    def test_log_weight_values(self):
        """Test that log_eps(eps=0.5) at s = e^-2 is 4 * 2."""
        w = WeightFunction.log_eps(0.5)
        assert w(math.exp(-2.0)) == pytest.approx(8.0)

    def test_log_weight_domain(self):
        """Test that the log weight is undefined above 1 and at 0."""
        w = WeightFunction.log_eps(1.0)
        with pytest.raises(DomainError):
            w(1.5)
        with pytest.raises(DomainError):
            w(0.0)

    def test_capped_weight_is_c1_at_inverse_e(self):
        """Test that value and slope of the capped weight match at 1/e."""
        w = WeightFunction.capped_phi(1.0)
        s = math.exp(-1.0)
        h = 1e-7
        assert w(s - h) == pytest.approx(w(s + h), rel=1e-6)
        assert w.derivative(s - 1e-12) == pytest.approx(w.derivative(s + 1e-12), rel=1e-6)

    def test_capped_weight_defined_above_one(self):
        """Test that the capped weight accepts s > 1."""
        assert WeightFunction.capped_phi(1.0)(2.0) == pytest.approx(math.exp(-1.0) / 2.0)


class TestImplicitSolve:
    """Test cases for q - Phi(q) r = s."""

    def test_degenerate_zero(self):
        """Test that r = s = 0 gives q = 0 flagged degenerate."""
        sol = implicit_weight_solve(0.0, 0.0, WeightFunction.log_eps(1.0))
        assert sol.q == 0.0 and sol.degenerate

    def test_no_position_moment(self):
        """Test that r = 0 gives q = s."""
        assert implicit_weight_solve(0.0, 0.25, WeightFunction.log_eps(1.0)).q == 0.25

    def test_root_satisfies_equation(self):
        """Test the residual and q >= s for a generic input."""
        w = WeightFunction.log_eps(0.5)
        sol = implicit_weight_solve(1e-4, 1e-3, w)
        assert sol.q >= 1e-3
        assert sol.q - w(sol.q) * 1e-4 == pytest.approx(1e-3, rel=1e-12)

    def test_zero_velocity_moment(self):
        """Test that s = 0 with r > 0 still finds the positive root."""
        w = WeightFunction.log_eps(1.0)
        sol = implicit_weight_solve(1e-6, 0.0, w)
        assert 0.0 < sol.q < 1.0
        assert sol.q == pytest.approx(w(sol.q) * 1e-6, rel=1e-10)

    def test_capped_closed_form(self):
        """Test q - e^-1/q = 2 for capped_phi with r = 1, s = 2."""
        sol = implicit_weight_solve(1.0, 2.0, WeightFunction.capped_phi(1.0))
        assert sol.q == pytest.approx((2.0 + math.sqrt(4.0 + 4.0 * math.exp(-1.0))) / 2.0, rel=1e-12)

    def test_monotone_in_r(self):
        """Test that q grows with r."""
        w = WeightFunction.log_eps(1.0)
        qs = [implicit_weight_solve(r, 1e-3, w).q for r in (1e-6, 1e-5, 1e-4, 1e-3)]
        assert all(a < b for a, b in zip(qs, qs[1:]))

    def test_log_weight_needs_s_below_one(self):
        """Test that s >= 1 has no root for the log weight."""
        with pytest.raises(NoRootError):
            implicit_weight_solve(0.1, 1.0, WeightFunction.log_eps(1.0))

    def test_negative_moment(self):
        """Test that negative inputs are domain errors."""
        with pytest.raises(DomainError):
            implicit_weight_solve(-1.0, 0.1, WeightFunction.log_eps(1.0))


# ============================================================================
# TEST SUITE 4: Nonlinear distance
# ============================================================================

class TestNonlinearWasserstein:
    """Test cases for the weighted implicit distance."""

    def test_identical_ensembles_degenerate(self, make_ensemble):
        """Test that W_Phi(mu, mu) = 0 with the degenerate flag, small and large N."""
        w = WeightFunction.log_eps(1.0)
        for n in (4, 20):
            ens = make_ensemble(n)
            res = nonlinear_wasserstein(ens, ens, 2.0, w)
            assert res.value == 0.0
            assert res.degenerate

    def test_coupling_moments_split_x_and_v(self, shifted_pair):
        """Test that the diagonal plan of a velocity shift has no x-moment and v-moment delta^p."""
        mu, nu = shifted_pair(10, delta=1e-2)
        mx, mv = coupling_moments(Coupling.diagonal(mu, nu), mu, nu, 2.0)
        assert mx == 0.0
        assert mv == pytest.approx(1e-4, rel=1e-9)

    def test_velocity_shift_reduces_to_velocity_moment(self, shifted_pair):
        """Test that a pure velocity shift gives D_p = delta^p."""
        mu, nu = shifted_pair(12, delta=1e-2)
        res = nonlinear_wasserstein(mu, nu, 2.0, WeightFunction.log_eps(1.0))
        assert res.value == pytest.approx(1e-4, rel=1e-9)
        assert res.distance == pytest.approx(1e-2, rel=1e-9)
        assert res.converged

    def test_brute_force_is_minimal(self, make_ensemble):
        """Test that the enumerated value is at most the cost of any one permutation."""
        mu, nu = make_ensemble(4, v_scale=0.1), make_ensemble(4, v_scale=0.1, label="nu")
        w = WeightFunction(variant=WeightVariant.CAPPED_PHI, eps=1.0)
        res = nonlinear_wasserstein(mu, nu, 1.0, w)
        assert res.solver == SolverKind.BRUTE_FORCE
        assert res.iterations == 24
        best_exact = solve_exact(mu, nu, CostSpec.plain(1.0)).plan
        assert res.value <= nonlinear_cost(best_exact, mu, nu, 1.0, w).q + 1e-15

    def test_fixed_point_not_worse_than_plain_plan(self, make_ensemble):
        """Test that the iteration never returns more than the plain-cost plan's value."""
        mu, nu = make_ensemble(15, v_scale=0.1), make_ensemble(15, v_scale=0.1, label="nu")
        w = WeightFunction.capped_phi(1.0)
        res = nonlinear_wasserstein(mu, nu, 1.0, w)
        start = solve_exact(mu, nu, CostSpec.plain(1.0)).plan
        assert res.value <= nonlinear_cost(start, mu, nu, 1.0, w).q


# ============================================================================
# TEST SUITE 5: Metric and monotonicity properties
# ============================================================================

def random_pair(gen, n, d=1, v_scale=0.3):
    mu = PhaseEnsemble.from_arrays(gen.random((n, d)), v_scale * gen.standard_normal((n, d)))
    nu = PhaseEnsemble.from_arrays(gen.random((n, d)), v_scale * gen.standard_normal((n, d)), label="nu")
    return mu, nu


def random_spec(gen, variant):
    p = float(gen.choice([1.0, 2.0]))
    if variant == "plain":
        return CostSpec.plain(p)
    if variant == "anisotropic":
        return CostSpec.anisotropic(float(gen.uniform(0.1, 10.0)), p)
    if variant == "quadratic":
        a, c = gen.uniform(0.5, 2.0, size=2)
        b = 0.9 * math.sqrt(a * c) * float(gen.uniform(-1.0, 1.0))
        return CostSpec.quadratic(float(a), b, float(c), p)
    return CostSpec.shifted(float(gen.uniform(0.0, 2.0)), p)


def sine_test_function(gen, modes=4):
    """Random psi(x, v) whose partial slopes in x and v stay below 0.99."""
    amps = gen.uniform(-1.0, 1.0, size=modes)
    amps *= 0.99 / np.sum(np.abs(amps))
    phases = gen.uniform(0.0, 2.0 * math.pi, size=modes)
    beta = float(gen.uniform(-0.99, 0.99))
    k = np.arange(1, modes + 1)

    def psi(x, v):
        arg = 2.0 * math.pi * k[None, :] * x[:, :1] + phases[None, :]
        return np.sum(amps * np.sin(arg) / (2.0 * math.pi * k), axis=1) + beta * np.sin(v[:, 0])

    return psi


def bisection_root(r, s, w, lo=1e-300, hi=1.0, steps=200):
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if mid - w(mid) * r - s < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestTransportProperties:
    """Randomized checks of the metric structure and the monotone dependencies."""

    @pytest.mark.parametrize("variant", ["plain", "anisotropic", "quadratic", "shifted"])
    def test_exact_matches_brute_force(self, variant):
        """Test that the exact solver equals enumeration on 50 random instances with N <= 6."""
        gen = np.random.default_rng(7)
        for _ in range(50):
            n = int(gen.integers(2, 7))
            mu, nu = random_pair(gen, n)
            spec = random_spec(gen, variant)
            assert solve_exact(mu, nu, spec).value == pytest.approx(brute_force_value(mu, nu, spec), rel=1e-10, abs=1e-12)

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_symmetry_and_triangle_inequality(self, p):
        """Test W_p(mu, nu) = W_p(nu, mu) and the triangle inequality on 200 triples."""
        gen = np.random.default_rng(11)
        spec = CostSpec.plain(p)
        for _ in range(200):
            mu, nu = random_pair(gen, 5)
            rho, _ = random_pair(gen, 5)
            ab = wasserstein(mu, nu, spec)
            assert wasserstein(nu, mu, spec) == pytest.approx(ab, rel=1e-12, abs=1e-15)
            assert wasserstein(mu, rho, spec) <= ab + wasserstein(nu, rho, spec) + 1e-12

    def test_anisotropic_nondecreasing_in_lambda(self):
        """Test that W_{lam,p}^p never decreases as lam grows."""
        gen = np.random.default_rng(13)
        lams = [0.1, 0.5, 1.0, 2.0, 10.0, 100.0]
        for _ in range(20):
            mu, nu = random_pair(gen, 8)
            raw = [solve_exact(mu, nu, CostSpec.anisotropic(lam, 2.0)).raw_objective for lam in lams]
            assert all(a <= b + 1e-12 for a, b in zip(raw, raw[1:]))

    def test_shifted_equals_plain_without_velocity(self):
        """Test that the shifted cost reduces to W_p when every velocity is zero."""
        gen = np.random.default_rng(17)
        for t in (0.0, 0.5, 3.0):
            mu = PhaseEnsemble.from_arrays(gen.random(7), np.zeros(7))
            nu = PhaseEnsemble.from_arrays(gen.random(7), np.zeros(7), label="nu")
            shifted = wasserstein(mu, nu, CostSpec.shifted(t, p=2.0))
            assert shifted == pytest.approx(wasserstein(mu, nu, CostSpec.plain(2.0)), rel=1e-12)

    def test_lower_bound_below_w1(self):
        """Test that random 1-Lipschitz sums of sines never certify more than W1."""
        gen = np.random.default_rng(19)
        for _ in range(100):
            mu, nu = random_pair(gen, 8)
            lower = kantorovich_lower_bound(mu, nu, sine_test_function(gen), n_pairs=512)
            assert lower <= wasserstein(mu, nu, CostSpec.plain(1.0)) + 1e-12

    def test_nonlinear_matches_bisection(self):
        """Test that N = 4 enumeration agrees with bisection on every permutation."""
        gen = np.random.default_rng(23)
        w = WeightFunction.log_eps(0.5)
        for _ in range(5):
            mu, nu = random_pair(gen, 4, v_scale=0.05)
            idx = np.arange(4)
            best = math.inf
            for perm in itertools.permutations(range(4)):
                plan = Coupling.from_entries(idx, perm, mu.weights, 4, 4)
                mx, mv = coupling_moments(plan, mu, nu, 2.0)
                best = min(best, bisection_root(mx, mv, w))
            assert nonlinear_wasserstein(mu, nu, 2.0, w).value == pytest.approx(best, rel=1e-10)


class TestImplicitSolveGrid:
    """Grid checks of q - Phi(q) r = s."""

    def test_log_weight_grid(self):
        """Test residual and q >= s on a 50x50 grid with s < 1, and monotonicity in s."""
        w = WeightFunction.log_eps(1.0)
        grid = np.linspace(0.01, 0.99, 50)
        for r in grid:
            qs = []
            for s in grid:
                sol = implicit_weight_solve(r, s, w)
                assert abs(sol.q - w(sol.q) * r - s) < 1e-12
                assert sol.q >= s
                qs.append(sol.q)
            assert all(a < b for a, b in zip(qs, qs[1:]))

    def test_capped_weight_grid(self):
        """Test that the capped weight has a root on the full grid, including s >= 1."""
        w = WeightFunction.capped_phi(1.0)
        grid = np.linspace(0.01, 2.0, 50)
        for r in grid:
            qs = [implicit_weight_solve(r, s, w).q for s in grid]
            for q, s in zip(qs, grid):
                assert abs(q - w(q) * r - s) < 1e-12
            assert all(a < b for a, b in zip(qs, qs[1:]))

    @pytest.mark.parametrize("s", [1.0, 1.01, 1.5, 10.0])
    def test_log_weight_fails_exactly_from_one(self, s):
        """Test that the log weight has no root once s >= 1 and one just below."""
        w = WeightFunction.log_eps(1.0)
        with pytest.raises(NoRootError):
            implicit_weight_solve(0.3, s, w)
        assert implicit_weight_solve(0.3, 1.0 - 1e-9, w).q < 1.0
