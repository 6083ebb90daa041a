import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from robustse import bounds
from robustse.rng import RngStream, gaussian_sample

# alpha*(delta) from an independent route: with M1(u) = int_u^inf (h-u) 2phi(h) dh and
# R(u) = int_u^inf (h-u)^2 2phi(h) dh, the minimizer of g satisfies
# alpha = M1/sqrt(R), and alpha* solves sqrt(R) + u*M1/sqrt(R) = sqrt(1-delta).
# Evaluated with mpmath quadrature at 30 digits.
ALPHA_STAR_ORACLE = {
    0.1: 0.602520467899161,
    0.25: 0.481819199169036,
    0.4: 0.388838696652994,
    0.5: 0.332946602262124,
    0.75: 0.198297383849403,
    0.9: 0.107986149957972,
}
RHO_MAX_ORACLE = 0.0285271587773833  # at alpha*(0.5)
C_ORACLE = 2.42709092946682  # C(alpha*(0.5), 0.01)
VARPI_ORACLE = 49.2515693407983  # varpi(0.5, 0.01)


def half_normal_tail_moment(u2):
    """E[(h - u2)^2 ; h > u2] for half-normal h, by quadrature."""
    dens = lambda h: 2.0 * math.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi)  # noqa: E731
    val, _ = integrate.quad(lambda h: (h - u2) ** 2 * dens(h), u2, np.inf, epsabs=1e-13)
    return val


class TestErfc:
    def test_fixed_points(self):
        assert bounds.erfc(0.0) == 1.0
        assert bounds.erfc(math.inf) == 0.0
        assert bounds.erfc(-math.inf) == 2.0

    def test_against_defining_integral(self):
        exact = 2.0 / mpmath.sqrt(mpmath.pi) * mpmath.quad(lambda t: mpmath.exp(-t * t), [1, mpmath.inf])
        assert bounds.erfc(1.0) == pytest.approx(float(exact), abs=1e-12)
        assert bounds.erfc(1.0) == pytest.approx(0.157299207050285, abs=1e-12)

    @given(st.floats(-6, 6))
    def test_range_and_accuracy(self, x):
        v = bounds.erfc(x)
        # erfc(-6) = 2 - 2e-17 rounds to 2.0 in double precision
        assert 0.0 < v <= 2.0
        assert v == pytest.approx(float(mpmath.erfc(x)), abs=1e-9)

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            bounds.erfc(math.nan)


class TestGObjective:
    def test_at_zero(self):
        for a in (0.0, 0.3, 1.0):
            assert bounds.g_objective(a, 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_matches_quadrature(self):
        for u2 in (0.0, 0.5, 1.0, 2.0, 3.5):
            expected = math.sqrt(half_normal_tail_moment(u2)) + 0.332 * u2
            assert bounds.g_objective(0.332, u2) == pytest.approx(expected, abs=1e-10)

    def test_decays_without_penalty(self):
        assert bounds.g_objective(0.0, 12.0) < 1e-10

    def test_radicand_clamped(self):
        # far in the tail the closed form cancels to (tiny) negative values
        assert bounds.g_objective(0.0, 40.0) == 0.0

    @given(st.floats(0, 1), st.floats(0, 8), st.floats(0, 8))
    def test_convex_in_u2(self, a, u, v):
        mid = bounds.g_objective(a, 0.5 * (u + v))
        assert mid <= 0.5 * (bounds.g_objective(a, u) + bounds.g_objective(a, v)) + 1e-12

    def test_negative_arguments(self):
        with pytest.raises(ValueError):
            bounds.g_objective(-0.1, 1.0)
        with pytest.raises(ValueError):
            bounds.g_objective(0.1, -1.0)


class TestGOfAlpha:
    def test_endpoints(self):
        assert bounds.g_of_alpha(0.0) == pytest.approx(0.0, abs=1e-6)
        assert bounds.g_of_alpha(0.8) == pytest.approx(1.0, abs=1e-12)

    def test_paper_alpha(self):
        assert bounds.g_of_alpha(0.332) == pytest.approx(math.sqrt(0.5), abs=2e-3)

    def test_against_dense_scan(self):
        grid = np.linspace(0.0, 10.0, 200001)
        for a in (0.1, 0.332, 0.6):
            scan = min(bounds.g_objective(a, u) for u in grid[::50])
            assert bounds.g_of_alpha(a) <= scan + 1e-12
            assert bounds.g_of_alpha(a) == pytest.approx(scan, abs=1e-6)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_nondecreasing(self, a, b):
        lo, hi = sorted((a, b))
        assert bounds.g_of_alpha(lo) <= bounds.g_of_alpha(hi) + 1e-9

    def test_domain(self):
        with pytest.raises(ValueError):
            bounds.g_of_alpha(1.5)


class TestAlphaStar:
    @pytest.mark.parametrize("delta", sorted(ALPHA_STAR_ORACLE))
    def test_oracle(self, delta):
        assert bounds.alpha_star(delta) == pytest.approx(ALPHA_STAR_ORACLE[delta], abs=1e-6)

    def test_paper_value(self):
        assert bounds.alpha_star(0.5) == pytest.approx(0.332, abs=2e-3)

    def test_grid_scan_quarter(self):
        # the largest grid alpha with g < sqrt(0.75), on a 1e-5 grid near the answer
        target = math.sqrt(0.75)
        grid = np.arange(0.470, 0.495, 1e-5)
        ok = [a for a in grid if bounds.g_of_alpha(a) < target]
        assert bounds.alpha_star(0.25) == pytest.approx(max(ok), abs=1e-4)

    def test_limit_near_one(self):
        assert 0.0 < bounds.alpha_star(0.999) < 0.01

    def test_strictly_decreasing(self):
        vals = [bounds.alpha_star(d / 10) for d in range(1, 10)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.2, 1.3])
    def test_domain(self, delta):
        with pytest.raises(ValueError):
            bounds.alpha_star(delta)


class TestSparsity:
    def test_c_value(self):
        a = bounds.alpha_star(0.5)
        c = bounds.c_from_sparsity(a, 0.01)
        assert c == pytest.approx(C_ORACLE, abs=1e-8)
        assert bounds.c_from_sparsity(0.332, 0.01) == pytest.approx(2.42, abs=0.01)

    @given(st.floats(0.05, 1.0), st.floats(1e-4, 0.2))
    def test_root_satisfies_equation(self, a, rho):
        c = bounds.c_from_sparsity(a, rho)
        if c is None:
            return
        assert c > 1.0
        lhs = 1.0 / rho + c * c / (1.0 - rho)
        rhs = (c + 1.0) ** 2 / (a * a)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_infeasible(self):
        assert bounds.c_from_sparsity(0.332, 0.5) is None
        # and a scan of C confirms the equality cannot hold above 1
        cs = np.logspace(0, 6, 2000)[1:]
        gap = 1 / 0.5 + cs**2 / 0.5 - (cs + 1) ** 2 / 0.332**2
        assert np.all(gap < 0) or np.all(gap > 0)

    def test_feasibility_edge(self):
        a = bounds.alpha_star(0.5)
        rho_max = bounds.max_recoverable_sparsity(a)
        assert rho_max == pytest.approx(RHO_MAX_ORACLE, abs=1e-12)
        assert 1 / rho_max + 1 / (1 - rho_max) == pytest.approx(4 / a**2, rel=1e-12)
        assert bounds.c_from_sparsity(a, rho_max * 0.99) is not None
        assert bounds.c_from_sparsity(a, rho_max * 1.01) is None

    def test_closed_form_half(self):
        # smaller root of rho^2 - rho + alpha^2/4 = 0
        a = 0.5
        closed = (1 - math.sqrt(1 - a * a)) / 2
        assert bounds.max_recoverable_sparsity(a) == pytest.approx(closed, abs=1e-9)

    def test_small_alpha(self):
        vals = [bounds.max_recoverable_sparsity(a) for a in (0.1, 0.01, 0.001)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-6

    def test_paper_threshold(self):
        assert bounds.max_recoverable_sparsity(bounds.alpha_star(0.5)) == pytest.approx(0.0289, abs=1e-3)

    # alpha* never exceeds sqrt(2/pi); beyond it the quadratic can open upwards
    @given(st.floats(0.01, math.sqrt(2 / math.pi)))
    def test_c_decreases_with_rho(self, a):
        rho_max = bounds.max_recoverable_sparsity(a)
        rhos = np.linspace(rho_max * 0.05, rho_max * 0.95, 8)
        cs = [bounds.c_from_sparsity(a, r) for r in rhos]
        assert all(c is not None for c in cs)
        assert all(y < x for x, y in zip(cs, cs[1:]))


class TestVarpi:
    def test_oracle(self):
        assert bounds.varpi(0.5, 0.01) == pytest.approx(VARPI_ORACLE, rel=1e-9)

    def test_increasing_until_infeasible(self):
        rho_max = bounds.max_recoverable_sparsity(bounds.alpha_star(0.5))
        rhos = np.linspace(0.001, rho_max * 0.999, 30)
        vals = [bounds.varpi(0.5, r) for r in rhos]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert bounds.varpi(0.5, rho_max * 1.001) is None

    def test_infeasible_example(self):
        assert bounds.varpi(0.5, 0.04) is None

    def test_small_rho_limit(self):
        limit = 2 / ((1 - math.sqrt(0.5)) * bounds.alpha_star(0.5))
        vals = [bounds.varpi(0.5, r) for r in (1e-3, 1e-5, 1e-8)]
        assert all(v > limit for v in vals)
        assert vals[-1] == pytest.approx(limit, rel=1e-3)

    def test_report_invariants(self):
        r = bounds.bound_report(0.5, 0.01)
        assert r.feasible
        assert r.sigma_min_normalized == 1 - math.sqrt(0.5)
        expected = 2 * (r.c_constant + 1) / (r.sigma_min_normalized * r.alpha_star * (r.c_constant - 1))
        assert r.varpi == pytest.approx(expected, rel=1e-14)
        assert len(r.as_row()) == len(bounds.BoundReport.FIELDS)

    def test_report_infeasible(self):
        r = bounds.bound_report(0.5, 0.5)
        assert not r.feasible
        assert math.isnan(r.varpi)
        assert r.as_row()[-1] == "false"

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(1e-4, 0.05))
    def test_feasible_report_positive(self, delta, rho):
        r = bounds.bound_report(delta, rho)
        if r.feasible:
            assert r.c_constant > 1 and r.varpi > 0 and r.alpha_star > 0


class TestEscape:
    def test_zero_exponent(self):
        # sqrt(n - m) must exceed 18 ln 3.5 so both widths are admissible
        n, m = 1000, 200
        w = math.sqrt(n - m) - 1 / (2 * math.sqrt(n - m))
        assert bounds.escape_probability_lower_bound(n, m, w) == pytest.approx(-2.5, abs=1e-12)
        assert bounds.escape_probability_lower_bound(n, m, w - 18 * math.log(3.5)) == pytest.approx(0.0, abs=1e-12)

    def test_reference_value(self):
        # 1 - 3.5 exp(-(sqrt(5000) - 1/(2 sqrt(5000)) - 60)/18), evaluated with mpmath
        d = mpmath.sqrt(5000)
        expected = 1 - mpmath.mpf("3.5") * mpmath.exp(-(d - 1 / (2 * d) - 60) / 18)
        assert bounds.escape_probability_lower_bound(10_000, 5_000, 60.0) == pytest.approx(float(expected), abs=1e-14)

    def test_grows_with_margin(self):
        p1 = bounds.escape_probability_lower_bound(10_000, 5_000, 10.0)
        p2 = bounds.escape_probability_lower_bound(10_000, 5_000, 5.0)
        assert p2 > p1
        assert p1 < 1.0

    def test_vacuous_when_width_large(self):
        assert bounds.escape_probability_lower_bound(100, 50, 50.0) < 0

    def test_domain(self):
        with pytest.raises(ValueError):
            bounds.escape_probability_lower_bound(10, 10, 1.0)
        with pytest.raises(ValueError):
            bounds.escape_probability_lower_bound(10, 5, -1.0)


def test_subspace_ratio():
    assert bounds.SubspaceRatio.from_dims(150, 60).delta == pytest.approx(0.4)
    with pytest.raises(ValueError):
        bounds.SubspaceRatio(1.0)


@pytest.mark.parametrize("n", [6, 8, 10])
def test_balancedness_by_enumeration(n):
    # For w with ||w||_1 = alpha sqrt(n) ||w||_2 and any |K| = k, Cauchy-Schwarz gives
    # beta^2/k + (1-beta)^2/(n-k) <= 1/(alpha^2 n), beta = ||w_K||_1/||w||_1, which in
    # turn gives C ||w_K||_1 <= ||w_Kbar||_1 with C from c_from_sparsity(alpha, k/n).
    # Small n gives alpha^2 > 1 - k/n often, where both quadratic roots are positive.
    rs = RngStream(n, 0)
    checked = 0
    for _ in range(40):
        w = gaussian_sample(rs, n)
        alpha = np.abs(w).sum() / (math.sqrt(n) * np.linalg.norm(w))
        for k in range(1, n // 2):
            c = bounds.c_from_sparsity(alpha, k / n)
            for K in itertools.combinations(range(n), k):
                mask = np.zeros(n, dtype=bool)
                mask[list(K)] = True
                beta = np.abs(w[mask]).sum() / np.abs(w).sum()
                assert beta**2 / k + (1 - beta) ** 2 / (n - k) <= 1 / (alpha**2 * n) + 1e-12
                if c is not None:
                    assert c * np.abs(w[mask]).sum() <= np.abs(w[~mask]).sum() * (1 + 1e-9)
                    checked += 1
    assert checked > 0


def test_two_positive_roots_takes_upper_beta_end():
    # alpha^2 > 1 - rho: the larger root belongs to the lower end of the beta interval
    alpha, rho = 0.98, 0.05
    c = bounds.c_from_sparsity(alpha, rho)
    inv_a2 = 1 / alpha**2
    roots = np.roots([1 / (1 - rho) - inv_a2, -2 * inv_a2, 1 / rho - inv_a2])
    assert np.all(roots > 0)
    assert c == pytest.approx(roots.min(), rel=1e-12)
    # beta = 1/(C+1) is the largest share a support of size rho n can hold
    beta = 1 / (c + 1)
    assert beta**2 / rho + (1 - beta) ** 2 / (1 - rho) == pytest.approx(inv_a2, rel=1e-12)
    assert beta > rho
    # here the valid root is below 1 even though the other one is not
    assert bounds.c_from_sparsity(0.9, 0.3) is None
