import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pspin.constants import (
    ModelParams,
    gumbel_min_cdf,
    gumbel_min_median,
    h_tilde,
    log_omega_surface,
    omega_fn,
    omega_prime,
    semicircle_cdf,
    semicircle_density,
    solve_constants,
    stieltjes_semicircle,
    theta_p,
    theta_p_prime,
)


def _log_potential_quad(x):
    # substitute l = 2 sin t to remove the square-root endpoints
    f = lambda t: math.log(abs(2.0 * math.sin(t) - x)) * 2.0 * math.cos(t) ** 2 / math.pi
    return integrate.quad(f, -math.pi / 2, math.pi / 2, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


class TestSemicircle:
    def test_peak_and_edge(self):
        assert semicircle_density(0.0) == pytest.approx(1.0 / math.pi, abs=1e-12)
        assert semicircle_density(2.0) == 0.0
        assert semicircle_density(3.0) == 0.0

    def test_mass(self):
        mass, _ = integrate.quad(semicircle_density, -2, 2, epsabs=1e-13)
        assert mass == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("x", [-1.5, -0.2, 0.7, 1.9])
    def test_cdf_matches_quadrature(self, x):
        ref, _ = integrate.quad(semicircle_density, -2, x, epsabs=1e-13)
        assert semicircle_cdf(x) == pytest.approx(ref, abs=1e-10)

    def test_stieltjes_refuses_support(self):
        with pytest.raises(ValueError):
            stieltjes_semicircle(1.0)

    @pytest.mark.parametrize("z", [2.1, 3.0, -4.5])
    def test_stieltjes_quadrature(self, z):
        f = lambda t: 2.0 * math.cos(t) ** 2 / math.pi / (z - 2.0 * math.sin(t))
        ref, _ = integrate.quad(f, -math.pi / 2, math.pi / 2, epsabs=1e-13, epsrel=1e-13)
        assert stieltjes_semicircle(z) == pytest.approx(ref, abs=1e-10)


class TestOmega:
    def test_values(self):
        assert omega_fn(0.0) == pytest.approx(-0.5)
        assert omega_fn(2.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("x", [2.0, -2.0])
    def test_branches_meet(self, x):
        assert abs(omega_fn(x * (1 + 5e-10)) - omega_fn(x * (1 - 5e-10))) < 1e-8

    @pytest.mark.parametrize("x", [50.0, -3.3, 2.5, 0.4, -1.7])
    def test_quadrature(self, x):
        assert omega_fn(x) == pytest.approx(_log_potential_quad(x), abs=1e-8)

    def test_prime_values(self):
        assert omega_prime(0.0) == 0.0
        assert omega_prime(2.5) == pytest.approx(0.5)
        assert omega_prime(-2.0) == pytest.approx(-1.0)

    @pytest.mark.parametrize("x", [1.3, -1.3, 3.7, -3.7])
    def test_prime_finite_difference(self, x):
        h = 1e-6
        fd = (omega_fn(x + h) - omega_fn(x - h)) / (2 * h)
        assert omega_prime(x) == pytest.approx(fd, abs=1e-7)

    @given(st.floats(min_value=2.05, max_value=40.0))
    def test_prime_is_stieltjes_outside(self, x):
        assert omega_prime(x) == pytest.approx(stieltjes_semicircle(x), rel=1e-12)


class TestTheta:
    def test_nonnegative_branch(self):
        assert theta_p(0.0, 3) == pytest.approx(0.5 * math.log(2))
        assert theta_p(1.2, 5) == pytest.approx(0.5 * math.log(4))

    def test_at_e_inf(self):
        e_inf = 2 * math.sqrt(2 / 3)
        assert theta_p(-e_inf, 3) == pytest.approx(0.5 * math.log(2) - 1 / 3, abs=1e-12)

    def test_continuous_at_zero(self):
        assert abs(theta_p(-1e-6, 3) - theta_p(0.0, 3)) < 1e-9

    def test_prime_at_e_inf(self):
        e_inf = 2 * math.sqrt(2 / 3)
        assert theta_p_prime(-e_inf, 3) == pytest.approx(e_inf - math.sqrt(1.5), abs=1e-12)

    @pytest.mark.parametrize("u", [-1.8, -2.5])
    def test_prime_finite_difference(self, u):
        h = 1e-6
        fd = (theta_p(u + h, 3) - theta_p(u - h, 3)) / (2 * h)
        assert theta_p_prime(u, 3) == pytest.approx(fd, abs=1e-7)

    def test_prime_refuses_positive(self):
        with pytest.raises(ValueError):
            theta_p_prime(0.5, 3)

    def test_rejects_small_p(self):
        with pytest.raises(ValueError):
            theta_p(-1.0, 2)


class TestHTilde:
    def test_values(self):
        assert h_tilde(0.0) == pytest.approx(2.0)
        assert h_tilde(-3.0) == pytest.approx(2 ** 0.25 + 2 ** -0.25)

    @given(st.floats(min_value=-30, max_value=30).filter(lambda x: abs(abs(x) - 1) > 1e-3))
    def test_even(self, x):
        assert h_tilde(x) == pytest.approx(h_tilde(-x), rel=1e-12)

    def test_poles(self):
        with pytest.raises(ValueError):
            h_tilde(1.0)


class TestSurface:
    def test_small(self):
        assert log_omega_surface(2) == pytest.approx(math.log(2 * math.pi))
        assert log_omega_surface(3) == pytest.approx(math.log(4 * math.pi))

    def test_high_precision(self):
        mpmath.mp.dps = 40
        ref = mpmath.log(2 * mpmath.pi ** 250 / mpmath.gamma(250))
        assert log_omega_surface(500) == pytest.approx(float(ref), rel=1e-10)


class TestSolve:
    def test_p3_pinned(self):
        c = solve_constants(3, 100)
        assert c.E_inf < c.E_0 < 2.0
        assert c.E_0 == pytest.approx(1.6569983635270957, abs=1e-10)
        assert abs(theta_p(-c.E_0, 3)) < 1e-10
        assert c.C_0 == pytest.approx(0.5 * c.E_0 - 0.5 * c.c_p, abs=1e-8)

    def test_parity(self):
        assert solve_constants(4, 10).iota_p == 1
        assert solve_constants(5, 10).iota_p == 0
        assert solve_constants(4, 10).parity_weight == 0.5

    def test_centering_formula(self):
        c = solve_constants(3, 250)
        assert c.m_N == pytest.approx(-c.E_0 * 250 + math.log(250) / (2 * c.c_p) - c.K_0)

    def test_c_p_finite_difference(self):
        c = solve_constants(6, 10)
        h = 1e-6
        fd = (theta_p(-c.E_0 + h, 6) - theta_p(-c.E_0 - h, 6)) / (2 * h)
        assert c.c_p == pytest.approx(fd, abs=1e-7)

    @pytest.mark.parametrize("p,N", [(2, 10), (3, 1), (3.5, 10)])
    def test_invalid(self, p, N):
        with pytest.raises(ValueError):
            ModelParams(p, N)


class TestGumbel:
    def test_limits(self):
        assert gumbel_min_cdf(-200.0, 0.6) == pytest.approx(0.0, abs=1e-12)
        assert gumbel_min_cdf(200.0, 0.6) == 1.0
        assert gumbel_min_cdf(0.0, 0.6) == pytest.approx(1 - math.exp(-1 / 0.6))

    def test_median(self):
        c = 0.625
        assert gumbel_min_cdf(gumbel_min_median(c), c) == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(-20, 20), st.floats(0.01, 5))
    @settings(max_examples=50)
    def test_monotone(self, x, c):
        assert gumbel_min_cdf(x, c) <= gumbel_min_cdf(x + 0.1, c) + 1e-15

    def test_matches_density_quadrature(self):
        c = solve_constants(3, 50).c_p
        dens = lambda x: math.exp(c * x) * math.exp(-math.exp(c * x) / c)
        ref, _ = integrate.quad(dens, -60, 1.0)
        assert gumbel_min_cdf(1.0, c) == pytest.approx(ref, abs=1e-9)
