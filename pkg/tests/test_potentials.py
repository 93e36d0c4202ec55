import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from nlchns.geometry import Grid2D
from nlchns.kernels import ConvolutionOperator, KernelSpec, check_kernel_assumptions
from nlchns.potentials import (LogarithmicPotential, regularize, check_regularized_bounds,
                               check_singular_assumptions, growth_constants, sample_closed_interval)

EPS_LIST = (0.2, 0.1, 0.05, 0.025)
_s = sp.Symbol("s")


def symbolic_f1(theta, k):
    f = theta / 2 * ((1 + _s) * sp.log(1 + _s) + (1 - _s) * sp.log(1 - _s))
    return sp.lambdify(_s, sp.diff(f, _s, k), "numpy")


@pytest.fixture(scope="module")
def kernel_report():
    op = ConvolutionOperator(Grid2D(32, 32), KernelSpec.gaussian(3.5, 0.125))
    return check_kernel_assumptions(op, LogarithmicPotential(0.3, 1.0))


@pytest.mark.parametrize("k", range(0, 7))
def test_log_derivatives_match_symbolic_oracle(k):
    F = LogarithmicPotential(0.8, 1.0)
    s = np.linspace(-0.999, 0.999, 401)
    ref = symbolic_f1(0.8, k)(s) * np.ones_like(s)
    assert np.allclose(F.f1_deriv(k, s), ref, rtol=1e-10, atol=1e-12)


def test_fourth_derivative_closed_form():
    F = LogarithmicPotential(0.8, 1.0)
    s = np.linspace(-0.99, 0.99, 101)
    assert np.allclose(F.f1_deriv(4, s), 2 * 0.8 * (1 + 3 * s ** 2) / (1 - s ** 2) ** 3, rtol=1e-12)
    assert np.all(F.f1_deriv(4, s) > 0)


def test_second_derivative_at_zero():
    F = LogarithmicPotential(0.8, 1.0)
    assert F.d2(np.array([0.0]))[0] == pytest.approx(-0.2, abs=1e-15)
    for eps in EPS_LIST:
        assert regularize(F, eps).d2(np.array([0.0]))[0] == pytest.approx(-0.2, abs=1e-15)


def test_inside_window_exact_and_concave_part_unchanged():
    F = LogarithmicPotential(0.8, 1.0)
    for eps in EPS_LIST:
        Fe = regularize(F, eps)
        s = sample_closed_interval(-1 + eps, 1 - eps)
        assert np.array_equal(Fe.value(s), F.value(s))
        wide = np.linspace(-4, 4, 801)
        assert np.allclose(Fe.f2(wide), -0.5 * wide ** 2, rtol=1e-14, atol=1e-14)
    assert regularize(F, 0.5).value(np.array([0.0]))[0] == 0.0


@given(st.floats(0.01, 0.5), st.floats(-3.0, 3.0))
def test_taylor_extension_is_continuous_to_order_p_minus_1(eps, s):
    Fe = regularize(LogarithmicPotential(0.6, 1.0), eps)
    x = np.array([1 - eps])
    for k in range(Fe.p):
        left = Fe.f1(x - 1e-10, k)[0]
        right = Fe.f1(x + 1e-10, k)[0]
        slope = abs(Fe.f1(x, k + 1)[0])
        assert abs(left - right) <= 3e-10 * slope + 1e-9 * max(1.0, abs(left))
    # outer pieces are polynomials: the p-th derivative is frozen beyond the clamp point
    if abs(s) > 1 - eps:
        assert Fe.f1(np.array([s]), Fe.p)[0] == pytest.approx(Fe.f1(np.sign(s) * x, Fe.p)[0], rel=1e-12)


def test_singular_assumptions_p4_pass_p3_fail():
    rep = check_singular_assumptions(LogarithmicPotential(0.8, 1.0, 4))
    assert rep.passed
    assert rep.details["eps0_window"] is not None and rep.details["c1"] > 0
    bad = check_singular_assumptions(LogarithmicPotential(0.8, 1.0, 3))
    assert "singular_potential/endpoint_growth_order" in bad.failures()
    assert "even p" in bad.find("endpoint_growth_order").message


def test_divergence_evidence():
    F = LogarithmicPotential(0.8, 1.0)
    a, b = F.f1_deriv(1, np.array([1 - 1e-6, 1 - 1e-3]))
    assert a > b > 0


def test_swapped_temperatures_named_failure():
    rep = check_singular_assumptions(LogarithmicPotential(1.0, 0.8))
    node = rep.find("log_temperature_range")
    assert not node.passed and "0 < theta < theta_c" in node.message


@pytest.mark.parametrize("eps", EPS_LIST)
def test_regularized_suite_passes(eps, kernel_report):
    F = LogarithmicPotential(0.3, 1.0)
    prev = regularize(F, 2 * eps) if eps < 0.2 else None
    rep = check_regularized_bounds(regularize(F, eps), kernel_report, F_prev=prev)
    assert rep.passed, rep.failures()
    for name in ("coercivity", "growth", "G_convexity", "F1eps_below_F1", "F1eps_prime_below_F1_prime",
                 "clamp_smoothness"):
        assert rep.find(name).passed
        assert rep.find(name).details.get("violations", 0) == 0


def test_growth_constants_brute_force_oracle():
    Fe = regularize(LogarithmicPotential(0.8, 1.0), 0.1)
    cp, dp = growth_constants(Fe, 5.0)
    s = np.linspace(-5, 5, 20481)
    far = np.abs(s) >= 2
    assert cp == pytest.approx(np.min(Fe.value(s[far]) / (np.abs(s[far]) ** 4 + 1)), rel=1e-3)
    assert cp > 0
    assert np.all(Fe.value(s) >= cp * np.abs(s) ** 4 - dp - 1e-12)


def test_regularized_derivatives_finite_difference():
    Fe = regularize(LogarithmicPotential(0.8, 1.0), 0.05)
    s = np.linspace(-2, 2, 97)
    h = 1e-6
    fd1 = (Fe.value(s + h) - Fe.value(s - h)) / (2 * h)
    fd2 = (Fe.d1(s + h) - Fe.d1(s - h)) / (2 * h)
    assert np.allclose(fd1, Fe.d1(s), rtol=1e-6, atol=1e-6)
    assert np.allclose(fd2, Fe.d2(s), rtol=1e-5, atol=1e-5)


def test_eps_out_of_range():
    with pytest.raises(ValueError):
        regularize(LogarithmicPotential(), 0.0)
    with pytest.raises(ValueError):
        regularize(LogarithmicPotential(), 0.6)


def test_p_below_three_rejected():
    with pytest.raises(ValueError):
        LogarithmicPotential(0.8, 1.0, 2)


def test_value_at_zero_is_zero():
    assert LogarithmicPotential().value(np.array([0.0]))[0] == 0.0
    assert math.isclose(LogarithmicPotential(0.8, 1.0).value(np.array([0.5]))[0],
                        0.4 * (1.5 * math.log(1.5) + 0.5 * math.log(0.5)) - 0.125, rel_tol=1e-14)
