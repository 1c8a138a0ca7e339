import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from contract_lab.bernoulli import (
    BernoulliCoefficients,
    BernoulliDomainError,
    phi_closed_form,
    phi_integral_form,
    phi_numeric,
    residual,
)

import oracles

FB = BernoulliCoefficients(-2.25, 2.0, 0.5, 1.0)
MH = BernoulliCoefficients(-13.0 / 6.0, 2.0, 0.5, 1.0)


def test_baseline_values_against_frozen_oracles():
    assert abs(phi_closed_form(FB)(0.0) - oracles.BASE_PHI0_FB) <= 1e-13
    assert abs(phi_closed_form(MH)(0.0) - oracles.BASE_PHI0_MH) <= 1e-13


@pytest.mark.parametrize("coef", [FB, MH], ids=["fb", "mh"])
def test_numeric_matches_closed_form_at_fine_step(coef):
    t = np.linspace(0.0, 1.0, 1000)
    exact = phi_closed_form(coef)(t)
    num = phi_numeric(coef, 1e-4)(t)
    assert np.max(np.abs(num - exact) / exact) <= 1e-8


def test_numeric_rejects_coarse_step():
    with pytest.raises(ValueError):
        phi_numeric(FB, 1.0 / 15.0)


coef_strategy = st.tuples(
    st.floats(-6.0, 6.0),  # c1
    st.floats(0.0, 6.0),  # c2
    st.floats(0.05, 0.95),  # alpha
    st.floats(0.1, 3.0),  # horizon
)


def _positive(c1, c2, a, T):
    x = a * c1 * T
    u0 = math.exp(x) + a * c2 * T * (math.expm1(x) / x if x else 1.0)
    return u0 > 1e-3


@given(coef_strategy)
def test_closed_form_vs_numeric_property(args):
    assume(_positive(*args))
    c1, c2, a, T = args
    coef = BernoulliCoefficients(c1, c2, a, T)
    t = np.linspace(0.0, T, 1000)
    cf, num = phi_closed_form(coef)(t), phi_numeric(coef, T / 4096)(t)
    assert np.max(np.abs(cf - num) / num) <= 1e-7


@given(coef_strategy)
def test_terminal_condition_all_methods(args):
    assume(_positive(*args))
    c1, c2, a, T = args
    coef = BernoulliCoefficients(c1, c2, a, T)
    tv = BernoulliCoefficients(c1, lambda s: c2 + 0.0 * s, a, T)
    for phi in (phi_closed_form(coef), phi_numeric(coef, T / 64), phi_integral_form(tv)):
        assert abs(phi(T) - 1.0) <= 1e-15


@given(coef_strategy)
def test_residual_bound(args):
    assume(_positive(*args))
    c1, c2, a, T = args
    phi = phi_closed_form(BernoulliCoefficients(c1, c2, a, T))
    t = np.linspace(0.0, T, 200)
    res, val = np.abs(residual(phi, t)), phi(t)
    bound = 1e-6 * max(1.0, abs(c1) + abs(c2))
    # finite differences lose absolute accuracy in proportion to phi itself
    assert np.all(res <= bound * np.maximum(1.0, val))
    if val.max() <= 10.0:
        assert res.max() <= bound


@given(st.floats(0.05, 0.95), st.floats(0.1, 3.0), st.floats(0.2, 0.8))
def test_against_raw_fractional_power_ode(a, T, frac):
    # the package works on u = phi**alpha; the oracle integrates the raw form
    ga = a / (1.0 - a)  # gamma_p = 1
    c1, c2 = -1.3, 0.8
    t = np.array([0.0, frac * T])
    ref = oracles.raw_phi(c1, c2, 1.0, ga, T, t)
    np.testing.assert_allclose(phi_closed_form(BernoulliCoefficients(c1, c2, a, T))(t), ref, rtol=1e-10)


def test_mpmath_high_precision_agreement():
    for coef in (FB, MH):
        mp = oracles.mp_phi_closed(coef.c1, coef.c2, 1.0, 1.0, coef.horizon, 0.0)
        assert abs(phi_closed_form(coef)(0.0) - mp) <= 1e-15


@given(st.floats(-5.0, 5.0), st.floats(0.05, 0.95), st.floats(0.1, 3.0))
def test_zero_c2_is_pure_exponential(c1, a, T):
    coef = BernoulliCoefficients(c1, 0.0, a, T)
    t = np.linspace(0.0, T, 50)
    expected = np.exp(c1 * (T - t))
    for phi in (phi_closed_form(coef), phi_numeric(coef, T / 2048)):
        np.testing.assert_allclose(phi(t), expected, rtol=1e-10)


@given(st.floats(0.0, 5.0), st.floats(0.05, 0.95), st.floats(0.1, 3.0))
def test_zero_c1_linear_in_u(c2, a, T):
    coef = BernoulliCoefficients(0.0, c2, a, T)
    t = np.linspace(0.0, T, 50)
    np.testing.assert_allclose(phi_closed_form(coef).u(t), 1.0 + a * c2 * (T - t), rtol=1e-14)
    tv = BernoulliCoefficients(0.0, lambda s: c2 + 0.0 * s, a, T)
    np.testing.assert_allclose(phi_integral_form(tv).u(t), 1.0 + a * c2 * (T - t), rtol=1e-10)


def test_c1_near_zero_continuous():
    vals = [phi_closed_form(BernoulliCoefficients(c1, 1.0, 0.5, 1.0))(0.0) for c1 in (-1e-9, 0.0, 1e-9)]
    assert max(vals) - min(vals) < 1e-8


def test_phi0_continuous_in_c1():
    # finite-difference continuity sweep on an interval excluding 0
    c1 = np.linspace(0.5, 3.0, 501)
    v = np.array([phi_closed_form(BernoulliCoefficients(c, 1.0, 0.5, 1.0))(0.0) for c in c1])
    d = np.abs(np.diff(v))
    assert d.max() <= 10 * np.median(d)


def test_integral_form_constant_c2_matches_closed_form():
    tv = BernoulliCoefficients(-2.25, lambda s: 2.0 + 0.0 * s, 0.5, 1.0)
    t = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(phi_integral_form(tv)(t), phi_closed_form(FB)(t), rtol=1e-10)


def test_integral_form_piecewise_c2_matches_numeric_and_raw():
    knot = 0.4

    def c2(s):
        return np.where(np.asarray(s) < knot, 1.2, 2.0 + 0.5 * np.asarray(s))

    coef = BernoulliCoefficients(-2.0, c2, 0.5, 1.0, knots=(knot,))
    t = np.linspace(0.0, 1.0, 301)
    intg, num = phi_integral_form(coef)(t), phi_numeric(coef, 1e-3)(t)
    np.testing.assert_allclose(intg, num, rtol=1e-8)
    ref = oracles.raw_phi(-2.0, c2, 1.0, 1.0, 1.0, t, breaks=(knot,))
    np.testing.assert_allclose(intg, ref, rtol=1e-9)


def test_integral_form_time_dependent_c1_numeric_only():
    coef = BernoulliCoefficients(lambda s: -1.0 - s, lambda s: 1.0 + 0.0 * s, 0.5, 1.0)
    with pytest.raises(ValueError):
        phi_closed_form(coef)
    t = np.linspace(0.0, 1.0, 11)
    # d/dt log phi = 1 + t - phi**(-1/2) has no closed form; integrate it directly
    from scipy.integrate import solve_ivp

    ref = solve_ivp(lambda s, y: [(1.0 + s) * y[0] - np.sqrt(y[0])], (1.0, 0.0), [1.0], method="DOP853", rtol=1e-13, atol=1e-15, dense_output=True)
    np.testing.assert_allclose(phi_numeric(coef, 1e-3)(t), ref.sol(t)[0], rtol=1e-10)


def test_domain_error_reports_time():
    # c1 > 0 with a negative c2 drives the bracket through zero
    coef = BernoulliCoefficients(1.0, -5.0, 0.5, 2.0)
    with pytest.raises(BernoulliDomainError) as exc:
        phi_closed_form(coef)
    assert 0.0 <= exc.value.t <= 2.0
    with pytest.raises(BernoulliDomainError):
        phi_numeric(coef, 2.0 / 64)
    with pytest.raises(BernoulliDomainError):
        phi_integral_form(BernoulliCoefficients(1.0, lambda s: -5.0 + 0.0 * s, 0.5, 2.0))


def test_domain_error_location_is_the_zero():
    c1, c2, a, T = 1.0, -5.0, 0.5, 2.0
    with pytest.raises(BernoulliDomainError) as exc:
        phi_closed_form(BernoulliCoefficients(c1, c2, a, T))
    r = T - exc.value.t
    x = a * c1 * r
    assert abs(math.exp(x) + a * c2 * r * math.expm1(x) / x) < 1e-12


def test_alpha_must_be_in_unit_interval():
    with pytest.raises(ValueError):
        BernoulliCoefficients(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        BernoulliCoefficients(1.0, 1.0, 0.5, 0.0)


def test_log_matches_log_of_value():
    phi = phi_closed_form(MH)
    t = np.linspace(0.0, 1.0, 11)
    np.testing.assert_allclose(phi.log(t), np.log(phi(t)), rtol=1e-14, atol=1e-16)
