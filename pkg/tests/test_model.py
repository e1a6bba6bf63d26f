from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ratetip.errors import LookupFailure, SchemaError
from ratetip.model import ForcingProfile, Polynomial, SystemDefinition, builtin_system

from conftest import LAMBDA_MAX

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_polynomial_merges_and_drops_zero_terms():
    p = Polynomial(((1, 0, 0, 2.0), (1, 0, 0, -2.0), (0, 1, 0, 1.0), (0, 1, 0, 0.5)))
    assert p.terms == ((0, 1, 0, 1.5),)


def test_polynomial_rejects_bad_terms():
    with pytest.raises(SchemaError):
        Polynomial(((1, 0, 0),))
    with pytest.raises(SchemaError):
        Polynomial(((-1, 0, 0, 1.0),))


@given(finite, finite, finite)
def test_builtin_field_matches_closed_form(x, y, lam):
    s = builtin_system("quadratic-fold")
    assert s.f_poly(x, y, lam) == pytest.approx(x * (x - 1) + y + lam, abs=1e-12)
    assert s.g_poly(x, y, lam) == pytest.approx(-x, abs=0)


def test_partials_match_finite_differences():
    rng = np.random.default_rng(7)
    f = Polynomial(((3, 0, 0, 0.7), (2, 1, 0, -1.1), (1, 0, 2, 0.4), (0, 1, 0, 1.0), (0, 0, 1, 1.0)))
    pts = rng.uniform(-2, 2, size=(1000, 3))
    h = 1e-6
    for var, k in (("x", 0), ("y", 1), ("lam", 2)):
        d = f.diff(var)
        e = np.zeros(3)
        e[k] = h
        fd = (f(*(pts + e).T) - f(*(pts - e).T)) / (2 * h)
        exact = d(*pts.T)
        rel = np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))
        assert rel.max() <= 1e-6


def test_system_requires_quadratic_x_and_y_dependence():
    g = Polynomial(((1, 0, 0, -1.0),))
    with pytest.raises(SchemaError):
        SystemDefinition(Polynomial(((1, 0, 0, 1.0), (0, 1, 0, 1.0))), g, 0.01)
    with pytest.raises(SchemaError):
        SystemDefinition(Polynomial(((2, 0, 0, 1.0),)), g, 0.01)
    with pytest.raises(SchemaError):
        builtin_system("quadratic-fold", -1.0)


def test_unknown_builtin():
    with pytest.raises(LookupFailure):
        builtin_system("nope")


@pytest.mark.parametrize("kind,lo,hi", [
    ("logistic-tanh", -5.0, 5.0),
    ("exponential-approach", 1e-3, 10.0),
    ("linear-saturating-ramp", 0.05, 0.95),
])
def test_rate_matches_central_differences(kind, lo, hi):
    f = ForcingProfile(kind, LAMBDA_MAX, 0.3)
    taus = np.linspace(lo, hi, 1000)
    h = 1e-6
    fd = (f.value(taus + h) - f.value(taus - h)) / (2 * h)
    exact = f.rate(taus)
    rel = np.abs(fd - exact) / np.maximum(np.abs(exact), 1e-3)
    assert rel.max() <= 1e-6


def test_logistic_rate_identity():
    f = ForcingProfile("logistic-tanh", LAMBDA_MAX, 0.2)
    taus = np.linspace(-6, 6, 1000)
    lam = f.value(taus)
    assert np.max(np.abs(f.rate(taus) - (LAMBDA_MAX ** 2 - lam ** 2) / LAMBDA_MAX)) <= 1e-14


def test_transect_time_for_minus_point_seven():
    f = ForcingProfile("logistic-tanh", LAMBDA_MAX, 0.204)
    assert f.inverse(-0.7) == pytest.approx(-math.atanh(0.28), abs=1e-14)
    assert f.value(-math.atanh(0.28)) == pytest.approx(-0.7, abs=1e-14)


@given(st.floats(-2.49, 2.49))
def test_logistic_inverse_round_trip(lam):
    f = ForcingProfile("logistic-tanh", LAMBDA_MAX, 0.2)
    assert f.value(f.inverse(lam)) == pytest.approx(lam, abs=1e-12)


@given(st.floats(0.01, 2.49))
def test_exponential_inverse_round_trip(lam):
    f = ForcingProfile("exponential-approach", LAMBDA_MAX, 1.0)
    assert f.value(f.inverse(lam)) == pytest.approx(lam, abs=1e-12)


def test_forcing_validation():
    with pytest.raises(SchemaError):
        ForcingProfile("sine", 1.0, 1.0)
    with pytest.raises(SchemaError):
        ForcingProfile("logistic-tanh", 2.5, 0.0)
    with pytest.raises(SchemaError):
        ForcingProfile("exponential-approach", 2.5, 1.0, tau_min=-1.0)
    with pytest.raises(SchemaError):
        ForcingProfile("linear-saturating-ramp", 1.0, 1.0, ramp_start=2.0)


def test_constant_profile_has_zero_rate():
    f = ForcingProfile("constant", 1.3, 0.5)
    assert f.value(7.0) == 1.3 and f.rate(7.0) == 0.0


def test_ramp_saturates():
    f = ForcingProfile("linear-saturating-ramp", 2.0, 1.0, tau_min=0.0, tau_max=1.0, ramp_start=-1.0)
    assert f.value(0.0) == pytest.approx(-1.0)
    assert f.value(0.5) == pytest.approx(0.5)
    assert f.value(1.0) == pytest.approx(2.0)
