from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ratetip.desing import DesingularizedField, classify_eigenvalues, estimate_critical_rate, find_folded_singularities
from ratetip.errors import BracketError, SingularityError

from conftest import LAMBDA_MAX, exponential, logistic

NODE_FOCUS_EPS = (2 + math.sqrt(4 + LAMBDA_MAX ** 2)) / (8 * LAMBDA_MAX)


def logistic_rhs(x, tau, eps):
    lam = LAMBDA_MAX * np.tanh(tau)
    return -x + eps / LAMBDA_MAX * (LAMBDA_MAX ** 2 - lam ** 2), eps * (1 - 2 * x)


def exponential_rhs(x, tau, eps):
    lam = LAMBDA_MAX * (1 - np.exp(-tau))
    return -x + eps * (LAMBDA_MAX - lam), eps * (1 - 2 * x)


def logistic_char_roots(lam, eps):
    return np.sort(np.roots([1.0, 1.0, -4 * eps ** 2 * lam * (1 - (lam / LAMBDA_MAX) ** 2)]))


def exponential_char_roots(lam, eps):
    return np.sort(np.roots([1.0, 1.0, 2 * eps ** 2 * (lam - LAMBDA_MAX)]))


@pytest.mark.parametrize("make,explicit,taus", [
    (logistic, logistic_rhs, (-3.0, 3.0)),
    (exponential, exponential_rhs, (0.01, 5.0)),
])
def test_field_matches_explicit_equations(quad, make, explicit, taus):
    rng = np.random.default_rng(3)
    for eps in (0.1, 0.216, 1.0):
        fld = DesingularizedField(quad, make(eps))
        x = rng.uniform(-2, 2, 200)
        tau = rng.uniform(*taus, 200)
        got = fld.rhs(x, tau)
        want = explicit(x, tau, eps)
        assert np.allclose(got[0], want[0], atol=1e-12) and np.allclose(got[1], want[1], atol=1e-12)


def test_jacobian_matches_complex_step(quad):
    fld = DesingularizedField(quad, logistic(0.23))
    h = 1e-30
    for x, tau in [(0.1, -0.3), (0.5, 0.2), (-1.2, 1.5)]:
        jac = fld.jacobian(x, tau)
        cols = []
        for dz in ((1j * h, 0), (0, 1j * h)):
            dx, dt = logistic_rhs(x + dz[0], tau + dz[1], 0.23)
            cols.append([dx.imag / h, dt.imag / h])
        assert np.allclose(jac, np.array(cols).T, atol=1e-13)


def test_reduced_flow_is_undefined_on_the_fold(quad):
    with pytest.raises(SingularityError):
        DesingularizedField(quad, logistic(0.3)).reduced(0.5, 0.0)


@given(st.floats(0.2005, 0.6))
def test_case1_singularity_locations_and_eigenvalues(eps):
    from ratetip.model import builtin_system
    quad = builtin_system("quadratic-fold", 0.01)
    sing = find_folded_singularities(quad, logistic(eps))
    lam_star = math.sqrt(LAMBDA_MAX * (LAMBDA_MAX - 1 / (2 * eps)))
    assert [s.lambda_star for s in sing] == pytest.approx([-lam_star, lam_star], abs=1e-8)
    for s in sing:
        assert s.x_star == pytest.approx(0.5, abs=1e-12)
        assert math.tanh(s.tau_star) * LAMBDA_MAX == pytest.approx(s.lambda_star, abs=1e-10)
        got = np.sort_complex(np.array(s.eigenvalues))
        want = np.sort_complex(logistic_char_roots(s.lambda_star, eps).astype(complex))
        assert np.max(np.abs(got - want)) <= 1e-8
    assert sing[1].kind == "folded-saddle"
    expect = "folded-node-stable" if eps < NODE_FOCUS_EPS else "folded-focus-stable"
    if abs(eps - NODE_FOCUS_EPS) > 1e-6:
        assert sing[0].kind == expect


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.19, 0.1999])
def test_no_singularities_below_critical_rate(quad, eps):
    assert find_folded_singularities(quad, logistic(eps)) == []
    assert find_folded_singularities(quad, exponential(eps)) == []


@pytest.mark.parametrize("eps", [0.25, 0.5, 1.0, 3.0])
def test_case2_single_saddle(quad, eps):
    sing = find_folded_singularities(quad, exponential(eps))
    assert len(sing) == 1
    s = sing[0]
    assert s.kind == "folded-saddle" and s.b_sign == -1
    assert s.lambda_star == pytest.approx(LAMBDA_MAX - 1 / (2 * eps), abs=1e-10)
    want = exponential_char_roots(s.lambda_star, eps)
    assert np.allclose(np.sort([z.real for z in s.eigenvalues]), want, atol=1e-8)


def test_critical_rate_singular_limit(quad):
    for make in (logistic, exponential):
        rep = estimate_critical_rate(quad, make(1.0))
        assert rep.epsilon_c_singular == pytest.approx(1 / (2 * LAMBDA_MAX), abs=1e-9)


def test_critical_rate_bracket_errors(quad):
    with pytest.raises(BracketError):
        estimate_critical_rate(quad, logistic(1.0), (0.3, 1.0))
    with pytest.raises(BracketError):
        estimate_critical_rate(quad, logistic(1.0), (0.01, 0.1))
    with pytest.raises(BracketError):
        estimate_critical_rate(quad, logistic(1.0), (0.5, 0.1))


@pytest.mark.parametrize("jac,kind", [
    ([[-1.0, 0.3], [0.4, 0.5]], "folded-saddle"),
    ([[-1.0, 0.0], [0.0, -0.2]], "folded-node-stable"),
    ([[1.0, 0.0], [0.0, 0.2]], "folded-node-unstable"),
    ([[-0.1, 1.0], [-1.0, -0.1]], "folded-focus-stable"),
    ([[0.1, 1.0], [-1.0, 0.1]], "folded-focus-unstable"),
    ([[0.0, 1.0], [-1.0, 0.0]], "folded-centre"),
    ([[-1.0, 0.0], [0.0, 0.0]], "folded-saddle-node-I"),
])
def test_classification(jac, kind):
    xi1, xi2, got = classify_eigenvalues(np.array(jac))
    assert got == kind
    assert sorted([xi1, xi2], key=lambda z: (z.real, z.imag)) == pytest.approx(
        sorted(np.linalg.eigvals(np.array(jac)), key=lambda z: (z.real, z.imag)), abs=1e-12)


def test_node_orders_strong_eigenvalue_first():
    xi1, xi2, _ = classify_eigenvalues(np.array([[-0.2, 0.0], [0.0, -1.0]]))
    assert abs(xi1) > abs(xi2)


def test_saddle_node_at_critical_rate(quad):
    sing = find_folded_singularities(quad, logistic(0.2))
    assert len(sing) == 1 and sing[0].kind == "folded-saddle-node-I"
    assert sing[0].lambda_star == pytest.approx(0.0, abs=1e-6)
