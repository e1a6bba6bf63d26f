from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ratetip.canard import (
    COMPOSITE, FOLDED_SADDLE, NODE_STRONG, NODE_WEAK, SADDLE_STABLE, SADDLE_UNSTABLE, SECONDARY_NODE,
    STRONG_NODE, WEAK_NODE, canard_family, is_composite, maximal_canard, singular_canards,
)
from ratetip.desing import find_folded_singularities
from ratetip.errors import DomainError
from ratetip.flow import IntegratorSettings, flow_context
from ratetip.sections import Section

from conftest import LAMBDA_MAX, exponential, logistic

TRANSECT = -0.7
TAU_T = -math.atanh(0.28)


def explicit_canard_x(eps: float, saddle: bool, lam_target: float = TRANSECT) -> float:
    """Crossing of the lambda = lam_target section by the strong / stable eigendirection solution.

    Integrates the closed-form desingularized equations backwards from the singular point.
    """
    ls = math.sqrt(LAMBDA_MAX * (LAMBDA_MAX - 1 / (2 * eps))) * (1 if saddle else -1)
    ts = math.atanh(ls / LAMBDA_MAX)

    def rhs(s, z):
        lam = LAMBDA_MAX * math.tanh(z[1])
        return [-z[0] + eps / LAMBDA_MAX * (LAMBDA_MAX ** 2 - lam ** 2), eps * (1 - 2 * z[0])]

    lam_rate = (LAMBDA_MAX ** 2 - ls ** 2) / LAMBDA_MAX
    jac = np.array([[-1.0, -2 * eps * ls * lam_rate / LAMBDA_MAX], [-2 * eps, 0.0]])
    w, v = np.linalg.eig(jac)
    k = int(np.argmin(w))
    tt = math.atanh(lam_target / LAMBDA_MAX)
    hits = []
    for sign in (1.0, -1.0):
        z0 = np.array([0.5, ts]) + sign * 1e-7 * v[:, k]
        sol = solve_ivp(rhs, (0.0, -200.0), z0, rtol=1e-12, atol=1e-14, events=lambda s, z: z[1] - tt)
        hits += [float(y[0]) for y in sol.y_events[0]]
    assert len(hits) == 1
    return hits[0]


@pytest.fixture(scope="module")
def sing204(quad):
    return {c.branch: c for s in find_folded_singularities(quad, logistic(0.204)) for c in singular_canards(s)}


@pytest.mark.parametrize("branch,saddle", [(NODE_STRONG, False), (SADDLE_STABLE, True)])
def test_singular_canard_matches_explicit_integration(sing204, branch, saddle):
    assert float(sing204[branch].x_at(TAU_T)) == pytest.approx(explicit_canard_x(0.204, saddle), abs=1e-6)


def test_singular_canards_leave_along_eigenvectors(sing204):
    assert set(sing204) == {NODE_STRONG, NODE_WEAK, SADDLE_STABLE, SADDLE_UNSTABLE}
    for c in sing204.values():
        assert c.tangent_angle() < 1e-5


def test_weak_canard_is_invariant(sing204):
    c = sing204[NODE_WEAK]
    s = c.singularity
    core = np.abs(c.tau - s.tau_star) < 0.15
    x, t = c.x[core], c.tau[core]
    chord = np.gradient(x, t)
    inner = slice(2, -2)
    assert np.max(np.abs(chord[inner] - c.slopes()[core][inner])) < 1e-3
    n, d = s.field.rhs(x, t)
    # field direction (N, dtau/ds) is parallel to the path tangent (dx/dtau, 1)
    cross = np.asarray(n) - np.asarray(d) * c.slopes()[core]
    assert np.max(np.abs(cross)) < 1e-9


def test_weak_canard_crosses_transect_on_attracting_side(sing204):
    x = float(sing204[NODE_WEAK].x_at(TAU_T))
    assert 0.45 < x < 0.5


def test_focus_has_no_canards(quad):
    eps = (2 + math.sqrt(4 + LAMBDA_MAX ** 2)) / (8 * LAMBDA_MAX) + 0.002
    sing = find_folded_singularities(quad, logistic(eps))
    focus = [s for s in sing if s.kind.startswith("folded-focus")]
    assert len(focus) == 1 and singular_canards(focus[0]) == []


def test_faux_branch_and_reduced_limit_are_rejected(quad, sing204):
    f = logistic(0.204)
    with pytest.raises(DomainError):
        maximal_canard(quad, f, sing204[SADDLE_UNSTABLE])
    with pytest.raises(DomainError):
        maximal_canard(quad.with_delta(0.0), f, sing204[NODE_STRONG])


@pytest.fixture(scope="module")
def family204(quad):
    return canard_family(quad, logistic(0.204), section_tau=TAU_T)


# jump-side bisection seeds; the band edges of the same transect are found by verdict bisection
SEEDS_204 = {FOLDED_SADDLE: -0.5585461543, STRONG_NODE: 0.1709370071, WEAK_NODE: 0.3578744436}
SECONDARY_204 = [0.2608022441, 0.2936532379, 0.3439336308]


def test_maximal_canard_seeds(family204):
    assert not family204.failures
    for kind, seed in SEEDS_204.items():
        (m,) = family204.by_kind(kind)
        assert m.seed_parameter == pytest.approx(seed, abs=1e-9)
        assert m.seed_width <= 1e-15
    sec = sorted(m.seed_parameter for m in family204.by_kind(SECONDARY_NODE))
    assert sec == pytest.approx(SECONDARY_204, abs=1e-9)


def test_maximal_canards_lie_near_their_singular_limits(family204, sing204):
    for kind, branch in ((STRONG_NODE, NODE_STRONG), (FOLDED_SADDLE, SADDLE_STABLE)):
        (m,) = family204.by_kind(kind)
        assert abs(m.seed_parameter - float(sing204[branch].x_at(TAU_T))) < 0.01


def test_maximal_canards_maximize_repelling_dwell(quad, family204):
    f = logistic(0.204)
    section = Section(flow_context(quad, f, IntegratorSettings()), TAU_T)
    for kind in (FOLDED_SADDLE, STRONG_NODE, WEAK_NODE):
        (m,) = family204.by_kind(kind)
        base = section.base(m.seed_base)
        w = 10 * max(m.seed_width, 1e-18)
        for r in base.offsets([m.seed_offset - w, m.seed_offset + w]):
            assert r.dwell < m.dwell_s_r


def test_case2_saddle_canard(quad):
    f = exponential(1.0)
    (s,) = find_folded_singularities(quad, f)
    stable = [c for c in singular_canards(s) if c.branch == SADDLE_STABLE][0]
    m = maximal_canard(quad, f, stable)
    assert m.kind == FOLDED_SADDLE
    assert abs(m.seed_parameter - float(stable.x_at(m.section_tau))) < 0.03
    header = m.header()
    assert header["kind"] == FOLDED_SADDLE and header["lambda_star"] == pytest.approx(2.0)


@pytest.mark.parametrize("kinds,expected", [
    ([STRONG_NODE, FOLDED_SADDLE], True),
    ([SECONDARY_NODE, WEAK_NODE, FOLDED_SADDLE], True),
    ([FOLDED_SADDLE, STRONG_NODE], False),
    ([STRONG_NODE], False),
    ([], False),
    ([COMPOSITE, FOLDED_SADDLE], False),
])
def test_composite_rule(kinds, expected):
    assert is_composite([(k, (0.0, 1.0)) for k in kinds]) is expected
