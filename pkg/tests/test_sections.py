from __future__ import annotations

from fractions import Fraction

import pytest

from ratetip.errors import DomainError, SectionError
from ratetip.flow import IntegratorSettings, flow_context
from ratetip.sections import Boundary, Section, _split_bisect, itinerary_key, jump_key, locate, verdict_key

from conftest import logistic


class _Fake:
    def __init__(self, code):
        self.code = code


def _step(points):
    """Piecewise-constant labelling with changes at ``points``."""
    def ev(x):
        return _Fake(sum(x >= p for p in points))
    return ev


def test_split_bisection_recovers_every_change():
    points = [0.3, 0.30001, 0.7]
    ev = _step(points)
    out = _split_bisect(ev, 0.0, 0.5, ev(0.0), ev(0.5), verdict_key, lambda a, b: b - a <= 1e-12, [10_000])
    assert [round(a, 9) for a, b, _, _ in out] == [0.3, 0.30001]
    assert all(b - a <= 1e-12 for a, b, _, _ in out)


def test_split_bisection_respects_budget():
    ev = _step([0.123])
    out = _split_bisect(ev, 0.0, 1.0, ev(0.0), ev(1.0), verdict_key, lambda a, b: False, [5])
    assert len(out) == 1 and out[0][1] - out[0][0] == pytest.approx(1 / 32)


def test_boundary_exact_position_orders_below_one_ulp():
    a = Boundary(0.1, 1e-20, 3e-20, 0, 1)
    b = Boundary(0.1, 5e-20, 7e-20, 1, 0)
    assert a.position == b.position
    assert a.exact < b.exact
    assert a.exact == Fraction(0.1) + (Fraction(1e-20) + Fraction(3e-20)) / 2


@pytest.fixture(scope="module")
def section_201():
    f = logistic(0.201)
    return Section(flow_context(__import__("ratetip").builtin_system("quadratic-fold", 0.01), f,
                                IntegratorSettings()), f.inverse(-0.7))


def test_offset_lift_keeps_f_equal(section_201):
    s = section_201
    xb = -0.2
    yb = s.lift(xb)
    for p in (1e-12, -3e-9, 1e-5):
        q = s.offset_y(xb, yb, p)
        # f = x(x - 1) + y + lam, so equal f means q = -p (2 xb - 1 + p)
        assert q == pytest.approx(-p * (2 * xb - 1 + p), rel=1e-14)


def test_locate_finds_the_upper_edge_of_the_destabilized_band(section_201):
    bds = locate(section_201, -0.1, 0.1, verdict_key)
    assert len(bds) == 1
    bd = bds[0]
    assert bd.position == pytest.approx(-0.015420, abs=2e-6)
    assert bd.width <= 1e-15
    assert bd.verdict_change and bd.key_lo == 1 and bd.key_hi == 0


def test_locate_on_equal_keys_is_empty(section_201):
    assert locate(section_201, -1.4, -1.3, verdict_key) == []
    with pytest.raises(SectionError):
        locate(section_201, 0.1, -0.1, verdict_key)


def test_keys(section_201):
    r = section_201.run(-0.2)
    assert verdict_key(r) == 1
    assert itinerary_key(2)(r) == (1, tuple(r.itinerary[:2]))
    assert jump_key(r) == (1, 2)


def test_section_outside_window():
    f = logistic(0.201)
    ctx = flow_context(__import__("ratetip").builtin_system("quadratic-fold", 0.01), f, IntegratorSettings())
    with pytest.raises(DomainError):
        Section(ctx, ctx.tau_end + 1.0)
