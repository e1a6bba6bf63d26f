from __future__ import annotations

import numpy as np
import pytest

from ratetip.desing import CriticalRateReport
from ratetip.errors import BracketError, DomainError, SchemaError, SideError
from ratetip.scan import GridSpec, classify_grid, empirical_critical_rate, extract_bands, fit_exponent

from conftest import exponential, logistic

TRANSECT = -0.7
SA_RANGE = GridSpec(-1.5, 0.4999, 3, -0.8, -0.6, 3)
SR_RANGE = GridSpec(0.5001, 2.5, 3, -0.8, -0.6, 3, "sr")


def test_gridspec_validation():
    with pytest.raises(SchemaError):
        GridSpec(0, 1, 0, 0, 1, 3)
    with pytest.raises(SchemaError):
        GridSpec(1, 0, 3, 0, 1, 3)
    with pytest.raises(SchemaError):
        GridSpec(0, 1, 3, 0, 1, 3, "middle")
    g = GridSpec(-1, 0, 5, -2, 2, 3)
    assert g.xs.tolist() == [-1, -0.75, -0.5, -0.25, 0] and g.lams.tolist() == [-2, 0, 2]


def test_side_mismatch_is_reported(quad):
    with pytest.raises(SideError):
        classify_grid(quad, logistic(0.1), GridSpec(-1.0, 0.6, 4, -1.0, 1.0, 2))
    with pytest.raises(SideError):
        classify_grid(quad, logistic(0.1), GridSpec(0.4, 1.0, 4, -1.0, 1.0, 2, "sr"))


def test_slow_grid_tracks_everywhere(quad):
    g = classify_grid(quad, logistic(0.1), GridSpec(-0.25, 0.25, 5, -2.0, 2.0, 4))
    assert g.codes.shape == (4, 5)
    assert g.fraction("tracked") == 1.0 and not g.unreliable
    rows = list(g.rows())
    assert len(rows) == 20 and rows[0] == (-2.0, -0.25, "tracked")


def test_rows_outside_forcing_range_are_exhausted(quad):
    g = classify_grid(quad, exponential(1.0), GridSpec(-1.0, 0.0, 3, -0.5, 1.0, 2))
    assert g.verdicts[0].tolist() == ["exhausted"] * 3
    assert 0 in g.reasons and g.exhausted_fraction == 0.5
    assert g.unreliable


def test_worker_count_does_not_change_the_grid(quad):
    spec = GridSpec(-1.0, 0.45, 7, -1.5, 0.5, 5)
    a = classify_grid(quad, logistic(0.216), spec, workers=1)
    b = classify_grid(quad, logistic(0.216), spec, workers=4)
    assert np.array_equal(a.codes, b.codes)


def _bands(quad, eps, spec=SA_RANGE):
    return extract_bands(classify_grid(quad, logistic(eps), spec), TRANSECT)


def test_three_bands_at_0201(quad):
    bs = _bands(quad, 0.201)
    assert [b.verdict for b in bs.bands] == ["tracked", "destabilized", "tracked"]
    assert bs.positions == pytest.approx([-0.374513, -0.015420], abs=2e-6)
    assert bs.count("destabilized") == 1 and bs.narrow_tracked() == []
    rows = list(bs.rows())
    assert rows[1]["verdict"] == "destabilized" and rows[1]["width"] == pytest.approx(0.359093, abs=5e-6)


def test_unrefined_bands_agree_to_sampling_step(quad):
    spec = GridSpec(-1.5, 0.4999, 241, -0.7, -0.7, 1)
    g = classify_grid(quad, logistic(0.201), spec)
    coarse = extract_bands(g, TRANSECT, refine=False)
    fine = extract_bands(g, TRANSECT)
    step = (spec.x_hi - spec.x_lo) / (spec.n_x - 1)
    assert len(coarse.boundaries) == len(fine.boundaries)
    assert np.all(np.abs(coarse.positions - fine.positions) <= step)


def test_transect_outside_grid(quad):
    g = classify_grid(quad, logistic(0.201), SA_RANGE)
    with pytest.raises(DomainError):
        extract_bands(g, 1.0)


@pytest.mark.parametrize("eps", [0.201, 0.216, 0.27])
def test_repelling_side_mirrors_the_attracting_side(quad, eps):
    sa = [b.verdict for b in _bands(quad, eps).bands]
    sr = [b.verdict for b in _bands(quad, eps, SR_RANGE).bands]
    assert sr == sa[::-1]


def test_empirical_rate_bracket_checks(quad):
    spec = GridSpec(-0.6, 0.2, 5, -0.8, -0.6, 2)
    with pytest.raises(BracketError):
        empirical_critical_rate(quad, logistic(0.2), 0.01, (0.25, 0.3), spec, transect=TRANSECT)
    with pytest.raises(BracketError):
        empirical_critical_rate(quad, logistic(0.2), 0.01, (0.1, 0.15), spec, transect=TRANSECT)
    with pytest.raises(SchemaError):
        empirical_critical_rate(quad, logistic(0.2), [0.0], (0.1, 0.3), spec)


def test_fit_exponent_recovers_power_law():
    rep = CriticalRateReport(0.2, per_delta={d: 0.2 + 0.3 * d ** 0.25 for d in (1e-2, 1e-3, 1e-4)})
    assert fit_exponent(rep) == pytest.approx(0.25, abs=1e-9)
    assert fit_exponent(CriticalRateReport(0.2, per_delta={1e-2: 0.21})) is None
