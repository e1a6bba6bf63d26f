"""Acceptance criteria A1-A10.

Each test prints one ``A<n> PASS|FAIL`` line with the measured quantities and its
runtime, then asserts the criterion at its stated tolerance.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.interpolate import CubicHermiteSpline

from ratetip.canard import (
    COMPOSITE, FOLDED_SADDLE, SADDLE_STABLE, SECONDARY_NODE, STRONG_NODE, canard_family,
    detect_composites, maximal_canard, singular_canards,
)
from ratetip.cli import BAND_RANGE, BAND_TRANSECT, TRACK_GRID, run
from ratetip.desing import DesingularizedField, estimate_critical_rate, find_folded_singularities
from ratetip.flow import IntegratorSettings, integrate_desing, integrate_reduced, with_horizon
from ratetip.model import ForcingProfile, builtin_system
from ratetip.output import read_records
from ratetip.scan import GridSpec, classify_grid, empirical_critical_rate, extract_bands

LAMBDA_MAX = 2.5
DELTA = 0.01
NODE_FOCUS = (2 + math.sqrt(4 + LAMBDA_MAX ** 2)) / (8 * LAMBDA_MAX)
TAU_T = math.atanh(BAND_TRANSECT / LAMBDA_MAX)  # section of the band transect


def logistic(eps: float) -> ForcingProfile:
    return ForcingProfile("logistic-tanh", LAMBDA_MAX, eps)


def exponential(eps: float) -> ForcingProfile:
    return ForcingProfile("exponential-approach", LAMBDA_MAX, eps)


def logistic_roots(lam: float, eps: float) -> np.ndarray:
    return np.roots([1.0, 1.0, -4 * eps ** 2 * lam * (1 - (lam / LAMBDA_MAX) ** 2)])


def exponential_roots(eps: float) -> np.ndarray:
    lam = LAMBDA_MAX - 1 / (2 * eps)
    return np.roots([1.0, 1.0, 2 * eps ** 2 * (lam - LAMBDA_MAX)])


def root_error(got, want) -> float:
    def key(z):
        return z.real, z.imag

    got = sorted((complex(v) for v in got), key=key)
    want = sorted((complex(v) for v in want), key=key)
    return max(abs(a - b) for a, b in zip(got, want))


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{name} {'PASS' if ok else 'FAIL'} ({time.perf_counter() - start:.1f}s) {detail}")
        assert ok, f"{name}: {detail}"

    return emit


@pytest.fixture(scope="module")
def sys0():
    return builtin_system("paper-example", DELTA)


# cached so A8 reuses what A7 computed, while each test's printed runtime covers its own work
@lru_cache(maxsize=None)
def band_structure(eps: float):
    grid = classify_grid(builtin_system("paper-example", DELTA), logistic(eps), GridSpec(-1.5, 0.49, 2, -2.4, 2.4, 2))
    return extract_bands(grid, BAND_TRANSECT, x_range=BAND_RANGE, min_samples=2001)


@lru_cache(maxsize=None)
def family(eps: float):
    return canard_family(builtin_system("paper-example", DELTA), logistic(eps), section_tau=TAU_T)


def test_a1_singular_critical_rate(tmp_path, report, capsys):
    cfg = tmp_path / "logistic.yaml"
    cfg.write_text("forcing: {kind: logistic-tanh, lambda_max: 2.5, epsilon: 0.3}\n")
    code = run(["critical-rate", "--config", str(cfg), "--out", str(tmp_path)])
    _, (rec,) = read_records((tmp_path / "critical_rate.jsonl").read_text())
    capsys.readouterr()
    err = abs(rec["epsilon_c_singular"] - 0.2)
    report("A1", code == 0 and err <= 1e-6, f"eps_c={rec['epsilon_c_singular']!r} |error|={err:.2e}")


def test_a2_logistic_singularities(sys0, report):
    eps = 0.216
    sing = find_folded_singularities(sys0, logistic(eps))
    lam_star = math.sqrt(LAMBDA_MAX * (LAMBDA_MAX - 1 / (2 * eps)))
    by_sign = {int(np.sign(s.lambda_star)): s for s in sing}
    ok = len(sing) == 2 and set(by_sign) == {-1, 1}
    loc_err = eig_err = math.inf
    if ok:
        loc_err = max(abs(by_sign[1].lambda_star - lam_star), abs(by_sign[-1].lambda_star + lam_star))
        eig_err = max(root_error(s.eigenvalues, logistic_roots(s.lambda_star, eps)) for s in sing)
        ok = (by_sign[1].kind == "folded-saddle" and by_sign[-1].kind == "folded-node-stable"
              and loc_err <= 1e-8 and eig_err <= 1e-8)
    kinds = [(round(s.lambda_star, 4), s.kind) for s in sing]
    report("A2", ok, f"{kinds} location error={loc_err:.1e} eigenvalue error={eig_err:.1e}")


def test_a3_node_focus_transition(sys0, report):
    def negative(eps):
        return [s for s in find_folded_singularities(sys0, logistic(eps)) if s.lambda_star < 0]

    (below,) = negative(NODE_FOCUS - 0.002)
    (above,) = negative(NODE_FOCUS + 0.002)
    focus_canards = singular_canards(above)
    ok = (below.kind.startswith("folded-node") and above.kind.startswith("folded-focus")
          and focus_canards == [] and len(singular_canards(below)) == 2)
    report("A3", ok, f"eps={NODE_FOCUS - 0.002:.4f}: {below.kind}, eps={NODE_FOCUS + 0.002:.4f}: {above.kind}, "
                     f"focus canards={len(focus_canards)}")


def test_a4_exponential_isolated_saddle(sys0, report):
    sing = find_folded_singularities(sys0, exponential(1.0))
    ok = len(sing) == 1
    detail = f"{len(sing)} singularities"
    if ok:
        (s,) = sing
        eig_err = root_error(s.eigenvalues, exponential_roots(1.0))
        ok = s.kind == "folded-saddle" and abs(s.lambda_star - 2.0) <= 1e-8 and eig_err <= 1e-8
        detail = f"{s.kind} at lambda*={s.lambda_star!r} eigenvalue error={eig_err:.1e}"
    report("A4", ok, detail)


def test_a5_subcritical_tracking(sys0, report):
    assert (TRACK_GRID.n_x, TRACK_GRID.n_lam) == (100, 100)
    grid = classify_grid(sys0, logistic(0.06), TRACK_GRID)
    frac = grid.fraction("tracked")
    report("A5", frac == 1.0, f"tracked fraction={frac} over {grid.codes.size} cells")


def test_a6_exponential_threshold_follows_saddle_canard(sys0, report):
    f = exponential(1.0)
    (s,) = find_folded_singularities(sys0, f)
    (stable,) = [c for c in singular_canards(s) if c.branch == SADDLE_STABLE]
    canard = maximal_canard(sys0, f, stable, section_tau=float(f.inverse(0.1)))
    grid = classify_grid(sys0, f, GridSpec(-1.5, 0.49, 2, 0.05, 2.4, 2))
    worst_count, worst_gap = 0, 0.0
    # transects up to lambda = 1.8 keep the canard at x <= 0.25, clear of the fold
    for lam in np.linspace(0.15, 1.8, 20):
        bs = extract_bands(grid, float(lam))
        worst_count = max(worst_count, len(bs.boundaries))
        if len(bs.boundaries) == 1:
            gap = abs(bs.positions[0] - float(canard.x_at(float(f.inverse(lam)))))
            worst_gap = max(worst_gap, gap)
        else:
            worst_gap = math.inf
    report("A6", worst_count <= 1 and worst_gap <= 0.03,
           f"max boundaries per transect={worst_count} max |boundary - canard|={worst_gap:.4f}")


def test_a7_band_structure(report):
    b1, b4, b27 = band_structure(0.201), band_structure(0.204), band_structure(0.270)
    fs1 = family(0.201).by_kind(FOLDED_SADDLE)[0].seed_parameter
    sn1 = family(0.201).by_kind(STRONG_NODE)[0].seed_parameter
    sn4 = family(0.204).by_kind(STRONG_NODE)[0].seed_parameter
    destab = [b for b in b1.bands if b.verdict == "destabilized"]
    d1 = destab[0] if destab else None
    enclosed = len(destab) == 1 and abs(d1.x_lo - fs1) <= 1e-6 and abs(d1.x_hi - sn1) <= 1e-6
    narrow = [b for b in b4.narrow_tracked(1e-3) if b.x_lo >= sn4 - 1e-9]
    checks = {
        "0.201": len(b1.bands) == 3 and b1.count("destabilized") == 1 and enclosed,
        "0.204": b4.count("destabilized") >= 3 and len(narrow) >= 2,
        "0.270": len(b27.boundaries) == 1,
    }
    detail = (f"0.201: bands={len(b1.bands)} destabilized={[(round(float(b.x_lo), 6), round(float(b.x_hi), 6)) for b in destab]} "
              f"canards=({fs1:.6f}, {sn1:.6f}); 0.204: destabilized={b4.count('destabilized')} "
              f"narrow tracked above strong canard={len(narrow)}; 0.270: boundaries={len(b27.boundaries)}")
    report("A7", all(checks.values()), detail)


def test_a8_composite_canards(report):
    fam = family(0.204)
    bs = band_structure(0.204)
    comps = detect_composites(bs, fam.maximal, fam.singular)
    uppers = [b.upper.position for b in bs.narrow_tracked(1e-3)]
    kinds = [[k for k, _ in c.segments] for c in comps]
    ok = (len(uppers) >= 2 and len(comps) == 2 and all(c.kind == COMPOSITE for c in comps)
          and abs(comps[0].seed_parameter - uppers[0]) <= 1e-6
          and abs(comps[1].seed_parameter - uppers[1]) <= 1e-6
          and kinds[0] == [STRONG_NODE, FOLDED_SADDLE]
          and kinds[1] == [SECONDARY_NODE, FOLDED_SADDLE])
    report("A8", ok, f"segments={kinds} seeds={[round(c.seed_parameter, 6) for c in comps]}")


def _curve_gap(fld, a, b) -> float:
    """Largest distance from either curve to the other, both given as (tau, x) samples.

    The partner curve is interpolated with cubic Hermite pieces using the exact reduced
    slope, so the vertical gap bounds the Hausdorff distance from above.
    """
    lo, hi = max(a[0, 0], b[0, 0]), min(a[-1, 0], b[-1, 0])
    gap = 0.0
    for p, q in ((a, b), (b, a)):
        spline = CubicHermiteSpline(q[:, 0], q[:, 1], fld.reduced(q[:, 1], q[:, 0]))
        m = (p[:, 0] >= lo) & (p[:, 0] <= hi)
        gap = max(gap, float(np.max(np.abs(p[m, 1] - spline(p[m, 0])))))
    return gap


def test_a9_oracle_equivalence(sys0, report):
    rng = np.random.default_rng(2024)
    settings = IntegratorSettings(max_step=0.01, early_tracking=False)
    worst_gap = 0.0
    for f, lam_rng in ((logistic(0.3), (-2.0, 1.5)), (exponential(0.3), (0.2, 2.0))):
        fld = DesingularizedField(sys0, f)
        for _ in range(20):
            x0 = rng.uniform(-1.2, 0.2)
            tau0 = float(f.inverse(rng.uniform(*lam_rng)))
            des = integrate_desing(sys0, f, (x0, tau0), (0.0, 0.3 / f.epsilon), max_step=0.01 / f.epsilon)
            keep = np.cumsum(des.x >= 0.4) == 0
            des_curve = np.column_stack([des.tau[keep], des.x[keep]])
            red = integrate_reduced(sys0, f, (x0, tau0), with_horizon(settings, float(des_curve[-1, 0])))
            worst_gap = max(worst_gap, _curve_gap(fld, des_curve, red.samples[:, :2]))
    worst_eig = 0.0
    for eps in rng.uniform(0.2005, NODE_FOCUS + 0.3, 50):
        for s in find_folded_singularities(sys0, logistic(float(eps))):
            worst_eig = max(worst_eig, root_error(np.linalg.eigvals(s.jacobian), logistic_roots(s.lambda_star, eps)))
    for eps in rng.uniform(0.21, 5.0, 50):
        (s,) = find_folded_singularities(sys0, exponential(float(eps)))
        worst_eig = max(worst_eig, root_error(np.linalg.eigvals(s.jacobian), exponential_roots(eps)))
    report("A9", worst_gap <= 1e-6 and worst_eig <= 1e-8,
           f"max curve gap={worst_gap:.2e} over 40 segments, max eigenvalue error={worst_eig:.2e} over 100 draws")


def test_a10_delta_convergence(report):
    sys_ = builtin_system("paper-example")
    deltas = [1e-2, 1e-3, 1e-4]
    rep = empirical_critical_rate(sys_, logistic(0.2), deltas, (0.195, 0.3),
                                  GridSpec(-0.6, 0.2, 9, -0.8, -0.6, 3), transect=BAND_TRANSECT, rel_tol=1e-3)
    eps_c = [rep.per_delta[d] for d in deltas]
    singular = estimate_critical_rate(sys_, logistic(0.2)).epsilon_c_singular
    increasing = all(a < b for a, b in zip(eps_c, eps_c[1:])) and all(e <= singular + 1e-9 for e in eps_c)
    converging = all(abs(b - singular) < abs(a - singular) for a, b in zip(eps_c, eps_c[1:]))
    exponent = rep.order_exponent
    in_window = exponent is not None and 0.10 <= exponent <= 0.40
    report("A10", increasing and converging and in_window,
           f"eps_c={[round(e, 9) for e in eps_c]} increasing toward {singular:.6f}={increasing} "
           f"converging={converging} exponent={exponent}")
