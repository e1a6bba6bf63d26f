"""Verdict grids over initial states on S, band structure along transects, and the
critical rate measured at delta > 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import _kernels as K
from .desing import CriticalRateReport, estimate_critical_rate
from .errors import BracketError, DomainError, SchemaError, SideError
from .flow import (
    CODE_TO_VERDICT, DESTABILIZED, EXHAUSTED, TRACKED, IntegratorSettings, flow_context, integrate_full,
    run_batch,
)
from .geometry import ATTRACTING, REPELLING, manifold_y
from .model import ForcingProfile, SystemDefinition
from .sections import Boundary, Section, hidden_bands, itinerary_key, jump_key, locate

SIDES = {"sa": ATTRACTING, "sr": REPELLING, ATTRACTING: ATTRACTING, REPELLING: REPELLING}
CODE_NAMES = {0: TRACKED, 1: DESTABILIZED, 2: EXHAUSTED}


@dataclass(frozen=True)
class GridSpec:
    x_lo: float
    x_hi: float
    n_x: int
    lam_lo: float
    lam_hi: float
    n_lam: int
    side: str = "sa"

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise SchemaError(f"side must be 'sa' or 'sr', got {self.side!r}")
        for name in ("n_x", "n_lam"):
            if int(getattr(self, name)) < 1:
                raise SchemaError(f"{name} must be at least 1")
        if self.x_hi < self.x_lo or self.lam_hi < self.lam_lo:
            raise SchemaError("grid ranges must satisfy lo <= hi")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    @property
    def lams(self) -> np.ndarray:
        return np.linspace(self.lam_lo, self.lam_hi, self.n_lam)


@dataclass
class ScanGrid:
    """Verdict codes (0 tracked, 1 destabilized, 2 exhausted) with shape (n_lam, n_x)."""

    spec: GridSpec
    sys: SystemDefinition
    forcing: ForcingProfile
    settings: IntegratorSettings
    tau0: np.ndarray
    codes: np.ndarray
    reasons: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.spec.xs

    @property
    def lam(self) -> np.ndarray:
        return self.spec.lams

    @property
    def side(self) -> str:
        return SIDES[self.spec.side]

    @property
    def verdicts(self) -> np.ndarray:
        return np.vectorize(CODE_NAMES.get, otypes=[object])(self.codes)

    @property
    def exhausted_fraction(self) -> float:
        return float(np.mean(self.codes == 2))

    @property
    def unreliable(self) -> bool:
        return self.exhausted_fraction > 0.01

    def fraction(self, verdict: str) -> float:
        code = {v: k for k, v in CODE_NAMES.items()}[verdict]
        return float(np.mean(self.codes == code))

    def rows(self):
        """(lambda, x, verdict) per cell, lambda-major."""
        for i, lam in enumerate(self.lam):
            for j, x in enumerate(self.x):
                yield float(lam), float(x), CODE_NAMES[int(self.codes[i, j])]


def _tau_of(forcing: ForcingProfile, lam: float) -> float | None:
    if forcing.kind == "constant":
        return forcing.tau_domain[0] if math.isfinite(forcing.tau_domain[0]) else 0.0
    try:
        return forcing.inverse(lam)
    except DomainError:
        return None


def _check_side(ctx, xs: np.ndarray, lam: float, side: str) -> None:
    xf = float(ctx.fold_x(lam))
    if side == ATTRACTING and np.any(xs > xf):
        raise SideError(f"x up to {xs.max():.6g} crosses the fold x_F={xf:.6g} at lambda={lam:.6g}; use side 'sr'")
    if side == REPELLING and np.any(xs < xf):
        raise SideError(f"x down to {xs.min():.6g} lies below the fold x_F={xf:.6g} at lambda={lam:.6g}")


def classify_grid(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    spec: GridSpec,
    settings: IntegratorSettings | None = None,
    *,
    workers: int | None = None,
) -> ScanGrid:
    """Verdict of the run started at each grid cell, lifted onto S.

    Rows whose lambda has no start time (range edge) or lies past the horizon are
    exhausted with a reason.  Cells are split into static blocks, so the result does not
    depend on ``workers``.
    """
    settings = settings or IntegratorSettings()
    ctx = flow_context(sys, forcing, settings)
    side = SIDES[spec.side]
    xs, lams = spec.xs, spec.lams
    taus = np.full(lams.size, np.nan)
    reasons = {}
    for i, lam in enumerate(lams):
        t = _tau_of(forcing, float(lam))
        if t is None:
            reasons[i] = "no start time for this lambda"
        elif t >= ctx.tau_end:
            reasons[i] = "start time past the horizon"
        else:
            taus[i] = t
            _check_side(ctx, xs, float(lam), side)
    codes = np.full((lams.size, xs.size), 2, dtype=np.int8)
    ok = np.flatnonzero(np.isfinite(taus))
    if ok.size:
        gx = np.tile(xs, ok.size)
        glam = np.repeat(lams[ok], xs.size)
        gy = manifold_y(sys, gx, glam)
        gt = np.repeat(taus[ok], xs.size)
        res, _ = run_batch(ctx, gx, gy, gt, workers)
        c = res[:, K.R_CODE].astype(np.int64)
        for k in np.flatnonzero(c == K.CODE_STIFF):
            tr = integrate_full(sys, forcing, (gx[k], gy[k], gt[k]), replace(settings, method="radau"))
            c[k] = {TRACKED: 0, DESTABILIZED: 1}.get(tr.verdict, 2)
        codes[ok] = c.reshape(ok.size, xs.size)
    return ScanGrid(spec, sys, forcing, settings, taus, codes, reasons)


# -- band structure ------------------------------------------------------------------


@dataclass
class Band:
    x_lo: float
    x_hi: float
    verdict: str
    lower: Boundary | None
    upper: Boundary | None

    @property
    def width(self) -> float:
        if self.lower is not None and self.upper is not None:
            return float(self.upper.exact - self.lower.exact)
        return self.x_hi - self.x_lo


@dataclass
class BandStructure:
    """Verdict boundaries along the section of S at one lambda.

    ``boundaries`` are the verdict changes in increasing order; ``canards`` are the
    places where only the jump side changes.
    """

    transect: float
    section: Section
    x_range: tuple[float, float]
    boundaries: list[Boundary]
    bands: list[Band]
    canards: list[Boundary]
    refined: bool

    @property
    def positions(self) -> np.ndarray:
        return np.array([b.position for b in self.boundaries])

    def count(self, verdict: str) -> int:
        return sum(b.verdict == verdict for b in self.bands)

    def narrow_tracked(self, width: float = 1e-3) -> list[Band]:
        return [b for b in self.bands
                if b.verdict == TRACKED and b.lower is not None and b.upper is not None and b.width <= width]

    def rows(self):
        for k, b in enumerate(self.bands):
            yield {"band": k, "verdict": b.verdict, "x_lo": b.x_lo, "x_hi": b.x_hi, "width": b.width}


def _dedupe(bounds: list[Boundary], tol: Fraction = Fraction(1, 10**15)) -> list[Boundary]:
    bounds = sorted(bounds, key=lambda b: b.exact)
    out: list[Boundary] = []
    for b in bounds:
        if out and abs(b.exact - out[-1].exact) <= tol * max(1, abs(out[-1].exact)) \
                and b.run_lo.code == out[-1].run_lo.code and b.run_hi.code == out[-1].run_hi.code:
            if b.width < out[-1].width:
                out[-1] = b
            continue
        out.append(b)
    return out


def extract_bands(
    grid: ScanGrid,
    transect: float,
    refine: bool = True,
    *,
    min_samples: int = 241,
    probe_hidden: bool = True,
    x_range: tuple[float, float] | None = None,
    workers: int | None = None,
) -> BandStructure:
    """Verdict boundaries on the section at lambda = ``transect`` across the grid's x-range.

    The x-range is sampled afresh (at least ``min_samples`` points).  With ``refine``,
    every change of (verdict, leading itinerary) between neighbours is bisected; a
    midpoint with a third label splits the bracket, which recovers bands far narrower
    than the sampling step.  Where only the jump side changes, nearby offsets are probed
    for hidden verdict changes.  ``x_range`` overrides the grid's x-range.
    """
    lo_l, hi_l = min(grid.spec.lam_lo, grid.spec.lam_hi), max(grid.spec.lam_lo, grid.spec.lam_hi)
    if not lo_l <= transect <= hi_l:
        raise DomainError(f"transect lambda={transect} outside the grid range [{lo_l}, {hi_l}]")
    tau0 = _tau_of(grid.forcing, transect)
    if tau0 is None:
        raise DomainError(f"no start time for lambda={transect}")
    ctx = flow_context(grid.sys, grid.forcing, grid.settings)
    section = Section(ctx, tau0, workers)
    n = max(grid.spec.n_x, min_samples) if refine else grid.spec.n_x
    x_lo, x_hi = (grid.spec.x_lo, grid.spec.x_hi) if x_range is None else x_range
    xs = np.linspace(x_lo, x_hi, n)
    _check_side(ctx, xs, transect, grid.side)
    runs = section.runs(xs)
    key = itinerary_key(4)
    changes: list[Boundary] = []
    for i in range(n - 1):
        if refine and key(runs[i]) != key(runs[i + 1]):
            changes += locate(section, xs[i], xs[i + 1], key, run_lo=runs[i], run_hi=runs[i + 1])
        elif not refine and runs[i].code != runs[i + 1].code:
            changes.append(Boundary(xs[i], 0.0, xs[i + 1] - xs[i], runs[i].code, runs[i + 1].code,
                                    runs[i], runs[i + 1]))
    if refine and probe_hidden:
        extra = []
        for b in changes:
            if b.run_lo.code == b.run_hi.code and jump_key(b.run_lo) != jump_key(b.run_hi):
                extra += hidden_bands(section, b)
        changes = changes + extra
    changes = _dedupe(changes)
    verdict_bounds = [b for b in changes if b.verdict_change]
    canards = [b for b in changes if {jump_key(b.run_lo), jump_key(b.run_hi)} == {(1, 2), (1, -1)}]
    bands = []
    edges = [None] + verdict_bounds + [None]
    first = CODE_TO_VERDICT.get(runs[0].code, EXHAUSTED)
    for k in range(len(edges) - 1):
        lo_b, hi_b = edges[k], edges[k + 1]
        code = runs[0].code if lo_b is None else lo_b.run_hi.code
        bands.append(Band(float(xs[0]) if lo_b is None else lo_b.position,
                          float(xs[-1]) if hi_b is None else hi_b.position,
                          CODE_TO_VERDICT.get(code, EXHAUSTED) if lo_b is not None else first, lo_b, hi_b))
    return BandStructure(float(transect), section, (float(xs[0]), float(xs[-1])), verdict_bounds, bands,
                         canards, refine)


# -- critical rate at delta > 0 ---------------------------------------------------------


def _peak_search(section: Section, lo: float, hi: float, levels: int, points: int) -> tuple[bool, float, float]:
    """Zoom onto the seed with the largest excursion in x; True once one escapes."""
    best_x, best = lo, -math.inf
    for _ in range(levels):
        xs = np.linspace(lo, hi, points)
        runs = section.runs(xs)
        for x, r in zip(xs, runs):
            if r.code == K.CODE_ESCAPED:
                return True, float(x), math.inf
        peaks = np.array([r.max_x for r in runs])
        k = int(np.argmax(peaks))
        best_x, best = float(xs[k]), float(peaks[k])
        w = (hi - lo) / (points - 1)
        lo, hi = max(xs[0], best_x - 2 * w), min(xs[-1], best_x + 2 * w)
    return False, best_x, best


def destabilizes(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    spec: GridSpec,
    settings: IntegratorSettings | None = None,
    *,
    transect: float | None = None,
    levels: int = 8,
    points: int = 41,
    workers: int | None = None,
) -> bool:
    """Whether some state of the grid region destabilizes: a coarse grid, then a peak zoom."""
    grid = classify_grid(sys, forcing, spec, settings, workers=workers)
    if np.any(grid.codes == 1):
        return True
    lam = 0.5 * (spec.lam_lo + spec.lam_hi) if transect is None else transect
    tau0 = _tau_of(forcing, lam)
    if tau0 is None:
        return False
    section = Section(flow_context(sys, forcing, settings or IntegratorSettings()), tau0, workers)
    return _peak_search(section, spec.x_lo, spec.x_hi, levels, points)[0]


def empirical_critical_rate(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    delta,
    eps_bracket: tuple[float, float],
    spec: GridSpec,
    settings: IntegratorSettings | None = None,
    *,
    transect: float | None = None,
    tol: float = 1e-4,
    rel_tol: float | None = None,
    workers: int | None = None,
) -> CriticalRateReport:
    """Largest epsilon without destabilization at each delta, by bisection.

    ``tol`` bounds the final bracket width; ``rel_tol`` (a fraction of delta) tightens it
    when the correction is expected to be small.  With several deltas the exponent of
    E_delta = eps_c(delta) - eps_c(0) is fitted by least squares in log-log.
    """
    deltas = [float(d) for d in np.atleast_1d(delta)]
    if not deltas or min(deltas) <= 0.0:
        raise SchemaError("delta values must be positive")
    singular = estimate_critical_rate(sys, forcing)
    report = CriticalRateReport(epsilon_c_singular=singular.epsilon_c_singular, tau_window=singular.tau_window)
    lo0, hi0 = float(eps_bracket[0]), float(eps_bracket[1])
    if not 0.0 < lo0 < hi0:
        raise BracketError(f"invalid epsilon bracket ({lo0}, {hi0})")
    for d in deltas:
        s_d = sys.with_delta(d)

        def probe(e):
            return destabilizes(s_d, forcing.with_epsilon(e), spec, settings, transect=transect, workers=workers)

        if probe(lo0):
            raise BracketError(f"destabilization already at the lower end epsilon={lo0} (delta={d})")
        if not probe(hi0):
            raise BracketError(f"no destabilization at the upper end epsilon={hi0} (delta={d})")
        width = tol if rel_tol is None else min(tol, rel_tol * d)
        lo, hi = lo0, hi0
        while hi - lo > width:
            mid = 0.5 * (lo + hi)
            if probe(mid):
                hi = mid
            else:
                lo = mid
        report.per_delta[d] = 0.5 * (lo + hi)
    first = deltas[0]
    report.epsilon_c_empirical = report.per_delta[first]
    report.E_delta = report.epsilon_c_empirical - report.epsilon_c_singular
    report.order_exponent = fit_exponent(report)
    return report


def fit_exponent(report: CriticalRateReport) -> float | None:
    """Slope of log E_delta against log delta over the positive corrections."""
    pts = [(d, e - report.epsilon_c_singular) for d, e in sorted(report.per_delta.items())]
    pts = [(d, e) for d, e in pts if e > 0.0]
    if len(pts) < 2:
        return None
    ld, le = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(ld, le, 1)[0])
