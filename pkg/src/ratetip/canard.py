"""Singular canards, maximal canards and composite canards."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import least_squares

from .desing import FoldedSingularity
from .errors import DegeneracyError, DomainError, SectionError
from .flow import IntegratorSettings, RawRun, flow_context, integrate_desing, run_state
from .model import ForcingProfile, SystemDefinition
from .sections import Boundary, Section, jump_key, locate

SEED_OFFSET = 1e-6
WEAK_HALF = 0.2
SHADOW_TUBE = 0.05

SADDLE_STABLE, SADDLE_UNSTABLE = "saddle-stable", "saddle-unstable"
NODE_STRONG, NODE_WEAK = "node-strong", "node-weak"

FOLDED_SADDLE, STRONG_NODE, WEAK_NODE = "folded-saddle", "strong-node", "weak-node"
SECONDARY_NODE, COMPOSITE = "secondary-node", "composite"
NODE_KINDS = (STRONG_NODE, WEAK_NODE, SECONDARY_NODE)

_BRANCH_KIND = {SADDLE_STABLE: FOLDED_SADDLE, NODE_STRONG: STRONG_NODE, NODE_WEAK: WEAK_NODE}
_ESCAPE, _RETURN = (1, 2), (1, -1)


@dataclass
class SingularCanard:
    """Reduced-flow solution through a folded singularity along one eigendirection.

    ``path`` holds (x, tau) rows ordered by tau; the singular point itself is one of them.
    """

    singularity: FoldedSingularity
    branch: str
    direction: np.ndarray
    path: np.ndarray
    _slopes: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)
    _spline: object = field(default=None, init=False, repr=False, compare=False)

    @property
    def x(self) -> np.ndarray:
        return self.path[:, 0]

    @property
    def tau(self) -> np.ndarray:
        return self.path[:, 1]

    @property
    def lam(self) -> np.ndarray:
        return self.singularity.field.forcing.value(self.tau)

    def slopes(self) -> np.ndarray:
        """dx/dtau along the path from the desingularized field; the eigenvector slope at the singular point."""
        if self._slopes is None:
            fld = self.singularity.field
            n, d = fld.rhs(self.x, self.tau)
            n, d = np.asarray(n, float), np.asarray(d, float)
            eig = self.direction[0] / self.direction[1] if self.direction[1] != 0.0 else np.inf
            ok = np.abs(d) > 1e-9
            self._slopes = np.where(ok, n / np.where(ok, d, 1.0), eig)
        return self._slopes

    def x_at(self, tau) -> np.ndarray:
        """x of the path at ``tau`` by cubic Hermite interpolation (nan outside its tau range)."""
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.tau, self.x, self.slopes(), extrapolate=False)
        return self._spline(tau)

    def tangent_angle(self, samples: int = 1) -> float:
        """Angle between the path chord leaving the singular point and the eigenvector."""
        s = self.singularity
        i = int(np.argmin(np.hypot(self.x - s.x_star, self.tau - s.tau_star)))
        j = i + samples if i + samples < len(self.path) else i - samples
        chord = self.path[j] - self.path[i]
        c = abs(float(np.dot(chord, self.direction))) / float(np.hypot(*chord))
        return math.acos(min(1.0, c))


@dataclass
class MaximalCanard:
    """Boundary trajectory of the jump dichotomy on a section of S^a.

    ``path`` rows are (tau, x, y).  The seed is ``seed_base + seed_offset`` on the
    section at ``section_tau``; ``seed_parameter`` is that sum rounded to a float.
    """

    kind: str
    seed_parameter: float
    seed_base: float
    seed_offset: float
    seed_width: float
    section_tau: float
    path: np.ndarray
    dwell_s_r: float
    verdict: str
    itinerary: tuple[int, ...]
    segments: list[tuple[str, tuple[float, float]]] = field(default_factory=list)
    singular: SingularCanard | None = field(default=None, repr=False)
    boundary: Boundary | None = field(default=None, repr=False)

    @property
    def tau(self) -> np.ndarray:
        return self.path[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.path[:, 1]

    def x_at(self, tau) -> np.ndarray:
        return np.interp(tau, self.tau, self.x, left=np.nan, right=np.nan)

    def header(self) -> dict:
        rec = {"kind": self.kind, "seed": self.seed_parameter, "section_tau": self.section_tau,
               "dwell": self.dwell_s_r, "verdict": self.verdict}
        if self.singular is not None:
            s = self.singular.singularity
            rec.update(x_star=s.x_star, tau_star=s.tau_star, lambda_star=s.lambda_star)
        if self.segments:
            rec["segments"] = ";".join(f"{k}[{a:.6g},{b:.6g}]" for k, (a, b) in self.segments)
        return rec


# -- singular canards -------------------------------------------------------------------


def _branches(s: FoldedSingularity) -> list[tuple[str, np.ndarray, float]]:
    if not s.is_real:
        return []
    (x1, x2), vecs = s.eigenvalues, s.eigenvectors
    v1, v2 = vecs[:, 0], vecs[:, 1]
    if s.kind == "folded-saddle":
        return [(SADDLE_STABLE, v1, x1.real), (SADDLE_UNSTABLE, v2, x2.real)]
    if s.kind.startswith("folded-node"):
        if abs(float(v1[0] * v2[1] - v1[1] * v2[0])) <= 1e-8:
            raise DegeneracyError(f"folded node at tau={s.tau_star:.6g} has a defective Jacobian")
        return [(NODE_STRONG, v1, x1.real), (NODE_WEAK, v2, x2.real)]
    if s.kind == "folded-saddle-node-I":
        # only the hyperbolic direction carries a well-defined canard
        return [(NODE_STRONG, v1, x1.real)]
    return []


def singular_canards(
    singularity: FoldedSingularity, *, seed_offset: float = SEED_OFFSET, s_max: float = 1e4,
) -> list[SingularCanard]:
    """Eigendirection solutions of the desingularized flow through ``singularity``.

    Foci and centres have none.  Both seeds (x*, tau*) +- seed_offset*v are integrated
    away from the singular point and joined through it.
    """
    s = singularity
    fld = s.field
    out = []
    for branch, v, xi in _branches(s):
        direction = -1.0 if xi < 0.0 else 1.0  # leave the singular point
        if branch == NODE_WEAK:
            core = _weak_core(s, v)
            ends = (core[0], core[-1])
        else:
            core = np.array([[s.x_star, s.tau_star]])
            ends = tuple(np.array([s.x_star, s.tau_star]) + sign * seed_offset * v for sign in (-1.0, 1.0))
        pieces = []
        for x0, t0 in ends:
            tr = integrate_desing(fld.sys, fld.forcing, (x0, t0), (0.0, direction * s_max))
            pieces.append(np.column_stack([tr.x, tr.tau]))
        path = np.vstack([pieces[0][::-1], core, pieces[1]])
        path = path[np.argsort(path[:, 1], kind="stable")]
        keep = np.concatenate([[True], np.diff(path[:, 1]) > 0.0])
        out.append(SingularCanard(s, branch, np.asarray(v, float), path[keep]))
    return out


def _weak_core(s: FoldedSingularity, v: np.ndarray, half: float = WEAK_HALF, degree: int = 14, nodes: int = 120):
    """Weak-direction solution near a folded node as a polynomial x(tau).

    Every funnel solution is tangent to the weak direction, and integrating away from
    the node along it is unstable, so the smooth invariant curve is fitted instead by
    collocating the invariance condition on [tau* - half, tau* + half].
    """
    fld = s.field
    lo, hi = fld.forcing.scan_window(1e-9)
    half = min(half, 0.5 * (s.tau_star - lo), 0.5 * (hi - s.tau_star))
    u = half * np.cos(np.pi * (np.arange(nodes) + 0.5) / nodes)
    head = [s.x_star, v[0] / v[1]]

    def residual(c):
        coef = np.concatenate([head, c])
        x = P.polyval(u, coef)
        a, b = fld.rhs(x, s.tau_star + u)
        return P.polyval(u, P.polyder(coef)) * b - a

    sol = least_squares(residual, np.zeros(degree - 1), method="lm", xtol=1e-15, ftol=1e-15)
    side = np.geomspace(1e-6, half, 120)
    uu = np.concatenate([-side[::-1], [0.0], side])
    return np.column_stack([P.polyval(uu, np.concatenate([head, sol.x])), s.tau_star + uu])


# -- maximal canards --------------------------------------------------------------------


def _section_tau(ctx, singular: SingularCanard, clearance: float) -> float:
    s = singular.singularity
    if singular.branch == NODE_WEAK:
        # beyond the fitted core the weak solution is no longer distinguished
        return float(max(s.tau_star - 0.75 * WEAK_HALF, ctx.forcing.scan_window(1e-9)[0]))
    part = singular.path[(singular.tau < s.tau_star) & (singular.x < s.x_star)]
    lo = max(ctx.forcing.tau_domain[0], -math.inf)
    part = part[part[:, 1] > lo + 1e-9] if math.isfinite(lo) else part
    if part.size == 0:
        raise SectionError("singular canard has no attracting part to seed from",
                           {"branch": singular.branch, "tau_star": s.tau_star})
    gap = ctx.fold_x(ctx.forcing.value(part[:, 1])) - part[:, 0]
    ok = np.flatnonzero(gap >= clearance)
    if ok.size:
        return float(part[ok[-1], 1])
    near = np.flatnonzero(part[:, 1] >= s.tau_star - 1.0)
    near = near if near.size else np.arange(len(part))
    return float(part[near[np.argmax(gap[near])], 1])


def _record(section: Section, bd: Boundary, prefer: str = "dwell", samples: int = 200_000) -> tuple[RawRun, float]:
    """Recorded run at the boundary side with the longer repelling dwell."""
    ra, rb = bd.run_lo, bd.run_hi
    take_hi = rb.dwell > ra.dwell if prefer == "dwell" else prefer == "hi"
    p = bd.hi if take_hi else bd.lo
    base = section.base(bd.base)
    q = section.offset_y(base.x, base.y, p)
    run = run_state(section.ctx, base.x, base.y, section.tau0, offset=(p, q),
                    replay=base.run.steps, record=samples)
    return run, p


def canard_from_boundary(section: Section, bd: Boundary, kind: str, singular: SingularCanard | None = None,
                         prefer: str = "dwell") -> MaximalCanard:
    run, p = _record(section, bd, prefer)
    path = run.samples
    path = path[np.concatenate([[True], np.diff(path[:, 0]) > 0.0])]
    return MaximalCanard(kind, float(bd.base + p), bd.base, p, bd.width, section.tau0, path, run.dwell,
                         run.verdict, run.itinerary, singular=singular, boundary=bd)


def _flips(keys) -> list[int]:
    return [i for i in range(len(keys) - 1) if {keys[i], keys[i + 1]} == {_ESCAPE, _RETURN}]


def maximal_canard(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    singular_guess: SingularCanard,
    settings: IntegratorSettings | None = None,
    *,
    section_tau: float | None = None,
    halfwidth: float = 0.05,
    n_scan: int = 41,
    clearance: float = 0.25,
    workers: int | None = None,
) -> MaximalCanard:
    """Maximal canard near ``singular_guess`` by jump-side bisection on a section of S^a."""
    if sys.delta <= 0.0:
        raise DomainError("maximal canards need delta > 0")
    kind = _BRANCH_KIND.get(singular_guess.branch)
    if kind is None:
        raise DomainError(f"branch {singular_guess.branch!r} has no maximal counterpart")
    ctx = flow_context(sys, forcing, settings or IntegratorSettings())
    tau0 = _section_tau(ctx, singular_guess, clearance) if section_tau is None else float(section_tau)
    x_c = float(singular_guess.x_at(tau0))
    if not math.isfinite(x_c):
        raise SectionError("section misses the singular canard", {"section_tau": tau0})
    section = Section(ctx, tau0, workers)
    x_fold = float(ctx.fold_x(section.lam0))
    w = halfwidth
    seen = {}
    while w <= 8 * halfwidth:
        xs = np.linspace(x_c - w, min(x_c + w, x_fold - 1e-6), n_scan)
        runs = section.runs(xs)
        keys = [jump_key(r) for r in runs]
        flips = sorted(_flips(keys), key=lambda i: abs(0.5 * (xs[i] + xs[i + 1]) - x_c))
        for i in flips:
            bds = [b for b in locate(section, xs[i], xs[i + 1], jump_key, run_lo=runs[i], run_hi=runs[i + 1])
                   if {b.key_lo, b.key_hi} == {_ESCAPE, _RETURN}]
            if bds:
                bd = min(bds, key=lambda b: abs(b.position - x_c))
                return canard_from_boundary(section, bd, kind, singular_guess)
        seen[w] = sorted({str(k) for k in keys})
        w *= 2.0
    raise SectionError("no jump dichotomy on the section",
                       {"section_tau": tau0, "x_singular": x_c, "keys_by_halfwidth": seen})


def secondary_canards(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    strong: MaximalCanard,
    upper: float | None = None,
    settings: IntegratorSettings | None = None,
    *,
    n_scan: int = 401,
    workers: int | None = None,
) -> list[MaximalCanard]:
    """Further jump-side flips above the strong canard on its section, up to ``upper``.

    Each flip is a local maximum of the repelling dwell over the seed; defaults to the
    fold as the upper end.
    """
    ctx = flow_context(sys, forcing, settings or IntegratorSettings())
    section = Section(ctx, strong.section_tau, workers)
    x_fold = float(ctx.fold_x(section.lam0))
    hi = x_fold - 1e-6 if upper is None else min(upper, x_fold - 1e-6)
    lo = strong.seed_parameter + 10 * max(strong.seed_width, 1e-12)
    if not lo < hi:
        return []
    xs = np.linspace(lo, hi, n_scan)
    runs = section.runs(xs)
    keys = [jump_key(r) for r in runs]
    out = []
    for i in _flips(keys):
        for bd in locate(section, xs[i], xs[i + 1], jump_key, run_lo=runs[i], run_hi=runs[i + 1]):
            if {bd.key_lo, bd.key_hi} == {_ESCAPE, _RETURN} and hi - bd.position > 1e-9:
                out.append(canard_from_boundary(section, bd, SECONDARY_NODE))
    return out


# -- composites -------------------------------------------------------------------------


def shadow_segments(
    path: np.ndarray,
    canards: list[MaximalCanard],
    ctx,
    tube: float = SHADOW_TUBE,
    min_length: float = 1e-3,
) -> list[tuple[str, tuple[float, float]]]:
    """Runs of tau over which ``path`` (rows tau, x, ...) follows a canard on its repelling segment.

    At each sample the closest canard within ``tube`` in x is chosen among those on the
    repelling side of the fold at that time; runs shorter than ``min_length`` are dropped.
    """
    tau, x = path[:, 0], path[:, 1]
    lam = ctx.forcing.value(tau)
    xf = ctx.fold_x(lam)
    best = np.full(tau.size, -1)
    best_d = np.full(tau.size, np.inf)
    on_sr = x > xf
    for k, c in enumerate(canards):
        xc = c.x_at(tau)
        d = np.abs(x - xc)
        ok = on_sr & (xc > xf) & (d <= tube) & (d < best_d)
        best[ok] = k
        best_d[ok] = d[ok]
    segs: list[tuple[int, float, float]] = []
    i = 0
    while i < tau.size:
        j = i
        while j + 1 < tau.size and best[j + 1] == best[i]:
            j += 1
        if best[i] >= 0 and tau[j] - tau[i] >= min_length:
            segs.append((int(best[i]), float(tau[i]), float(tau[j])))
        i = j + 1
    merged: list[list] = []
    for k, a, b in segs:
        if merged and canards[merged[-1][0]].kind == canards[k].kind and merged[-1][0] == k:
            merged[-1][2] = b
        else:
            merged.append([k, a, b])
    return [(canards[k].kind, (a, b)) for k, a, b in merged]


def is_composite(segments) -> bool:
    kinds = [k for k, _ in segments]
    for i, k in enumerate(kinds):
        if k in NODE_KINDS and FOLDED_SADDLE in kinds[i + 1:]:
            return True
    return False


def detect_composites(
    band_structure,
    canards: list[MaximalCanard],
    singular: list[SingularCanard] | None = None,
    tube: float = SHADOW_TUBE,
    *,
    narrow: float = 1e-3,
) -> list[MaximalCanard]:
    """Composite canards among the upper edges of narrow tracked bands.

    The edge trajectory is compared with the maximal canards; a node-type segment
    followed later by a folded-saddle segment makes it composite.
    """
    singularities = {id(c.singular.singularity) for c in canards if c.singular is not None}
    if singular is not None:
        singularities |= {id(s.singularity) for s in singular}
    if len(singularities) < 2 or not canards:
        return []
    section = band_structure.section
    out = []
    for band in band_structure.narrow_tracked(narrow):
        bd = band.upper
        if bd is None:
            continue
        prefer = "lo" if bd.run_lo.code == 0 else "hi"  # stay inside the tracked band
        cand = canard_from_boundary(section, bd, COMPOSITE, prefer=prefer)
        segs = shadow_segments(cand.path, canards, section.ctx, tube)
        if is_composite(segs):
            cand.segments = segs
            out.append(cand)
    return out


@dataclass
class CanardFamily:
    """All maximal canards of a forcing scenario on one common section."""

    singular: list[SingularCanard]
    maximal: list[MaximalCanard]
    failures: dict[str, str] = field(default_factory=dict)

    def by_kind(self, kind: str) -> list[MaximalCanard]:
        return [c for c in self.maximal if c.kind == kind]


def canard_family(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    settings: IntegratorSettings | None = None,
    *,
    section_tau: float | None = None,
    secondary: bool = True,
    workers: int | None = None,
) -> CanardFamily:
    """Singular canards of every folded singularity and their maximal counterparts.

    Branches whose maximal canard cannot be bracketed are recorded in ``failures``
    instead of aborting the whole family.
    """
    from .desing import find_folded_singularities

    sing = [c for s in find_folded_singularities(sys, forcing) for c in singular_canards(s)]
    fam = CanardFamily(sing, [])
    if sys.delta <= 0.0:
        return fam
    for c in sing:
        if c.branch not in _BRANCH_KIND:
            continue
        try:
            fam.maximal.append(maximal_canard(sys, forcing, c, settings, section_tau=section_tau, workers=workers))
        except (SectionError, DomainError) as exc:
            fam.failures[c.branch] = str(exc)
    strong = fam.by_kind(STRONG_NODE)
    if secondary and strong:
        weak = fam.by_kind(WEAK_NODE)
        same = weak and weak[0].section_tau == strong[0].section_tau
        upper = weak[0].seed_parameter if same else None
        fam.maximal += secondary_canards(sys, forcing, strong[0], upper, settings, workers=workers)
    return fam
