"""Initial-condition sections on S and boundary location along them.

A section is the set of points (x, y(x)) of S at a fixed start time tau0.  Runs
started on it are labelled by a key (verdict, leading itinerary symbols); the
places where the key changes are found by bisection.

Bisection runs in two stages.  Plain runs are used until the bracket is
``switch`` wide.  After that the lower end becomes a base state whose accepted
steps are recorded, and the bracket is resolved in offset mode: the perturbed
run replays the base steps and integrates the difference exactly, so the key is
a clean function of the offset far below the plain-run step noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Hashable

import numpy as np

from . import _kernels as K
from .errors import DomainError, SectionError
from .flow import FlowContext, RawRun, run_batch, run_offsets, run_state, _unpack
from .geometry import manifold_y

Key = Hashable


def verdict_key(run: RawRun) -> Key:
    return run.code


def itinerary_key(depth: int = 4) -> Callable[[RawRun], Key]:
    def key(run: RawRun) -> Key:
        return (run.code, run.itinerary[:depth])
    return key


def jump_key(run: RawRun) -> Key:
    """Which way the run leaves the repelling side the first time."""
    return run.itinerary[:2]


@dataclass
class Base:
    """A recorded plain run used as the origin of offset-mode runs."""

    section: "Section"
    x: float
    y: float
    run: RawRun

    def offsets(self, ps) -> list[RawRun]:
        ps = np.atleast_1d(np.asarray(ps, dtype=float))
        qs = np.array([self.section.offset_y(self.x, self.y, p) for p in ps])
        return run_offsets(self.section.ctx, self.x, self.y, self.section.tau0, ps, qs, self.run.steps)

    def at(self, p: float) -> RawRun:
        if p == 0.0:
            return self.run
        return self.offsets([p])[0]


@dataclass
class Section:
    ctx: FlowContext
    tau0: float
    workers: int | None = None
    n_runs: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if not self.ctx.forcing.contains(self.tau0) or self.tau0 >= self.ctx.tau_end:
            raise DomainError(f"section time {self.tau0} outside the integration window")
        self.lam0 = float(self.ctx.forcing.value(self.tau0))
        self._fe, self._fc = self.ctx.polys[0], self.ctx.polys[1]
        self._fy = self.ctx.sys.partials.fy

    def lift(self, x):
        return manifold_y(self.ctx.sys, x, self.lam0)

    def offset_y(self, xb: float, yb: float, p: float) -> float:
        """q with f(xb + p, yb + q) = f(xb, yb), from the exact difference of f."""
        fy = float(self._fy(xb, yb, self.lam0))
        q = -p * float(self.ctx.sys.partials.fx(xb, yb, self.lam0)) / fy
        for _ in range(20):
            r = K.pdiff(self._fe, self._fc, xb, yb, p, q, self.lam0)
            dq = r / float(self._fy(xb + p, yb + q, self.lam0))
            q -= dq
            if abs(dq) <= 1e-17 * max(abs(q), 1e-300):
                break
        return q

    def run(self, x: float) -> RawRun:
        self.n_runs += 1
        return run_state(self.ctx, x, self.lift(x), self.tau0)

    def runs(self, xs) -> list[RawRun]:
        xs = np.asarray(xs, dtype=float)
        self.n_runs += xs.size
        res, itins = run_batch(self.ctx, xs, self.lift(xs), self.tau0, self.workers)
        return [_unpack(res[i], itins[i]) for i in range(xs.size)]

    def base(self, x: float) -> Base:
        self.n_runs += 1
        y = float(self.lift(x))
        return Base(self, float(x), y, run_state(self.ctx, x, y, self.tau0, keep_steps=True))


@dataclass(frozen=True)
class Boundary:
    """A key change between base + lo and base + hi (lo < hi)."""

    base: float
    lo: float
    hi: float
    key_lo: Key
    key_hi: Key
    run_lo: RawRun = field(repr=False, compare=False, default=None)
    run_hi: RawRun = field(repr=False, compare=False, default=None)

    @property
    def position(self) -> float:
        return self.base + 0.5 * (self.lo + self.hi)

    @property
    def offset(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def exact(self) -> Fraction:
        """Position as an exact rational, for ordering boundaries closer than one ulp."""
        return Fraction(self.base) + (Fraction(self.lo) + Fraction(self.hi)) / 2

    @property
    def verdict_change(self) -> bool:
        return self.run_lo is not None and self.run_hi is not None and self.run_lo.code != self.run_hi.code


def _split_bisect(ev, lo, hi, run_lo, run_hi, key, done, budget):
    """Bisect [lo, hi] on ``key``; a midpoint with a third key splits the bracket.

    Returns finished brackets (lo, hi, run_lo, run_hi) ordered by position.
    """
    out = []
    stack = [(lo, hi, run_lo, run_hi)]
    while stack:
        a, b, ra, rb = stack.pop()
        m = 0.5 * (a + b)
        if done(a, b) or not (a < m < b) or budget[0] <= 0:
            out.append((a, b, ra, rb))
            continue
        budget[0] -= 1
        rm = ev(m)
        km = key(rm)
        if km == key(ra):
            stack.append((m, b, rm, rb))
        elif km == key(rb):
            stack.append((a, m, ra, rm))
        else:
            stack.append((m, b, rm, rb))
            stack.append((a, m, ra, rm))
    out.sort(key=lambda t: t[0])
    return out


def locate(
    section: Section,
    x_lo: float, x_hi: float,
    key: Callable[[RawRun], Key],
    *,
    run_lo: RawRun | None = None,
    run_hi: RawRun | None = None,
    switch: float = 1e-7,
    tol: float = 1e-18,
    budget: int = 4000,
) -> list[Boundary]:
    """All key changes found by split bisection of [x_lo, x_hi].

    Brackets end ``tol`` wide in offset coordinates, far below the spacing of doubles
    near x; each boundary keeps its base so positions stay exact.
    """
    if not x_lo < x_hi:
        raise SectionError("empty bracket", {"x_lo": x_lo, "x_hi": x_hi})
    run_lo = run_lo or section.run(x_lo)
    run_hi = run_hi or section.run(x_hi)
    if key(run_lo) == key(run_hi):
        return []
    left = [budget]
    coarse = _split_bisect(section.run, x_lo, x_hi, run_lo, run_hi, key,
                           lambda a, b: b - a <= switch, left)
    found: list[Boundary] = []
    for a, b, ra, rb in coarse:
        base = section.base(a)
        kb = key(rb)
        w = b - a
        rw = base.at(w)
        # replayed steps can move the far end across; widen until it matches again
        tries = 0
        while key(rw) == key(base.run) and tries < 6:
            w *= 2.0
            rw = base.at(w)
            tries += 1
        if key(rw) == key(base.run):
            found.append(Boundary(a, 0.0, b - a, key(ra), kb, ra, rb))
            continue
        fine = _split_bisect(base.at, 0.0, w, base.run, rw, key,
                             lambda p, q: q - p <= max(tol, 4e-16 * abs(q)), left)
        for p, q, rp, rq in fine:
            found.append(Boundary(a, p, q, key(rp), key(rq), rp, rq))
    found.sort(key=lambda bd: bd.exact)
    return found


def hidden_bands(
    section: Section,
    boundary: Boundary,
    *,
    k_min: float = 1e-15,
    k_max: float = 1e-7,
    n_probe: int = 33,
    tol: float = 1e-18,
) -> list[Boundary]:
    """Verdict changes within ``k_max`` of a boundary that plain sampling cannot see.

    Offsets are probed on a log scale on both sides; every verdict change between
    consecutive probes is bisected in offset mode.
    """
    base = section.base(boundary.base)
    ks = np.logspace(math.log10(k_min), math.log10(k_max), n_probe)
    found = []
    for sign, p0, r0 in ((-1.0, boundary.lo, boundary.run_lo), (1.0, boundary.hi, boundary.run_hi)):
        ps = p0 + sign * ks
        runs = base.offsets(ps)
        section.n_runs += len(runs)
        seq = [(p0, r0 if r0 is not None else base.at(p0))] + list(zip(ps, runs))
        for (pa, ra), (pb, rb) in zip(seq[:-1], seq[1:]):
            if ra.code == rb.code:
                continue
            lo, hi, rl, rh = (pa, pb, ra, rb) if pa < pb else (pb, pa, rb, ra)
            left = [400]
            for p, q, rp, rq in _split_bisect(base.at, lo, hi, rl, rh, verdict_key,
                                              lambda u, v: v - u <= max(tol, 4e-16 * abs(v)), left):
                found.append(Boundary(boundary.base, p, q, rp.code, rq.code, rp, rq))
    found.sort(key=lambda bd: bd.exact)
    return found
