"""Trajectories of the full, reduced and desingularized systems with verdict events.

Full-system verdicts:

* destabilized  x reaches x_F(lambda) + escape_offset while moving right
* tracked       within tracking_tube of the stable state at the horizon, or earlier
                once past the last folded singularity
* exhausted     horizon reached elsewhere, or the step cap was hit
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels as K
from .desing import DesingularizedField, find_folded_singularities
from .errors import DomainError, SchemaError, SingularityError, StiffnessError
from .geometry import equilibrium_curve, fold_curve, manifold_y
from .model import ForcingProfile, SystemDefinition

TRACKED, DESTABILIZED, EXHAUSTED, HIT_FOLD = "tracked", "destabilized", "exhausted", "hit-fold"
VERDICTS = (TRACKED, DESTABILIZED, EXHAUSTED, HIT_FOLD)
CODE_TO_VERDICT = {K.CODE_TRACKED: TRACKED, K.CODE_ESCAPED: DESTABILIZED, K.CODE_EXHAUSTED: EXHAUSTED}
VERDICT_CODES = {TRACKED: 0, DESTABILIZED: 1, EXHAUSTED: 2, HIT_FOLD: 3}
_REASONS = {K.REASON_NONE: "", K.REASON_HORIZON: "horizon", K.REASON_CAP: "step-cap", K.REASON_EARLY: "early"}


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.1
    escape_offset: float = 1.5
    tracking_tube: float = 0.05
    horizon: float | None = None
    max_steps: int = 2_000_000
    jump_margin: float = 0.05
    dwell_tube: float = 0.05
    dwell_min_slope: float = 0.05
    event_tol: float = 1e-10
    early_tracking: bool = True
    method: str = "dopri5"
    stiff_fallback: bool = True
    collapse: float = 1e-3
    rate_floor: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("rel_tol", "abs_tol", "max_step", "escape_offset", "tracking_tube",
                     "jump_margin", "dwell_tube", "dwell_min_slope", "event_tol", "collapse", "rate_floor"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise SchemaError(f"integrator setting {name} must be positive, got {v!r}")
        if self.horizon is not None and not math.isfinite(self.horizon):
            raise SchemaError("horizon must be finite")
        if self.max_steps <= 0:
            raise SchemaError("max_steps must be positive")
        if self.method not in ("dopri5", "radau"):
            raise SchemaError(f"unknown integration method {self.method!r}")


@dataclass
class Trajectory:
    samples: np.ndarray
    verdict: str
    event_time: float
    final_distance: float
    itinerary: tuple[int, ...] = ()
    dwell: float = 0.0
    max_x: float = math.nan
    n_steps: int = 0
    reason: str = ""
    tau: np.ndarray | None = None  # slow time along desingularized trajectories

    @property
    def t(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def y(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def lam(self) -> np.ndarray:
        return self.samples[:, 3]

    def comoving(self) -> np.ndarray:
        """Samples as (t, x, y + lambda, lambda)."""
        out = self.samples.copy()
        out[:, 2] = out[:, 2] + out[:, 3]
        return out


# -- compiled context -------------------------------------------------------------------

_FORCING_CODES = {"constant": 0, "logistic-tanh": 1, "exponential-approach": 2, "linear-saturating-ramp": 3}


@dataclass(frozen=True)
class FlowContext:
    """Arrays handed to the compiled integrator for one (system, forcing, settings)."""

    sys: SystemDefinition
    forcing: ForcingProfile
    settings: IntegratorSettings
    polys: tuple
    forc: np.ndarray
    tab_lo: float
    tab_step: float
    xf_tab: np.ndarray
    xeq_tab: np.ndarray
    cfg: np.ndarray
    tau_end: float
    last_singularity: float | None = None
    singularities: tuple = field(default=(), repr=False)

    def args(self):
        fe, fc, ge, gc, fxe, fxc = self.polys
        return fe, fc, ge, gc, fxe, fxc, self.forc, self.tab_lo, self.tab_step, self.xf_tab, self.xeq_tab, self.cfg

    def fold_x(self, lam):
        return np.interp(lam, self.tab_lo + self.tab_step * np.arange(self.xf_tab.size), self.xf_tab)

    def stable_x(self, lam):
        return np.interp(lam, self.tab_lo + self.tab_step * np.arange(self.xeq_tab.size), self.xeq_tab)


def horizon(forcing: ForcingProfile, settings: IntegratorSettings) -> float:
    tau_end = settings.horizon if settings.horizon is not None else forcing.settle_time(settings.rate_floor)
    return min(tau_end, forcing.tau_domain[1])


@lru_cache(maxsize=64)
def flow_context(sys: SystemDefinition, forcing: ForcingProfile, settings: IntegratorSettings) -> FlowContext:
    if sys.delta <= 0.0:
        raise DomainError("full-system integration needs delta > 0")
    p = sys.partials
    fe, fc = p.f.arrays()
    ge, gc = p.g.arrays()
    fxe, fxc = p.fx.arrays()
    lo, hi = forcing.lambda_min, forcing.lambda_max
    if hi - lo < 1e-9:
        lo, hi = lo - 1e-3, hi + 1e-3
    n_tab = 2001
    lams = np.linspace(lo, hi, n_tab)
    xf, _ = fold_curve(sys, lams)
    xeq, _ = equilibrium_curve(sys, lams)
    sing = tuple(find_folded_singularities(sys, forcing))
    last = max((s.tau_star for s in sing), default=None)
    tstar = last if (settings.early_tracking and last is not None) else math.inf
    forc = np.array([_FORCING_CODES[forcing.kind], forcing.lambda_max, forcing.lambda_min,
                     forcing.tau_domain[0], forcing.tau_domain[1]], dtype=float)
    if forcing.kind != "linear-saturating-ramp":
        forc[3:] = 0.0
    s = settings
    tau_end = horizon(forcing, settings)
    cfg = np.zeros(K.SETTINGS_SIZE)
    cfg[K.C_RTOL], cfg[K.C_ATOL], cfg[K.C_HMAX] = s.rel_tol, s.abs_tol, s.max_step
    cfg[K.C_ESC], cfg[K.C_RHO], cfg[K.C_TEND], cfg[K.C_TSTAR] = s.escape_offset, s.tracking_tube, tau_end, tstar
    cfg[K.C_MAXSTEPS], cfg[K.C_MARGIN], cfg[K.C_ETA], cfg[K.C_FXMIN] = s.max_steps, s.jump_margin, s.dwell_tube, s.dwell_min_slope
    cfg[K.C_EVTOL], cfg[K.C_DELTA], cfg[K.C_EPS], cfg[K.C_COLLAPSE] = s.event_tol, sys.delta, forcing.epsilon, s.collapse
    return FlowContext(sys, forcing, settings, (fe, fc, ge, gc, fxe, fxc), forc, float(lo),
                       float((hi - lo) / (n_tab - 1)), xf, xeq, cfg, tau_end, last, sing)


def _check_init(ctx: FlowContext, tau0: float) -> None:
    if not ctx.forcing.contains(tau0):
        raise DomainError(f"tau0={tau0} outside the forcing domain {ctx.forcing.tau_domain}")
    if tau0 >= ctx.tau_end:
        raise DomainError(f"tau0={tau0} is not before the horizon {ctx.tau_end}")


# -- single runs ------------------------------------------------------------------------


@dataclass
class RawRun:
    """Result of one compiled run."""

    code: int
    reason: int
    tau: float
    x: float
    y: float
    max_x: float
    dwell: float
    n_steps: int
    itinerary: tuple[int, ...]
    dist: float
    tau_max_x: float
    samples: np.ndarray | None = None
    steps: np.ndarray | None = None

    @property
    def verdict(self) -> str:
        return CODE_TO_VERDICT.get(self.code, EXHAUSTED)


def _unpack(res, itin, rec=None, hs=None) -> RawRun:
    n_it = int(res[K.R_NITIN])
    samples = None if rec is None else rec[: int(res[K.R_NREC])].copy()
    steps = None if hs is None else hs[: int(res[K.R_NHS])].copy()
    return RawRun(int(res[K.R_CODE]), int(res[K.R_REASON]), res[K.R_TAU], res[K.R_X], res[K.R_Y],
                  res[K.R_MAXX], res[K.R_DWELL], int(res[K.R_STEPS]), tuple(int(v) for v in itin[:n_it]),
                  res[K.R_DIST], res[K.R_TMAXX], samples, steps)


def run_state(
    ctx: FlowContext,
    x0: float, y0: float, tau0: float,
    offset: tuple[float, float] = (0.0, 0.0),
    replay: np.ndarray | None = None,
    record: int = 0,
    keep_steps: bool = False,
) -> RawRun:
    """One compiled run; ``replay`` switches on offset mode about (x0, y0)."""
    res = np.zeros(K.RESULT_SIZE)
    itin = np.zeros(K.ITIN_CAP, dtype=np.int64)
    rec = np.zeros((record, 3))
    hs = np.zeros(int(ctx.settings.max_steps) if keep_steps else 0)
    hs_in = np.zeros(0) if replay is None else replay
    K.integrate(float(x0), float(y0), float(tau0), float(offset[0]), float(offset[1]), hs_in, hs_in.size,
                *ctx.args(), res, itin, rec, hs)
    return _unpack(res, itin, rec if record else None, hs if keep_steps else None)


def run_offsets(ctx: FlowContext, x0: float, y0: float, tau0: float, ps, qs, replay: np.ndarray):
    """Offset-mode runs for many offsets about one base state (sequential)."""
    ps = np.ascontiguousarray(ps, dtype=float)
    qs = np.ascontiguousarray(qs, dtype=float)
    res = np.zeros((ps.size, K.RESULT_SIZE))
    itins = np.zeros((ps.size, K.ITIN_CAP), dtype=np.int64)
    K.integrate_offsets(float(x0), float(y0), float(tau0), ps, qs, replay, replay.size, *ctx.args(), res, itins)
    return [_unpack(res[i], itins[i]) for i in range(ps.size)]


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def run_batch(ctx: FlowContext, x0s, y0s, tau0s, workers: int | None = None):
    """Plain runs of many initial conditions split into static contiguous blocks.

    Returns (results (n, RESULT_SIZE), itineraries (n, ITIN_CAP)).  Each block is
    written by exactly one worker, so the output does not depend on ``workers``.
    """
    x0s = np.ascontiguousarray(x0s, dtype=float).ravel()
    y0s = np.ascontiguousarray(y0s, dtype=float).ravel()
    tau0s = np.ascontiguousarray(np.broadcast_to(tau0s, x0s.shape), dtype=float)
    n = x0s.size
    res = np.zeros((n, K.RESULT_SIZE))
    itins = np.zeros((n, K.ITIN_CAP), dtype=np.int64)
    workers = default_workers() if workers is None else max(1, int(workers))
    bounds = np.linspace(0, n, min(workers, max(n, 1)) + 1).astype(int)
    args = ctx.args()

    def block(k):
        a, b = bounds[k], bounds[k + 1]
        if b > a:
            K.integrate_batch(x0s[a:b], y0s[a:b], tau0s[a:b], *args, res[a:b], itins[a:b])

    if len(bounds) <= 2:
        block(0)
    else:
        with ThreadPoolExecutor(max_workers=len(bounds) - 1) as pool:
            list(pool.map(block, range(len(bounds) - 1)))
    return res, itins


# -- public integrators ------------------------------------------------------------------


def integrate_full(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    init: tuple[float, float, float],
    settings: IntegratorSettings | None = None,
    *,
    max_samples: int = 500_000,
) -> Trajectory:
    """Integrate delta*eps*dx/dtau = f, eps*dy/dtau = g from (x0, y0, tau0) until a verdict."""
    settings = settings or IntegratorSettings()
    x0, y0, tau0 = (float(v) for v in init)
    if not all(math.isfinite(v) for v in (x0, y0, tau0)):
        raise DomainError("initial state must be finite")
    ctx = flow_context(sys, forcing, settings)
    _check_init(ctx, tau0)
    if settings.method == "radau":
        return _integrate_radau(ctx, x0, y0, tau0)
    raw = run_state(ctx, x0, y0, tau0, record=max_samples)
    if raw.code == K.CODE_STIFF:
        if settings.stiff_fallback:
            return _integrate_radau(ctx, x0, y0, tau0)
        raise StiffnessError(f"step size underflow at tau={raw.tau:.12g}", (raw.tau, raw.x, raw.y))
    return raw_to_trajectory(ctx, raw)


def raw_to_trajectory(ctx: FlowContext, raw: RawRun) -> Trajectory:
    rec = raw.samples if raw.samples is not None else np.array([[raw.tau, raw.x, raw.y]])
    keep = np.concatenate([[True], np.diff(rec[:, 0]) > 0.0])
    rec = rec[keep]
    lam = ctx.forcing.value(rec[:, 0])
    samples = np.column_stack([rec, lam])
    return Trajectory(samples, raw.verdict, raw.tau, raw.dist, raw.itinerary, raw.dwell, raw.max_x,
                      raw.n_steps, _REASONS.get(raw.reason, ""))


def _integrate_radau(ctx: FlowContext, x0: float, y0: float, tau0: float) -> Trajectory:
    """Implicit fallback with the exact Jacobian; events mirror the compiled integrator."""
    sys, forcing, s = ctx.sys, ctx.forcing, ctx.settings
    p = sys.partials
    eps, de = forcing.epsilon, sys.delta * forcing.epsilon
    tstar = ctx.cfg[K.C_TSTAR]

    def rhs(t, z):
        lam = float(forcing.value(t))
        return [p.f(float(z[0]), float(z[1]), lam) / de, p.g(float(z[0]), float(z[1]), lam) / eps]

    def jac(t, z):
        lam = float(forcing.value(t))
        a = (float(z[0]), float(z[1]), lam)
        return [[p.fx(*a) / de, p.fy(*a) / de], [p.gx(*a) / eps, p.gy(*a) / eps]]

    def escape(t, z):
        return z[0] - (ctx.fold_x(forcing.value(t)) + s.escape_offset)

    escape.terminal, escape.direction = True, 1.0

    def early(t, z):
        if t <= tstar:
            return 1.0
        return abs(z[0] - ctx.stable_x(forcing.value(t))) - s.tracking_tube

    early.terminal, early.direction = True, -1.0
    sol = solve_ivp(rhs, (tau0, ctx.tau_end), [x0, y0], method="Radau", jac=jac, rtol=max(s.rel_tol, 1e-10),
                    atol=s.abs_tol, max_step=s.max_step, events=[escape, early], dense_output=False)
    tau, x, y = sol.t[-1], sol.y[0, -1], sol.y[1, -1]
    dist = abs(x - ctx.stable_x(forcing.value(tau)))
    reason = "horizon"
    if sol.status == 1 and sol.t_events[0].size:
        verdict = DESTABILIZED
        reason = ""
    elif sol.status == 1 and sol.t_events[1].size:
        verdict, reason = TRACKED, "early"
    elif sol.status == 0:
        verdict = TRACKED if dist <= s.tracking_tube else EXHAUSTED
    else:
        raise StiffnessError(f"implicit integration failed: {sol.message}", (tau, x, y))
    samples = np.column_stack([sol.t, sol.y[0], sol.y[1], forcing.value(sol.t)])
    itin, dwell = itinerary_of(ctx, samples)
    if verdict == DESTABILIZED:
        itin = itin + ((K.SYM_UP,) if not itin or itin[-1] != K.SYM_UP else ()) + (K.SYM_ESCAPE,)
    else:
        itin = itin + ((K.SYM_TRACK,) if verdict == TRACKED else (K.SYM_EXHAUST,))
    return Trajectory(samples, verdict, tau, dist, itin, dwell, float(np.max(sol.y[0])), sol.t.size - 1, reason)


def itinerary_of(ctx: FlowContext, samples: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Fold-crossing symbols (with hysteresis) and dwell near S^r for recorded samples."""
    s = ctx.settings
    p = ctx.sys.partials
    xf = ctx.fold_x(samples[:, 3])
    side = 1 if samples[0, 1] > xf[0] + s.jump_margin else 0
    out = []
    for xv, xfv in zip(samples[1:, 1], xf[1:]):
        if side == 0 and xv > xfv + s.jump_margin:
            side = 1
            out.append(K.SYM_UP)
        elif side == 1 and xv < xfv - s.jump_margin:
            side = 0
            out.append(K.SYM_DOWN)
    fx = p.fx(samples[:, 1], samples[:, 2], samples[:, 3])
    f = p.f(samples[:, 1], samples[:, 2], samples[:, 3])
    near = (fx >= s.dwell_min_slope) & (np.abs(f) <= s.dwell_tube * fx)
    dwell = float(np.sum(np.diff(samples[:, 0])[near[1:]]))
    return tuple(out), dwell


def integrate_reduced(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    init: tuple[float, float],
    settings: IntegratorSettings | None = None,
    *,
    blowup: float = 1e6,
) -> Trajectory:
    """Slow flow on S, dx/dtau from the reduced field, stopping if it blows up at the fold."""
    settings = settings or IntegratorSettings()
    fld = DesingularizedField(sys, forcing)
    x0, tau0 = float(init[0]), float(init[1])
    if not forcing.contains(tau0):
        raise DomainError(f"tau0={tau0} outside the forcing domain")
    lam0 = forcing.value(tau0)
    y0 = manifold_y(sys, x0, lam0)
    if abs(sys.partials.fx(x0, y0, lam0)) <= 1e-12:
        raise SingularityError("reduced flow cannot start on the fold")
    sign0 = math.copysign(1.0, sys.partials.fx(x0, y0, lam0))
    sing = find_folded_singularities(sys, forcing)
    tstar = max((s_.tau_star for s_ in sing), default=None)
    tstar = tstar if (settings.early_tracking and tstar is not None) else math.inf
    tau_end = horizon(forcing, settings)
    eq_lams = np.linspace(forcing.lambda_min, forcing.lambda_max, 401) if forcing.lambda_max > forcing.lambda_min \
        else np.array([forcing.lambda_max - 1e-3, forcing.lambda_max + 1e-3])
    xeq, _ = equilibrium_curve(sys, eq_lams)

    def x_stable(t):
        return float(np.interp(forcing.value(t), eq_lams, xeq))

    def rhs(t, z):
        return [float(fld.reduced(float(z[0]), float(t)))]

    def _fold_terms(t, z):
        lam = float(forcing.value(t))
        y = manifold_y(sys, float(z[0]), lam)
        fx = sys.partials.fx(float(z[0]), y, lam)
        return fx, fld.numerator(float(z[0]), y, lam, float(forcing.rate(t)))

    def blows_up(t, z):
        fx, num = _fold_terms(t, z)
        return abs(fld.epsilon * fx) * blowup - abs(num)

    def crosses_fold(t, z):
        return sign0 * _fold_terms(t, z)[0]

    for ev in (blows_up, crosses_fold):
        ev.terminal, ev.direction = True, -1.0

    def early(t, z):
        if t <= tstar:
            return 1.0
        return abs(z[0] - x_stable(t)) - settings.tracking_tube

    early.terminal, early.direction = True, -1.0
    sol = solve_ivp(rhs, (tau0, tau_end), [x0], method="DOP853", rtol=1e-11, atol=1e-12,
                    max_step=settings.max_step, events=[blows_up, crosses_fold, early])
    tau, x = float(sol.t[-1]), float(sol.y[0, -1])
    dist = abs(x - x_stable(tau))
    reason = ""
    if sol.status == 1 and (sol.t_events[0].size or sol.t_events[1].size):
        verdict = HIT_FOLD
    elif sol.status == 1:
        verdict, reason = TRACKED, "early"
    elif sol.status == 0:
        verdict = TRACKED if dist <= settings.tracking_tube else EXHAUSTED
        reason = "horizon"
    else:
        raise SingularityError(f"reduced integration failed: {sol.message}")
    lam = forcing.value(sol.t)
    samples = np.column_stack([sol.t, sol.y[0], manifold_y(sys, sol.y[0], lam), lam])
    return Trajectory(samples, verdict, tau, dist, (), 0.0, float(np.max(sol.y[0])), sol.t.size - 1, reason)


def integrate_desing(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    init: tuple[float, float],
    s_span: tuple[float, float],
    settings: IntegratorSettings | None = None,
    *,
    x_bound: float = 50.0,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    max_step: float = np.inf,
) -> Trajectory:
    """Desingularized flow in time s (either direction); samples are (s, x, y, lambda).

    Stops early if tau leaves the scan window of the forcing or |x| exceeds ``x_bound``.
    The verdict is always ``exhausted``; the field has no escape or tracking semantics.
    """
    fld = DesingularizedField(sys, forcing)
    x0, tau0 = float(init[0]), float(init[1])
    lo, hi = forcing.scan_window(1e-9)
    lo_d, hi_d = forcing.tau_domain
    lo = max(lo, lo_d + 1e-12) if math.isfinite(lo_d) else lo
    hi = min(hi, hi_d)

    def rhs(s, z):
        t = float(min(max(z[1], lo), hi))
        a, b = fld.rhs(float(z[0]), t)
        return [a, b]

    def leave_lo(s, z):
        return z[1] - lo

    def leave_hi(s, z):
        return hi - z[1]

    def leave_x(s, z):
        return x_bound - abs(z[0])

    for ev in (leave_lo, leave_hi, leave_x):
        ev.terminal, ev.direction = True, -1.0
    sol = solve_ivp(rhs, s_span, [x0, tau0], method="DOP853", rtol=rtol, atol=atol, max_step=max_step,
                    events=[leave_lo, leave_hi, leave_x])
    xs, ts = sol.y[0], np.clip(sol.y[1], lo, hi)
    lam = forcing.value(ts)
    samples = np.column_stack([sol.t, xs, manifold_y(sys, xs, lam), lam])
    return Trajectory(samples, EXHAUSTED, float(sol.t[-1]), math.nan, (), 0.0, float(np.max(xs)), sol.t.size - 1,
                      "left-window" if sol.status == 1 else "span", tau=ts)


def with_horizon(settings: IntegratorSettings, tau_end: float) -> IntegratorSettings:
    return replace(settings, horizon=float(tau_end))
