"""Critical manifold, fold and stable-state geometry of a frozen-forcing slice."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import AssumptionError, SideError
from .model import Partials, Polynomial, SystemDefinition

ROOT_TOL = 1e-12
FOLD_TOL = 1e-10
DEGENERACY_TOL = 1e-6
FOLD_EXCLUSION = 1e-9

ATTRACTING = "attracting"
REPELLING = "repelling"


@dataclass(frozen=True)
class FoldPoint:
    x_F: float
    y_F: float
    lam: float
    second_deriv: float


@dataclass(frozen=True)
class Branch:
    x: np.ndarray
    y: np.ndarray
    stability: str

    @property
    def x_interval(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])


@dataclass(frozen=True)
class CriticalManifoldSlice:
    lam: float
    branches: list[Branch]
    folds: list[FoldPoint]
    equilibrium: tuple[float, float] | None = None
    notes: list[str] = field(default_factory=list)

    def branch(self, stability: str) -> Branch:
        for b in self.branches:
            if b.stability == stability:
                return b
        raise KeyError(stability)


class ManifoldPoint(NamedTuple):
    x: float
    y: float
    on_fold: bool


# -- y on S ----------------------------------------------------------------------


@lru_cache(maxsize=64)
def _y_coefficients(f: Polynomial) -> tuple[Polynomial, ...]:
    """Split f into sum_m C_m(x, lam) * y**m and return (C_0, C_1, ...)."""
    by_power: dict[int, list] = {}
    for i, j, k, c in f.terms:
        by_power.setdefault(j, []).append((i, 0, k, c))
    deg = max(by_power, default=0)
    return tuple(Polynomial(tuple(by_power.get(m, ()))) for m in range(deg + 1))


def manifold_y(sys: SystemDefinition, x, lam, y_ref=None):
    """y(x) on S at frozen lambda.

    Exact when f is affine in y; otherwise the real root of f(x, ., lam) is taken,
    nearest to ``y_ref`` when several exist.
    """
    coeffs = _y_coefficients(sys.f_poly)
    x_arr = np.asarray(x, dtype=float)
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), x_arr.shape)
    if len(coeffs) == 2:
        a = np.asarray(coeffs[0](x_arr, 0.0, lam_arr), dtype=float)
        b = np.asarray(coeffs[1](x_arr, 0.0, lam_arr), dtype=float)
        if np.any(b == 0.0):
            raise AssumptionError("critical manifold is not a graph over x (df/dy vanishes)")
        y = -a / b
        return y if y.ndim else float(y)
    flat_x = np.atleast_1d(x_arr).ravel()
    flat_l = np.atleast_1d(lam_arr).ravel()
    refs = None if y_ref is None else np.broadcast_to(np.asarray(y_ref, float), x_arr.shape).ravel()
    out = np.empty_like(flat_x)
    for n, (xv, lv) in enumerate(zip(flat_x, flat_l)):
        poly = [float(c(xv, 0.0, lv)) for c in reversed(coeffs)]
        roots = np.roots(poly)
        real = np.sort(roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots))].real)
        if real.size == 0:
            raise AssumptionError(f"no point of S above x={xv} at lambda={lv}")
        if real.size > 1 and refs is None:
            raise AssumptionError(f"S is multivalued over x={xv} at lambda={lv}; supply y_ref")
        pick = real[0] if real.size == 1 else real[np.argmin(np.abs(real - refs[n]))]
        out[n] = _polish_y(sys, xv, pick, lv)
    out = out.reshape(x_arr.shape)
    return out if out.ndim else float(out)


def _polish_y(sys: SystemDefinition, x: float, y: float, lam: float) -> float:
    p = sys.partials
    for _ in range(8):
        r = p.f(x, y, lam)
        if abs(r) <= ROOT_TOL * 0.01:
            break
        y -= r / p.fy(x, y, lam)
    return y


def manifold_slope(sys: SystemDefinition, x, y, lam):
    """(dy/dx, dy/dlam) along S from implicit differentiation."""
    p = sys.partials
    fy = p.fy(x, y, lam)
    return -p.fx(x, y, lam) / fy, -p.fl(x, y, lam) / fy


# -- folds and equilibria ----------------------------------------------------------


def _fx_on_s(sys: SystemDefinition, x, lam):
    return sys.partials.fx(x, manifold_y(sys, x, lam), lam)


def find_folds(sys: SystemDefinition, lam: float, x_range=(-3.0, 3.0), n_samples: int = 601) -> list[FoldPoint]:
    """Roots of df/dx along S within ``x_range``, refined to |residual| <= 1e-12."""
    p = sys.partials
    xs = np.linspace(x_range[0], x_range[1], n_samples)
    h = _fx_on_s(sys, xs, lam)
    roots = []
    for i in range(n_samples):
        if h[i] == 0.0:
            roots.append(xs[i])
        elif i + 1 < n_samples and h[i] * h[i + 1] < 0.0:
            roots.append(brentq(lambda v: _fx_on_s(sys, v, lam), xs[i], xs[i + 1],
                                xtol=1e-15, rtol=4 * np.finfo(float).eps))
    folds = []
    for xf in roots:
        yf = manifold_y(sys, xf, lam)
        folds.append(FoldPoint(float(xf), float(yf), float(lam), float(p.fxx(xf, yf, lam))))
    return folds


def _frozen_stable(p: Partials, x: float, y: float, lam: float, delta: float) -> bool:
    fx, fy = p.fx(x, y, lam), p.fy(x, y, lam)
    gx, gy = p.gx(x, y, lam), p.gy(x, y, lam)
    if fx >= 0.0:
        return False
    if gy - gx * fy / fx >= 0.0:  # slow-flow derivative along S
        return False
    if delta > 0.0:
        jac = np.array([[fx / delta, fy / delta], [gx, gy]])
        return bool(np.all(np.linalg.eigvals(jac).real < 0.0))
    return True


def find_equilibria(sys: SystemDefinition, lam: float, x_lo: float, x_hi: float, n_samples: int = 601):
    """All (x, y, stable) with f = g = 0 on S for x in [x_lo, x_hi]."""
    def gs(v):
        return sys.g_poly(v, manifold_y(sys, v, lam), lam)

    xs = np.linspace(x_lo, x_hi, n_samples)
    vals = gs(xs)
    out = []
    for i in range(n_samples - 1):
        if vals[i] == 0.0:
            xe = xs[i]
        elif vals[i] * vals[i + 1] < 0.0:
            xe = brentq(gs, xs[i], xs[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        else:
            continue
        ye = manifold_y(sys, xe, lam)
        out.append((float(xe), float(ye), _frozen_stable(sys.partials, xe, ye, lam, sys.delta)))
    if vals[-1] == 0.0:
        ye = manifold_y(sys, xs[-1], lam)
        out.append((float(xs[-1]), float(ye), _frozen_stable(sys.partials, xs[-1], ye, lam, sys.delta)))
    return out


def slice_manifold(
    sys: SystemDefinition,
    lam: float,
    x_range: Sequence[float] = (-3.0, 3.0),
    n_samples: int = 601,
    check: bool = True,
) -> CriticalManifoldSlice:
    """Sample S at frozen lambda, split it at the fold and locate the stable state.

    With ``check`` the single-quadratic-fold and single-stable-state conditions are
    enforced and violations raise AssumptionError.
    """
    p = sys.partials
    lo, hi = float(x_range[0]), float(x_range[1])
    folds = find_folds(sys, lam, (lo, hi), n_samples)
    notes: list[str] = []
    if check:
        if not folds:
            raise AssumptionError(f"no fold of S in x range [{lo}, {hi}] at lambda={lam}")
        if len(folds) > 1:
            raise AssumptionError(f"{len(folds)} folds at lambda={lam}; a single fold is required")
        if abs(folds[0].second_deriv) < DEGENERACY_TOL:
            raise AssumptionError(f"degenerate fold at lambda={lam}: |f_xx| < {DEGENERACY_TOL}")

    xs = np.linspace(lo, hi, n_samples)
    cuts = [lo] + [fp.x_F for fp in folds] + [hi]
    branches = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        sel = xs[(xs >= a) & (xs <= b)]
        sel = sel[np.min(np.abs(sel[:, None] - np.array([fp.x_F for fp in folds] or [np.inf])[None, :]), axis=1) > FOLD_EXCLUSION]
        if sel.size == 0:
            continue
        ys = np.asarray(manifold_y(sys, sel, lam))
        fx = p.fx(sel, ys, lam)
        stability = ATTRACTING if np.median(fx) < 0 else REPELLING
        branches.append(Branch(sel, ys, stability))

    equilibrium = None
    attracting = [b for b in branches if b.stability == ATTRACTING]
    if folds and attracting:
        near = min(attracting, key=lambda b: min(abs(b.x[0] - folds[0].x_F), abs(b.x[-1] - folds[0].x_F)))
        x_lo, x_hi = near.x_interval
        stable = [e for e in find_equilibria(sys, lam, x_lo, x_hi, n_samples) if e[2]]
        if len(stable) == 1:
            equilibrium = (stable[0][0], stable[0][1])
        elif check:
            raise AssumptionError(
                f"{len(stable)} stable equilibria on the attracting branch at lambda={lam}; exactly one is required"
            )
        else:
            notes.append(f"{len(stable)} stable equilibria on the attracting branch")
    return CriticalManifoldSlice(float(lam), branches, folds, equilibrium, notes)


def project_onto_s_attracting(
    sys: SystemDefinition, x: float, lam: float, *, side: str = ATTRACTING
) -> ManifoldPoint:
    """Lift ``x`` to the point (x, y) on S at frozen lambda.

    ``side`` selects the branch the point must lie on; a point exactly on the fold
    is accepted for either side and flagged.
    """
    if side not in (ATTRACTING, REPELLING):
        raise ValueError(f"side must be {ATTRACTING!r} or {REPELLING!r}")
    y = float(manifold_y(sys, x, lam))
    fx = float(sys.partials.fx(x, y, lam))
    on_fold = abs(fx) <= ROOT_TOL
    if not on_fold:
        if side == ATTRACTING and fx > 0.0:
            raise SideError(f"x={x} lies on the repelling side of the fold at lambda={lam}")
        if side == REPELLING and fx < 0.0:
            raise SideError(f"x={x} lies on the attracting side of the fold at lambda={lam}")
    return ManifoldPoint(float(x), y, on_fold)


# -- curves over lambda ------------------------------------------------------------


def _newton2(fun, jac, z0, tol=1e-13, maxiter=50):
    z = np.array(z0, dtype=float)
    for _ in range(maxiter):
        r = fun(z)
        if np.max(np.abs(r)) <= tol:
            return z, True
        try:
            step = np.linalg.solve(jac(z), r)
        except np.linalg.LinAlgError:
            return z, False
        z = z - step
    return z, bool(np.max(np.abs(fun(z))) <= 1e3 * tol)


def fold_at(sys: SystemDefinition, lam: float, guess: tuple[float, float]) -> tuple[float, float]:
    """Fold point (x_F, y_F) at lambda by Newton from ``guess``."""
    p = sys.partials
    z, ok = _newton2(
        lambda z: np.array([p.f(z[0], z[1], lam), p.fx(z[0], z[1], lam)]),
        lambda z: np.array([[p.fx(z[0], z[1], lam), p.fy(z[0], z[1], lam)],
                            [p.fxx(z[0], z[1], lam), p.fxy(z[0], z[1], lam)]]),
        guess,
    )
    if not ok:
        raise AssumptionError(f"fold continuation failed at lambda={lam}")
    return float(z[0]), float(z[1])


def equilibrium_at(sys: SystemDefinition, lam: float, guess: tuple[float, float]) -> tuple[float, float]:
    p = sys.partials
    z, ok = _newton2(
        lambda z: np.array([p.f(z[0], z[1], lam), p.g(z[0], z[1], lam)]),
        lambda z: np.array([[p.fx(z[0], z[1], lam), p.fy(z[0], z[1], lam)],
                            [p.gx(z[0], z[1], lam), p.gy(z[0], z[1], lam)]]),
        guess,
    )
    if not ok:
        raise AssumptionError(f"stable-state continuation failed at lambda={lam}")
    return float(z[0]), float(z[1])


def _continue(step, sys, lams, start):
    lams = np.asarray(lams, dtype=float)
    out = np.full((lams.size, 2), np.nan)
    anchor = int(np.argmin(np.abs(lams - lams[lams.size // 2])))
    out[anchor] = step(sys, lams[anchor], start)
    for i in range(anchor + 1, lams.size):
        out[i] = step(sys, lams[i], _predict(out, lams, i, -1))
    for i in range(anchor - 1, -1, -1):
        out[i] = step(sys, lams[i], _predict(out, lams, i, +1))
    return out[:, 0], out[:, 1]


def _predict(out, lams, i, d):
    # secant predictor from the two previously solved neighbours
    j, k = i + d, i + 2 * d
    if 0 <= k < lams.size and lams[j] != lams[k] and np.all(np.isfinite(out[k])):
        return out[j] + (out[j] - out[k]) * (lams[i] - lams[j]) / (lams[j] - lams[k])
    return out[j]


def fold_curve(sys: SystemDefinition, lams, x_range=(-3.0, 3.0)):
    """Fold positions over a lambda grid by predictor-corrector continuation."""
    lams = np.asarray(lams, dtype=float)
    mid = lams[lams.size // 2]
    folds = find_folds(sys, mid, x_range)
    if len(folds) != 1:
        raise AssumptionError(f"expected one fold at lambda={mid}, found {len(folds)}")
    return _continue(fold_at, sys, lams, (folds[0].x_F, folds[0].y_F))


def equilibrium_curve(sys: SystemDefinition, lams, x_range=(-3.0, 3.0)):
    """Stable-state positions over a lambda grid by continuation."""
    lams = np.asarray(lams, dtype=float)
    mid = lams[lams.size // 2]
    sl = slice_manifold(sys, mid, x_range)
    return _continue(equilibrium_at, sys, lams, sl.equilibrium)


def check_assumptions(sys: SystemDefinition, lam_lo: float, lam_hi: float, n: int = 9, x_range=(-3.0, 3.0)) -> None:
    """Raise AssumptionError unless every sampled slice has one quadratic fold and one stable state."""
    for lam in np.linspace(lam_lo, lam_hi, n):
        slice_manifold(sys, float(lam), x_range)
