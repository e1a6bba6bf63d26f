"""Reduced and desingularized slow flow on the critical manifold.

With y eliminated through f = 0, the slow flow on S reads

    eps * f_x * dx/dtau = -(g * f_y + eps * f_lam * lam'(tau))

and multiplying by -eps * f_x gives the desingularized field in time s

    dx/ds   = g * f_y + eps * f_lam * lam'
    dtau/ds = -eps * f_x

which stays regular on the fold and reverses orientation on the repelling branch.
Zeros of the first component on the fold are folded singularities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, SingularityError
from .geometry import fold_at, fold_curve, manifold_y
from .model import ForcingProfile, SystemDefinition

ZERO_TOL = 1e-8
ROOT_TAU_TOL = 1e-12
RESIDUAL_TOL = 1e-10
SCAN_NODES = 4001
ASYMPTOTE_TOL = 1e-9

KINDS = (
    "folded-saddle",
    "folded-node-stable",
    "folded-node-unstable",
    "folded-focus-stable",
    "folded-focus-unstable",
    "folded-saddle-node-I",
    "folded-centre",
)


@dataclass(frozen=True)
class DesingularizedField:
    sys: SystemDefinition
    forcing: ForcingProfile

    @property
    def epsilon(self) -> float:
        return self.forcing.epsilon

    def lift(self, x, tau):
        """(y, lam, lam', lam'') at points of S above (x, tau)."""
        lam = self.forcing.value(tau)
        return manifold_y(self.sys, x, lam), lam, self.forcing.rate(tau), self.forcing.curvature(tau)

    def numerator(self, x, y, lam, rate):
        p = self.sys.partials
        return p.g(x, y, lam) * p.fy(x, y, lam) + self.epsilon * p.fl(x, y, lam) * rate

    def rhs(self, x, tau):
        y, lam, rate, _ = self.lift(x, tau)
        return self.numerator(x, y, lam, rate), -self.epsilon * self.sys.partials.fx(x, y, lam)

    def reduced(self, x, tau):
        y, lam, rate, _ = self.lift(x, tau)
        fx = self.sys.partials.fx(x, y, lam)
        if np.any(np.abs(fx) <= 1e-12):
            raise SingularityError(
                f"reduced flow is singular on the fold (x={x}, tau={tau}); use the desingularized field"
            )
        return -self.numerator(x, y, lam, rate) / (self.epsilon * fx)

    def jacobian(self, x: float, tau: float) -> np.ndarray:
        """Exact Jacobian of (dx/ds, dtau/ds) with respect to (x, tau)."""
        p = self.sys.partials
        eps = self.epsilon
        y, lam, r, r2 = self.lift(x, tau)
        a = (x, y, lam)
        g, fy, fl = p.g(*a), p.fy(*a), p.fl(*a)
        yx = -p.fx(*a) / fy
        yl = -fl / fy
        n_x = p.gx(*a) * fy + g * p.fxy(*a) + eps * r * p.fxl(*a)
        n_y = p.gy(*a) * fy + g * p.fyy(*a) + eps * r * p.fyl(*a)
        n_l = p.gl(*a) * fy + g * p.fyl(*a) + eps * r * p.fll(*a)
        return np.array([
            [n_x + n_y * yx, (n_y * yl + n_l) * r + eps * fl * r2],
            [-eps * (p.fxx(*a) + p.fxy(*a) * yx), -eps * (p.fxy(*a) * yl + p.fxl(*a)) * r],
        ])

    # -- restriction to the fold ------------------------------------------------------
    def fold_numerator(self, tau: float, guess: tuple[float, float]) -> tuple[float, float, float, float]:
        """(N, dN/dtau, x_F, y_F) along the fold curve at tau."""
        lam, r, r2 = self.forcing.value(tau), self.forcing.rate(tau), self.forcing.curvature(tau)
        xf, yf = fold_at(self.sys, lam, guess)
        return (*_fold_terms(self.sys, self.epsilon, xf, yf, lam, r, r2), xf, yf)


def _fold_terms(sys, eps, x, y, lam, r, r2):
    """N on the fold and its total tau-derivative following the fold."""
    p = sys.partials
    a = (x, y, lam)
    g, fy, fl = p.g(*a), p.fy(*a), p.fl(*a)
    n = g * fy + eps * fl * r
    dy_dl = -fl / fy
    dx_dl = -(p.fxy(*a) * dy_dl + p.fxl(*a)) / p.fxx(*a)
    n_x = p.gx(*a) * fy + g * p.fxy(*a) + eps * r * p.fxl(*a)
    n_y = p.gy(*a) * fy + g * p.fyy(*a) + eps * r * p.fyl(*a)
    n_l = p.gl(*a) * fy + g * p.fyl(*a) + eps * r * p.fll(*a)
    dn = (n_x * dx_dl + n_y * dy_dl + n_l) * r + eps * fl * r2
    return n, dn


@dataclass(frozen=True)
class FoldedSingularity:
    x_star: float
    y_star: float
    tau_star: float
    lambda_star: float
    eigenvalues: tuple[complex, complex]
    eigenvectors: np.ndarray | None
    kind: str
    b_sign: int
    b_coeff: float
    c_coeff: float
    jacobian: np.ndarray
    residual: float
    field: DesingularizedField = field(repr=False, compare=False)

    @property
    def is_real(self) -> bool:
        return self.eigenvectors is not None

    def as_record(self) -> dict:
        (x1, x2) = self.eigenvalues
        return {
            "x_star": self.x_star,
            "tau_star": self.tau_star,
            "lambda_star": self.lambda_star,
            "re_xi1": x1.real,
            "im_xi1": x1.imag,
            "re_xi2": x2.real,
            "im_xi2": x2.imag,
            "kind": self.kind,
            "b_sign": self.b_sign,
        }


@dataclass
class CriticalRateReport:
    epsilon_c_singular: float
    epsilon_c_empirical: float | None = None
    E_delta: float | None = None
    order_exponent: float | None = None
    per_delta: dict[float, float] = field(default_factory=dict)
    tau_window: tuple[float, float] | None = None

    def as_record(self) -> dict:
        return {
            "epsilon_c_singular": self.epsilon_c_singular,
            "epsilon_c_empirical": self.epsilon_c_empirical,
            "E_delta": self.E_delta,
            "order_exponent": self.order_exponent,
        }


# -- eigen-analysis ----------------------------------------------------------------


def _eigvec(jac: np.ndarray, xi: float) -> np.ndarray:
    (a, b), (c, d) = jac
    cand = (np.array([b, xi - a]), np.array([xi - d, c]))
    v = max(cand, key=lambda u: float(np.hypot(*u)))
    n = float(np.hypot(*v))
    if n == 0.0:  # scalar multiple of the identity; any direction is an eigenvector
        v, n = np.array([1.0, 0.0]), 1.0
    v = v / n
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v


def classify_eigenvalues(jac: np.ndarray) -> tuple[complex, complex, str]:
    """Eigenvalues of a 2x2 Jacobian and the folded-singularity type they imply.

    Real pairs are ordered (stable, unstable) for saddles and (strong, weak) for nodes.
    """
    tr = float(jac[0, 0] + jac[1, 1])
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    disc = tr * tr - 4.0 * det
    if disc >= 0.0 or math.sqrt(-disc) / 2.0 <= ZERO_TOL:
        s = math.sqrt(max(disc, 0.0))
        q = 0.5 * (tr + math.copysign(s, tr))
        r1 = q
        r2 = det / q if q != 0.0 else 0.5 * (tr - math.copysign(s, tr))
        if min(abs(r1), abs(r2)) <= ZERO_TOL:
            kind = "folded-saddle-node-I"
            xi = sorted((r1, r2), key=abs, reverse=True)
        elif r1 * r2 < 0.0:
            kind = "folded-saddle"
            xi = sorted((r1, r2))
        else:
            kind = "folded-node-stable" if r1 < 0.0 else "folded-node-unstable"
            xi = sorted((r1, r2), key=abs, reverse=True)
        return complex(xi[0]), complex(xi[1]), kind
    re, im = 0.5 * tr, 0.5 * math.sqrt(-disc)
    if abs(re) <= ZERO_TOL:
        kind = "folded-centre"
    else:
        kind = "folded-focus-stable" if re < 0 else "folded-focus-unstable"
    return complex(re, im), complex(re, -im), kind


def _build_singularity(fld: DesingularizedField, tau: float, guess) -> FoldedSingularity:
    n, _, xf, yf = fld.fold_numerator(tau, guess)
    jac = fld.jacobian(xf, tau)
    xi1, xi2, kind = classify_eigenvalues(jac)
    vecs = None
    if kind not in ("folded-focus-stable", "folded-focus-unstable", "folded-centre"):
        vecs = np.column_stack([_eigvec(jac, xi1.real), _eigvec(jac, xi2.real)])
    det = float(np.linalg.det(jac))
    b_sign = 0 if kind == "folded-saddle-node-I" else int(np.sign(det))
    eps = fld.epsilon
    return FoldedSingularity(
        x_star=xf, y_star=yf, tau_star=float(tau), lambda_star=float(fld.forcing.value(tau)),
        eigenvalues=(xi1, xi2), eigenvectors=vecs, kind=kind, b_sign=b_sign,
        b_coeff=det / (2.0 * eps), c_coeff=float(np.trace(jac)), jacobian=jac,
        residual=abs(float(n)), field=fld,
    )


# -- singularity search ---------------------------------------------------------------


@lru_cache(maxsize=32)
def _fold_table(sys: SystemDefinition, kind: str, lambda_max: float, tau_lo: float, tau_hi: float, nodes: int, ramp):
    forcing = ForcingProfile(kind, lambda_max, 1.0, tau_lo if kind == "linear-saturating-ramp" else None,
                             tau_hi if kind == "linear-saturating-ramp" else None, ramp)
    taus = np.linspace(tau_lo, tau_hi, nodes)
    if kind == "exponential-approach" and taus[0] <= 0.0:
        taus[0] = min(1e-15, 0.5 * taus[1])
    lam = forcing.value(taus)
    xf, yf = fold_curve(sys, lam)
    return taus, lam, forcing.rate(taus), forcing.curvature(taus), xf, yf


def scan_window(forcing: ForcingProfile) -> tuple[float, float]:
    """Finite tau window used for singularity scans."""
    return forcing.scan_window(ASYMPTOTE_TOL)


def find_folded_singularities(
    sys: SystemDefinition, forcing: ForcingProfile, nodes: int = SCAN_NODES
) -> list[FoldedSingularity]:
    """All folded singularities in the scan window, sorted by tau.

    The fold numerator is sampled at ``nodes`` points; its interior extrema are added
    as extra nodes so that close root pairs and touching zeros are not missed.
    """
    fld = DesingularizedField(sys, forcing)
    lo, hi = scan_window(forcing)
    taus, lam, r, r2, xf, yf = _fold_table(sys, forcing.kind, forcing.lambda_max, lo, hi, nodes, forcing.ramp_start)
    n, dn = _fold_terms(sys, forcing.epsilon, xf, yf, lam, r, r2)
    n = np.broadcast_to(n, taus.shape).astype(float)
    dn = np.broadcast_to(dn, taus.shape).astype(float)

    def guess_at(t):
        i = int(np.clip(np.searchsorted(taus, t), 0, taus.size - 1))
        return xf[i], yf[i]

    def num(t):
        return fld.fold_numerator(t, guess_at(t))[0]

    def dnum(t):
        return fld.fold_numerator(t, guess_at(t))[1]

    ext_t, ext_n = [], []
    for i in np.flatnonzero(dn[:-1] * dn[1:] < 0.0):
        te = brentq(dnum, taus[i], taus[i + 1], xtol=ROOT_TAU_TOL, rtol=4 * np.finfo(float).eps)
        ext_t.append(te)
        ext_n.append(num(te))
    all_t = np.concatenate([taus, ext_t])
    all_n = np.concatenate([n, ext_n])
    order = np.argsort(all_t, kind="stable")
    all_t, all_n = all_t[order], all_n[order]

    roots: list[float] = []
    for i in range(all_t.size - 1):
        if all_n[i] == 0.0:
            roots.append(all_t[i])
        elif all_n[i] * all_n[i + 1] < 0.0:
            roots.append(brentq(num, all_t[i], all_t[i + 1], xtol=ROOT_TAU_TOL, rtol=4 * np.finfo(float).eps))
    for te, ne in zip(ext_t, ext_n):
        if 0.0 < abs(ne) <= RESIDUAL_TOL and not any(abs(te - t) <= 1e-6 for t in roots):
            roots.append(te)  # touching zero: tangency of the numerator to zero
    roots = sorted(t for t in roots if forcing.contains(t))
    return [_build_singularity(fld, t, guess_at(t)) for t in roots]


def estimate_critical_rate(
    sys: SystemDefinition,
    forcing: ForcingProfile,
    eps_bracket: tuple[float, float] = (1e-3, 10.0),
    tol: float = 1e-9,
) -> CriticalRateReport:
    """Smallest epsilon at which folded singularities exist (singular limit).

    ``forcing`` fixes the profile family; its own epsilon is ignored.
    """
    lo, hi = float(eps_bracket[0]), float(eps_bracket[1])
    if not 0.0 < lo < hi:
        raise BracketError(f"invalid epsilon bracket ({lo}, {hi})")

    def has(e):
        return bool(find_folded_singularities(sys, forcing.with_epsilon(e)))

    if has(lo):
        raise BracketError(f"folded singularities already exist at the lower end epsilon={lo}")
    if not has(hi):
        raise BracketError(f"no folded singularities at the upper end epsilon={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if has(mid):
            hi = mid
        else:
            lo = mid
    return CriticalRateReport(epsilon_c_singular=hi, tau_window=scan_window(forcing))
