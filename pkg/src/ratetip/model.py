"""Polynomial fast-slow systems and forcing profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, LookupFailure, SchemaError

VARIABLES = ("x", "y", "lam")
_VAR_INDEX = {"x": 0, "y": 1, "lam": 2, "lambda": 2}


@dataclass(frozen=True)
class Polynomial:
    """Sparse polynomial in (x, y, lambda).

    Terms are ``(i, j, k, c)`` quadruples meaning ``c * x**i * y**j * lam**k``.
    Duplicate exponents are merged and zero coefficients dropped on construction.
    """

    terms: tuple[tuple[int, int, int, float], ...] = ()

    def __post_init__(self) -> None:
        merged: dict[tuple[int, int, int], float] = {}
        for term in self.terms:
            if len(term) != 4:
                raise SchemaError(f"polynomial term {term!r} is not an (i, j, k, c) quadruple")
            i, j, k, c = term
            exps = (int(i), int(j), int(k))
            if min(exps) < 0 or exps != (i, j, k):
                raise SchemaError(f"exponents must be non-negative integers, got {term!r}")
            if not math.isfinite(float(c)):
                raise SchemaError(f"coefficient must be finite, got {term!r}")
            merged[exps] = merged.get(exps, 0.0) + float(c)
        clean = tuple(sorted((e[0], e[1], e[2], c) for e, c in merged.items() if c != 0.0))
        object.__setattr__(self, "terms", clean)

    @classmethod
    def from_terms(cls, terms: Iterable[Sequence[float]]) -> Polynomial:
        return cls(tuple(tuple(t) for t in terms))  # type: ignore[arg-type]

    def __call__(self, x, y, lam):
        if type(x) is float and type(y) is float and type(lam) is float:
            s = 0.0
            for i, j, k, c in self.terms:
                s += c * x**i * y**j * lam**k
            return s
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lam = np.asarray(lam, dtype=float)
        out = np.zeros(np.broadcast(x, y, lam).shape)
        for i, j, k, c in self.terms:
            out = out + c * x**i * y**j * lam**k
        return out if out.ndim else float(out)

    def diff(self, var: str) -> Polynomial:
        """Exact partial derivative with respect to ``var`` in {"x", "y", "lam"}."""
        try:
            axis = _VAR_INDEX[var]
        except KeyError:
            raise ValueError(f"unknown variable {var!r}; expected one of {VARIABLES}") from None
        out = []
        for term in self.terms:
            exps = list(term[:3])
            p = exps[axis]
            if p == 0:
                continue
            exps[axis] = p - 1
            out.append((exps[0], exps[1], exps[2], term[3] * p))
        return Polynomial(tuple(out))

    def degree(self, var: str) -> int:
        axis = _VAR_INDEX[var]
        return max((t[axis] for t in self.terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Exponents as an (n, 3) int array and coefficients as an (n,) float array."""
        if not self.terms:
            return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
        exps = np.array([t[:3] for t in self.terms], dtype=np.int64)
        coefs = np.array([t[3] for t in self.terms], dtype=float)
        return exps, coefs

    def as_lists(self) -> list[list[float]]:
        return [[i, j, k, c] for i, j, k, c in self.terms]

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for i, j, k, c in self.terms:
            factors = [f"{c:g}"]
            for name, p in (("x", i), ("y", j), ("lam", k)):
                if p == 1:
                    factors.append(name)
                elif p > 1:
                    factors.append(f"{name}^{p}")
            parts.append("*".join(factors))
        return " + ".join(parts)


@dataclass(frozen=True)
class SystemDefinition:
    """Forced fast-slow system ``delta*dx/dt = f``, ``dy/dt = g`` with polynomial f, g.

    ``delta == 0`` is allowed for reduced and desingularized analyses only.
    """

    f_poly: Polynomial
    g_poly: Polynomial
    delta: float = 0.01
    name: str = "custom"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delta) and self.delta >= 0.0):
            raise SchemaError(f"delta must be finite and non-negative, got {self.delta}")
        if self.f_poly.degree("x") < 2:
            raise SchemaError("f must have degree >= 2 in x to admit a quadratic fold")
        if self.f_poly.degree("y") < 1:
            raise SchemaError("f must depend on y so the critical manifold is a graph over x")

    def with_delta(self, delta: float) -> SystemDefinition:
        return replace(self, delta=float(delta))

    def fast_time(self, t):
        """Fast time T = t / delta."""
        if self.delta == 0.0:
            raise DomainError("fast time is undefined for delta = 0")
        return np.asarray(t) / self.delta

    @cached_property
    def partials(self) -> Partials:
        return Partials.of(self)


@dataclass(frozen=True)
class Partials:
    """Exact partial derivatives of f and g up to the order used by the analyses."""

    f: Polynomial
    fx: Polynomial
    fy: Polynomial
    fl: Polynomial
    fxx: Polynomial
    fxy: Polynomial
    fyy: Polynomial
    fxl: Polynomial
    fyl: Polynomial
    fll: Polynomial
    g: Polynomial
    gx: Polynomial
    gy: Polynomial
    gl: Polynomial

    @classmethod
    def of(cls, sys: SystemDefinition) -> Partials:
        f, g = sys.f_poly, sys.g_poly
        fx, fy, fl = f.diff("x"), f.diff("y"), f.diff("lam")
        return cls(
            f=f, fx=fx, fy=fy, fl=fl,
            fxx=fx.diff("x"), fxy=fx.diff("y"), fyy=fy.diff("y"),
            fxl=fx.diff("lam"), fyl=fy.diff("lam"), fll=fl.diff("lam"),
            g=g, gx=g.diff("x"), gy=g.diff("y"), gl=g.diff("lam"),
        )


FORCING_KINDS = ("logistic-tanh", "exponential-approach", "linear-saturating-ramp", "constant")


@dataclass(frozen=True)
class ForcingProfile:
    """Smooth forcing lambda(tau) in slow time tau = epsilon * t.

    logistic-tanh         lam = lam_max * tanh(tau), tau in (-inf, inf)
    exponential-approach  lam = lam_max * (1 - exp(-tau)), tau in (0, inf)
    linear-saturating-ramp  lam rises linearly from lambda_min to lambda_max over [tau_min, tau_max]
    constant              lam = lambda_max for all tau
    """

    kind: str
    lambda_max: float
    epsilon: float
    tau_min: float | None = None
    tau_max: float | None = None
    ramp_start: float | None = None
    _domain: tuple[float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in FORCING_KINDS:
            raise SchemaError(f"unknown forcing kind {self.kind!r}; expected one of {FORCING_KINDS}")
        if not math.isfinite(self.lambda_max):
            raise SchemaError("lambda_max must be finite")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise SchemaError(f"epsilon must be positive, got {self.epsilon}")
        if self.kind in ("logistic-tanh", "exponential-approach") and self.lambda_max <= 0.0:
            raise SchemaError(f"{self.kind} needs lambda_max > 0")
        natural = {
            "logistic-tanh": (-math.inf, math.inf),
            "exponential-approach": (0.0, math.inf),
            "linear-saturating-ramp": (-math.inf, math.inf),
            "constant": (-math.inf, math.inf),
        }[self.kind]
        default = (0.0, 1.0) if self.kind == "linear-saturating-ramp" else natural
        lo = default[0] if self.tau_min is None else float(self.tau_min)
        hi = default[1] if self.tau_max is None else float(self.tau_max)
        if not lo < hi:
            raise SchemaError(f"empty tau domain ({lo}, {hi})")
        if lo < natural[0] or hi > natural[1]:
            raise SchemaError(f"tau domain ({lo}, {hi}) exceeds the natural domain {natural} of {self.kind}")
        if self.kind == "linear-saturating-ramp" and not (math.isfinite(lo) and math.isfinite(hi)):
            raise SchemaError("linear-saturating-ramp needs a finite tau domain")
        if self.kind == "linear-saturating-ramp" and self.lambda_min >= self.lambda_max:
            raise SchemaError("linear-saturating-ramp needs ramp_start < lambda_max")
        object.__setattr__(self, "_domain", (lo, hi))

    # -- descriptive properties -------------------------------------------------
    @property
    def tau_domain(self) -> tuple[float, float]:
        return self._domain

    @property
    def lambda_min(self) -> float:
        if self.kind == "logistic-tanh":
            return -self.lambda_max
        if self.kind == "exponential-approach":
            return 0.0
        if self.kind == "constant":
            return self.lambda_max
        return 0.0 if self.ramp_start is None else float(self.ramp_start)

    @property
    def asymptotically_constant(self) -> bool:
        return self.kind != "linear-saturating-ramp"

    @property
    def asymptote(self) -> float:
        """Value of lambda at the upper end of the domain."""
        return self.lambda_max

    def with_epsilon(self, epsilon: float) -> ForcingProfile:
        return replace(self, epsilon=float(epsilon))

    def contains(self, tau: float) -> bool:
        lo, hi = self._domain
        if self.kind == "exponential-approach" and self.tau_min is None:
            return lo < tau < hi
        return lo <= tau <= hi

    def _check(self, tau) -> np.ndarray:
        t = np.asarray(tau, dtype=float)
        lo, hi = self._domain
        open_lo = self.kind == "exponential-approach" and self.tau_min is None
        bad = (t < lo) | (t > hi) | (open_lo & (t <= lo)) | ~np.isfinite(t)
        if np.any(bad):
            raise DomainError(f"tau outside the forcing domain ({lo}, {hi})")
        return t

    # -- evaluation -------------------------------------------------------------
    def value(self, tau):
        t = self._check(tau)
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            out = lm * np.tanh(t)
        elif self.kind == "exponential-approach":
            out = -lm * np.expm1(-t)
        elif self.kind == "constant":
            out = np.full_like(t, lm)
        else:
            lo, hi = self._domain
            out = self.lambda_min + (lm - self.lambda_min) * (t - lo) / (hi - lo)
        return out if out.ndim else float(out)

    def rate(self, tau):
        """Exact d(lambda)/d(tau)."""
        t = self._check(tau)
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            out = lm / np.cosh(t) ** 2
        elif self.kind == "exponential-approach":
            out = lm * np.exp(-t)
        elif self.kind == "constant":
            out = np.zeros_like(t)
        else:
            lo, hi = self._domain
            out = np.full_like(t, (lm - self.lambda_min) / (hi - lo))
        return out if out.ndim else float(out)

    def curvature(self, tau):
        """Exact second derivative d2(lambda)/d(tau)2."""
        t = self._check(tau)
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            out = -2.0 * lm * np.tanh(t) / np.cosh(t) ** 2
        elif self.kind == "exponential-approach":
            out = -lm * np.exp(-t)
        else:
            out = np.zeros_like(t)
        return out if out.ndim else float(out)

    def inverse(self, lam: float) -> float:
        """tau with lambda(tau) = lam; raises DomainError outside the open range."""
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            r = lam / lm
            if not -1.0 < r < 1.0:
                raise DomainError(f"lambda={lam} not in the open range (-{lm}, {lm})")
            tau = math.atanh(r)
        elif self.kind == "exponential-approach":
            r = lam / lm
            if not 0.0 < r < 1.0:
                raise DomainError(f"lambda={lam} not in the open range (0, {lm})")
            tau = -math.log1p(-r)
        elif self.kind == "constant":
            raise DomainError("constant forcing has no inverse")
        else:
            lo, hi = self._domain
            r = (lam - self.lambda_min) / (lm - self.lambda_min)
            if not 0.0 <= r <= 1.0:
                raise DomainError(f"lambda={lam} outside the ramp range")
            tau = lo + r * (hi - lo)
        if not self.contains(tau):
            raise DomainError(f"lambda={lam} maps to tau={tau} outside the domain")
        return tau

    def scan_window(self, tol: float = 1e-9) -> tuple[float, float]:
        """Finite tau window outside which |lambda - its end value| <= tol."""
        lo, hi = self._domain
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            cut = 0.5 * math.log(2.0 * lm / tol)
            return max(lo, -cut), min(hi, cut)
        if self.kind == "exponential-approach":
            return lo, min(hi, math.log(lm / tol))
        if self.kind == "constant":
            return (lo if math.isfinite(lo) else 0.0), (hi if math.isfinite(hi) else 1.0)
        return lo, hi

    def settle_time(self, rate_tol: float = 1e-6) -> float:
        """Smallest tau after which |d(lambda)/d(tau)| <= rate_tol, clipped to the domain."""
        lo, hi = self._domain
        lm = self.lambda_max
        if self.kind == "logistic-tanh":
            tau = math.acosh(math.sqrt(lm / rate_tol)) if lm > rate_tol else 0.0
        elif self.kind == "exponential-approach":
            tau = max(0.0, math.log(lm / rate_tol))
        elif self.kind == "constant":
            tau = lo if math.isfinite(lo) else 0.0
        else:
            tau = hi
        return min(tau, hi)


def eval_field(sys: SystemDefinition, x, y, lam):
    """Exact evaluation of (f, g) at (x, y, lambda)."""
    return sys.f_poly(x, y, lam), sys.g_poly(x, y, lam)


def eval_forcing(profile: ForcingProfile, tau):
    """(lambda(tau), d lambda / d tau)."""
    return profile.value(tau), profile.rate(tau)


def _quadratic_fold() -> tuple[Polynomial, Polynomial]:
    # f = x(x - 1) + y + lam, g = -x
    f = Polynomial(((2, 0, 0, 1.0), (1, 0, 0, -1.0), (0, 1, 0, 1.0), (0, 0, 1, 1.0)))
    g = Polynomial(((1, 0, 0, -1.0),))
    return f, g


BUILTIN_SYSTEMS = {"paper-example": _quadratic_fold, "quadratic-fold": _quadratic_fold}


def builtin_system(name: str, delta: float = 0.01) -> SystemDefinition:
    try:
        make = BUILTIN_SYSTEMS[name]
    except KeyError:
        raise LookupFailure(
            f"unknown system {name!r}; available: {', '.join(sorted(BUILTIN_SYSTEMS))}"
        ) from None
    f, g = make()
    return SystemDefinition(f, g, delta=delta, name=name)
