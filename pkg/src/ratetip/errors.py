"""Exception hierarchy. Each class carries the CLI exit status it maps to."""

from __future__ import annotations


class RateTipError(Exception):
    exit_code = 3


class SchemaError(RateTipError, ValueError):
    """Malformed input: bad config keys, coefficients or parameter values."""

    exit_code = 1


class LookupFailure(SchemaError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class AssumptionError(RateTipError):
    """The system violates the single-fold / single-stable-state gate."""

    exit_code = 2


class DomainError(RateTipError, ValueError):
    """Argument outside the domain of a forcing profile or manifold branch."""

    exit_code = 1


class SideError(DomainError):
    """Point lies on the wrong side of the fold for the requested branch."""


class SingularityError(RateTipError, ZeroDivisionError):
    """Reduced flow evaluated on the fold, where it is undefined."""


class BracketError(RateTipError, ValueError):
    """Bisection bracket does not straddle the sought transition."""


class SectionError(RateTipError):
    """No jump dichotomy found on a canard seeding section."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegeneracyError(RateTipError):
    """Defective Jacobian at a folded singularity."""


class StiffnessError(RateTipError):
    """Adaptive step size underflowed."""

    def __init__(self, message: str, locus: tuple[float, float, float] | None = None):
        super().__init__(message)
        self.locus = locus
