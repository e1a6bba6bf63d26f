"""Rate-induced instability analysis for one-fast/one-slow forced systems."""

from __future__ import annotations

from .errors import (
    AssumptionError,
    BracketError,
    DegeneracyError,
    DomainError,
    LookupFailure,
    RateTipError,
    SchemaError,
    SectionError,
    SideError,
    SingularityError,
    StiffnessError,
)
from .model import ForcingProfile, Polynomial, SystemDefinition, builtin_system, eval_field, eval_forcing

__version__ = "0.1.0"
