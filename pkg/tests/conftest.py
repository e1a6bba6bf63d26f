from __future__ import annotations

import pytest
from hypothesis import settings

from ratetip.model import ForcingProfile, builtin_system

settings.register_profile("ratetip", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("ratetip")

LAMBDA_MAX = 2.5


@pytest.fixture(scope="session")
def quad():
    return builtin_system("quadratic-fold", 0.01)


def logistic(eps: float) -> ForcingProfile:
    return ForcingProfile("logistic-tanh", LAMBDA_MAX, eps)


def exponential(eps: float) -> ForcingProfile:
    return ForcingProfile("exponential-approach", LAMBDA_MAX, eps)
