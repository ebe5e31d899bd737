from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

# Single shared profile: this box is slow enough that per-example
# deadlines just produce flaky failures.
settings.register_profile(
    "suite",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xF10375)
