import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fragmatch.market import AgeSchool, MarketInstance, Student

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_swap_market() -> MarketInstance:
    """Two regions, one seat each; each child prefers the other region's school."""
    schools = [
        AgeSchool(id=0, facility=0, age=0, region=0, capacity=1),  # s_a
        AgeSchool(id=1, facility=1, age=0, region=1, capacity=1),  # s_b
    ]
    students = [
        Student(id=0, age=0, home_region=0, preferences=(1, 0), tiebreak_rank=1),  # i1
        Student(id=1, age=0, home_region=1, preferences=(0, 1), tiebreak_rank=2),  # i2
    ]
    return MarketInstance(students, schools)


@pytest.fixture
def swap_market() -> MarketInstance:
    return make_swap_market()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Log one pass/fail line for an acceptance criterion and return the verdict."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return ok

    return _record
