import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


ACCEPTANCE_LINES = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    """Store and print one acceptance line; the run summary repeats them."""
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
