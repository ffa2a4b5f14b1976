import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ffed", max_examples=40, deadline=None)
settings.load_profile("ffed")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, d, rank=None, scale=10.0):
    B = rng.standard_normal((d, rank or d))
    return scale * (B @ B.T) / d


def random_spd(rng, d, shift=0.5):
    B = rng.standard_normal((d, d))
    return B @ B.T / d + shift * np.eye(d)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line pass/fail verdict, echoed in the terminal summary."""

    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
