import numpy as np
import pytest

from gazefeedback.gaze import GazeSample

DT = 1000.0 / 60.0


def trace(points, screen_id="s1", start=0.0, valid=None):
    """Gaze samples at 60 Hz through the given (x, y) points."""
    valid = valid or [True] * len(points)
    return [
        GazeSample(screen_id, start + n * DT, float(x), float(y), v)
        for n, ((x, y), v) in enumerate(zip(points, valid))
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
