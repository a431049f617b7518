import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from evtta.events import EventStream

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def streams(draw, max_events=60, max_side=12, min_events=0):
    H = draw(st.integers(2, max_side))
    W = draw(st.integers(2, max_side))
    n = draw(st.integers(min_events, max_events))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, draw(st.integers(1, 50_000)), size=n))
    return EventStream(rng.integers(0, W, n), rng.integers(0, H, n), t, rng.choice([-1, 1], n), (H, W))


def random_stream(rng, n=200, resolution=(16, 16), t_max=100_000):
    H, W = resolution
    t = np.sort(rng.integers(0, t_max + 1, size=n))
    return EventStream(rng.integers(0, W, n), rng.integers(0, H, n), t, rng.choice([-1, 1], n), resolution)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
