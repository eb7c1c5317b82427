import numpy as np
import pytest
from hypothesis import settings

from polyhazard.model import Dataset
from polyhazard.oracle import simulate_supplement_data

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    """Eight censored observations with one continuous and one binary covariate."""
    r = np.random.default_rng(7)
    n = 8
    x = np.column_stack([r.normal(size=n), (r.random(n) < 0.5).astype(float)])
    t = r.exponential(1.0, size=n) + 0.05
    e = (r.random(n) < 0.7).astype(int)
    return Dataset.from_arrays(t, e, x, names=["age", "male"])


@pytest.fixture(scope="session")
def supplement_data():
    return simulate_supplement_data(100, np.random.default_rng(2024))


def random_state(rng, K, p, dists=None):
    """A valid state with random parameters and inclusion pattern."""
    from polyhazard.model import new_state

    dists = dists or [("W", "L")[int(rng.integers(2))] for _ in range(K)]
    gamma = rng.random((K, p)) < 0.6
    theta = np.column_stack([rng.normal(0, 0.5, K), rng.normal(0, 0.7, K), rng.normal(0, 0.6, (K, p))])
    v = rng.choice((-1.0, 1.0), size=(K, p + 2))
    return new_state(dists, p, theta=theta, gamma=gamma, v=v, omega=float(rng.uniform(0.2, 0.8)),
                     z1=float(rng.normal()), z2=float(rng.uniform(0.3, 3.0)))


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
