import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrpmor.bench import generate_penzl
from lrpmor.systems import LowRankParametricSystem, StateSpaceSystem

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stable(rng, n, m=1, l=1, margin=0.1):
    X = rng.standard_normal((n, n))
    shift = np.abs(np.linalg.eigvals(X)).max() + margin + rng.uniform(0, 1)
    A = X - shift * np.eye(n)
    return StateSpaceSystem(A, rng.standard_normal((n, m)), rng.standard_normal((l, n)))


def random_parametric(rng, n=12, k=2, m=2, l=2, mode="sqrt", with_E=False):
    """Stable ``A0`` with a passive low-rank term (``U = V``) so any ``p >= 0`` is stable."""
    X = rng.standard_normal((n, n))
    A0 = -(X @ X.T) / n - np.eye(n) + 0.3 * (X - X.T) / np.sqrt(n)
    U = rng.standard_normal((n, k))
    E = None
    if with_E:
        E = np.diag(rng.uniform(0.5, 2.0, n))
    return LowRankParametricSystem(E, A0, U, U.copy(), rng.standard_normal((n, m)),
                                   rng.standard_normal((l, n)), mode=mode)


@pytest.fixture(scope="session")
def penzl():
    return generate_penzl(100)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
