import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.integrate import quad

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def J2():
    """Integral of exp(-2/(1-u^2)) over (-1, 1), by adaptive quadrature."""
    val, err = quad(lambda u: np.exp(-2.0 / (1.0 - u * u)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    assert err < 1e-10
    return val


def random_generator(rng, n, low=0.1, high=5.0):
    """Random irreducible rate matrix with all off-diagonal rates positive."""
    Q = rng.uniform(low, high, (n, n))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
