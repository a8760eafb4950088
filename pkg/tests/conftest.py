import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flpsr import distributions as D

settings.register_profile(
    "flpsr", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("flpsr")

MIXTURE_SPEC = {"kind": "param_mixture", "family": "uniform_prefix", "param_density_poly": [0, 0, 3]}


@pytest.fixture(scope="session")
def unif():
    return D.uniform()


@pytest.fixture(scope="session")
def beta22():
    return D.beta(2, 2)


@pytest.fixture(scope="session")
def beta62():
    return D.beta(6, 2)


@pytest.fixture(scope="session")
def mixture():
    """The (3/2)(1 - x^2) law obtained by mixing uniforms on [0, theta]."""
    return D.build(MIXTURE_SPEC)


@pytest.fixture(scope="session")
def linear():
    return D.piecewise_linear([(0.0, 2.0), (1.0, 0.0)])


@pytest.fixture(scope="session")
def tent():
    return D.piecewise_linear([(0.0, 0.0), (0.5, 2.0), (1.0, 0.0)])


@pytest.fixture(scope="session")
def sd_quadratic():
    """Symmetric single-dipped density 12 (x - 1/2)^2."""
    return D.polynomial([3.0, -12.0, 12.0])


@pytest.fixture(scope="session")
def named_dists(unif, beta22, beta62, mixture):
    return {"uniform": unif, "beta22": beta22, "beta62": beta62, "mixture": mixture}


def random_instance(rng, n):
    return D.Instance(np.sort(rng.random(n)))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
