import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

from plasticrod.cross_section import ElasticTensor, generate_disc_mesh, solve_correctors  # noqa: E402

MU = 4.0 * np.pi


@pytest.fixture(scope="session")
def disc1():
    return solve_correctors(generate_disc_mesh(1), ElasticTensor.isotropic(MU))


@pytest.fixture(scope="session")
def disc2():
    return solve_correctors(generate_disc_mesh(2), ElasticTensor.isotropic(MU))


@pytest.fixture(scope="session")
def disc4_unit():
    return solve_correctors(generate_disc_mesh(4), ElasticTensor.isotropic(1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
