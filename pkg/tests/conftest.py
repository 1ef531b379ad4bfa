import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcvq.model import ModelParams, build_dct_sensing_matrix, sigma_w_sq_for_smnr

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def dct_pair(N, M):
    return (
        np.asarray(build_dct_sensing_matrix(N, M, 1)),
        np.asarray(build_dct_sensing_matrix(N, M, 2)),
    )


@pytest.fixture
def reference_params():
    """N=10, K=2, M=5 at 10 dB SMNR, rho=1."""
    return ModelParams(10, 2, 5, rho=1.0, sigma_w_sq=sigma_w_sq_for_smnr(2, 5, 10.0))


@pytest.fixture
def reference_phis():
    return dct_pair(10, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, one line per criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
