import numpy as np
import pytest

from bilinear_control import build_x_squared, perturbed_spectrum


@pytest.fixture(scope="session")
def B16():
    return build_x_squared(16)


@pytest.fixture(scope="session")
def B24():
    return build_x_squared(24)


@pytest.fixture(scope="session")
def B64():
    return build_x_squared(64)


@pytest.fixture(scope="session")
def spec16(B16):
    return perturbed_spectrum(B16, 0.2)


@pytest.fixture(scope="session")
def spec24(B24):
    return perturbed_spectrum(B24, 0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run (see test_acceptance.py)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
