import numpy as np
import pytest

from holocorr.correspondence import semigroup_z2_half_z2, squaring
from holocorr.measures import sample_annulus_measure, sample_circle_measure


@pytest.fixture(scope="session")
def sq():
    return squaring()


@pytest.fixture(scope="session")
def semi():
    return semigroup_z2_half_z2()


@pytest.fixture(scope="session")
def circle_cloud():
    return sample_circle_measure(10_000, seed=11)


@pytest.fixture(scope="session")
def annulus_cloud():
    return sample_annulus_measure(10_000, seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def _record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
