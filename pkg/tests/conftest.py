import numpy as np
import pytest

from taskfem.mesh import generate_box_mesh

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_mesh():
    return generate_box_mesh(4, 4, 4, 1)


@pytest.fixture(scope="session")
def medium_mesh():
    return generate_box_mesh(8, 8, 6, 2, jitter=0.1, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
