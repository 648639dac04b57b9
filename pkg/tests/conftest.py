import warnings

import pytest

from landau_torus.basis import build_orbital_set
from landau_torus.core import Grid, build_config

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def cfg4():
    return build_config(1.0, 4, 1.0, 1, 6)


@pytest.fixture(scope="session")
def grid64():
    return Grid(64, 1.0)


@pytest.fixture(scope="session")
def orbitals4(cfg4, grid64):
    return build_orbital_set(cfg4, 3, grid64)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
