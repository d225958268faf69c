import numpy as np
import pytest

from srpsbl.geometry import build_doa_grid, uma16_array


@pytest.fixture(scope="session")
def uma16():
    return uma16_array()


@pytest.fixture(scope="session")
def coarse_grid():
    return build_doa_grid(15, 10)


@pytest.fixture(scope="session")
def fine_grid():
    return build_doa_grid(2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
