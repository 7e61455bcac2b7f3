import numpy as np
import pytest

from shearfilm.geometry import Params
from shearfilm.spectral import make_grid


@pytest.fixture
def grid8():
    return make_grid(2 * np.pi, 2 * np.pi, 1.0, 8, 8, 9)


@pytest.fixture
def grid16():
    return make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 17)


@pytest.fixture
def grid33():
    return make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 33)


@pytest.fixture
def params():
    return Params(sigma=1.0, gamma=0.5)


def random_band(grid, seed=0, k_max=3):
    """Real band-limited surface field with unit sup norm."""
    rng = np.random.default_rng(seed)
    c = np.zeros(grid.surface_shape, dtype=complex)
    band = (np.abs(grid.n1[:, None]) <= k_max) & (np.abs(grid.n2[None, :]) <= k_max)
    c[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
    f = grid.to_physical(c, real=False).real
    return f / np.abs(f).max()


# acceptance criteria report ----------------------------------------------------------

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def record():
    """Store one PASS/FAIL line per acceptance criterion and return the verdict."""

    def _record(ac: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[ac] = f"{ac} {'PASS' if passed else 'FAIL'}: {detail}"
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        terminalreporter.write_line(ACCEPTANCE[ac])
