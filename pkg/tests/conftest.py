import numpy as np
import pytest

from rotlim.spectral import GridSpec, SpectralScalar, SpectralVec2, to_physical, to_spectral


def random_scalar(rng, grid, kmax=None, decay=1.5, zero_mean=False):
    """Random real field; band-limited to |k| <= kmax when given."""
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c = c / (1.0 + grid.kmag**2) ** (decay / 2)
    c = to_spectral(to_physical(c))  # Hermitian
    if kmax is not None:
        c = c * (grid.kmax_index <= kmax)
    if zero_mean:
        c[0, 0] = 0
    return SpectralScalar(grid, c)


def random_vec(rng, grid, kmax=None):
    return SpectralVec2((random_scalar(rng, grid, kmax), random_scalar(rng, grid, kmax)))


def ulp_scale(*fields):
    """Rounding floor for multiplier identities: machine eps times max |k| |c|."""
    g = fields[0].grid
    return 8 * np.finfo(float).eps * max(float(np.abs(g.kmag * f.coeffs).max()) for f in fields) * float(g.kmag.max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid32():
    return GridSpec(32)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
