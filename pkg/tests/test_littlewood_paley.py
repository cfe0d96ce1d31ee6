import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotlim.errors import ConfigurationError, DomainError, PreconditionError
from rotlim.littlewood_paley import (
    BesovSpec,
    DyadicPartition,
    bernstein_verify,
    besov_norm,
    bony_decompose,
    chemin_lerner_norm,
    dyadic_block,
    low_freq,
    lp_property_battery,
    time_outside_norm,
)
from rotlim.spectral import GridSpec, SpectralScalar, lp_norm, product, sobolev_norm

from conftest import random_scalar

P = DyadicPartition()


def mode(grid, k1, k2=0):
    """cos(k1 x1 + k2 x2) built from its two coefficients."""
    c = np.zeros(grid.shape, complex)
    c[k2 % grid.n, k1 % grid.n] += 0.5
    c[-k2 % grid.n, -k1 % grid.n] += 0.5
    return SpectralScalar(grid, c)


def test_partition_validation():
    with pytest.raises(ConfigurationError):
        DyadicPartition(1.5, 1.2)
    with pytest.raises(ConfigurationError):
        DyadicPartition(0.9, 1.9)
    with pytest.raises(ConfigurationError):
        BesovSpec(1.0, p=0.5)


def test_profile_shape():
    r = np.linspace(0, 4, 2001)
    chi = P.chi(r)
    assert np.all(chi[r <= P.r1] == 1) and np.all(chi[r >= P.r2] == 0)
    assert np.all(np.diff(chi) <= 0)
    phi = P.phi(r)
    inside = (r > P.r1) & (r < 2 * P.r2)
    assert np.all(phi[~inside] == 0)
    assert P.phi(2.0) == 1.0


def test_partition_of_unity_every_frequency():
    g = GridSpec(128)
    total = P.block_symbol(g, -1).copy()
    for j in range(0, P.max_block(g) + 1):
        total += P.block_symbol(g, j)
    assert np.abs(total - 1).max() <= 1e-12


def test_single_blocks():
    g = GridSpec(32)
    f = mode(g, 1)
    np.testing.assert_allclose(dyadic_block(f, -1).coeffs, f.coeffs, atol=0)
    for j in range(0, P.max_block(g) + 1):
        assert np.abs(dyadic_block(f, j).coeffs).max() == 0
    f4 = mode(g, 4)
    np.testing.assert_allclose(dyadic_block(f4, 1).coeffs, f4.coeffs, atol=1e-15)
    for j in [-1, 0, 2, 3]:
        assert np.abs(dyadic_block(f4, j).coeffs).max() < 1e-15


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_block_sums(seed):
    g = GridSpec(32)
    rng = np.random.default_rng(seed)
    f = random_scalar(rng, g)
    scale = np.abs(f.coeffs).max()
    jmax = P.max_block(g)
    acc = sum((dyadic_block(f, j).coeffs for j in range(-1, jmax + 1)), np.zeros(g.shape, complex))
    assert np.abs(acc - f.coeffs).max() <= 1e-12 * scale
    for j in range(0, jmax + 1):
        partial = sum((dyadic_block(f, k).coeffs for k in range(-1, j)), np.zeros(g.shape, complex))
        assert np.abs(low_freq(f, j).coeffs - partial).max() <= 1e-12 * scale


def test_block_orthogonality(grid32, rng):
    f = random_scalar(rng, grid32)
    jmax = P.max_block(grid32)
    for j in range(-1, jmax + 1):
        for k in range(j + 2, jmax + 1):
            assert np.all(dyadic_block(dyadic_block(f, j), k).coeffs == 0)


def test_besov_single_block_closed_form(grid32):
    f = mode(grid32, 1)
    for s in (-1.0, 0.0, 1.5):
        assert besov_norm(f, BesovSpec(s)) == pytest.approx(2.0**-s * lp_norm(f, 2), rel=1e-13)
    assert besov_norm(SpectralScalar.zeros(grid32), BesovSpec(1.0)) == 0


def test_besov_sobolev_equivalence_sweep():
    rng = np.random.default_rng(3)
    g = GridSpec(64)
    ratios = [besov_norm(f, BesovSpec(1.0)) / sobolev_norm(f, 1.0) for f in (random_scalar(rng, g) for _ in range(40))]
    # analytic band for s = 1 from the block supports (see the battery)
    assert min(ratios) >= 0.165 and max(ratios) <= 0.909


def test_chemin_lerner_examples(grid32, rng):
    f = random_scalar(rng, grid32)
    spec = BesovSpec(0.5)
    assert chemin_lerner_norm([f] * 5, math.inf, spec) == pytest.approx(besov_norm(f, spec), rel=1e-13)
    g4 = mode(grid32, 4)
    series = [g4 * a for a in (0.5, 1.0, -2.0, 0.1)]
    vals = np.array([lp_norm(x, 2) for x in series])
    plain = 2.0 ** (1 * 0.5) * np.sqrt(0.1 * np.sum(vals**2))
    assert chemin_lerner_norm(series, 2, spec, dt=0.1) == pytest.approx(plain, rel=1e-12)
    with pytest.raises(DomainError):
        chemin_lerner_norm([], 2, spec)


def test_minkowski_orderings(grid32, rng):
    series = [random_scalar(rng, grid32) for _ in range(8)]
    for r in (1.0, math.inf):
        spec = BesovSpec(0.3, 2, r)
        cl = chemin_lerner_norm(series, 2, spec, dt=0.125)
        to = time_outside_norm(series, 2, spec, dt=0.125)
        if 2 <= r:
            assert cl <= to * (1 + 1e-12)
        else:
            assert cl >= to * (1 - 1e-12)


def test_bony_examples(grid32, rng):
    u = mode(grid32, 1)
    tuv, tvu, R = bony_decompose(u, u)
    assert np.abs(tuv.coeffs).max() == 0 and np.abs(tvu.coeffs).max() == 0
    np.testing.assert_allclose(R.coeffs, product(u, u).coeffs, atol=1e-15)

    c = SpectralScalar.from_physical(grid32, np.full(grid32.shape, 2.0))
    v = random_scalar(rng, grid32, kmax=10)
    tuv, tvu, R = bony_decompose(c, v)
    assert np.abs(tvu.coeffs).max() < 1e-15
    np.testing.assert_allclose((tuv + R).coeffs, product(c, v).coeffs, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_bony_identity(seed):
    g = GridSpec(32)
    rng = np.random.default_rng(seed)
    u, v = random_scalar(rng, g, kmax=10), random_scalar(rng, g, kmax=10)
    parts = bony_decompose(u, v)
    total = parts[0].coeffs + parts[1].coeffs + parts[2].coeffs
    assert np.abs(total - product(u, v).coeffs).max() <= 1e-11


def test_bernstein_examples():
    g = GridSpec(256)
    for j in range(1, 6):
        # phi(2) = 1, so |k| = 2^(j+1) lies in block j
        f = mode(g, 2 ** (j + 1))
        a, b = bernstein_verify(f, j, 2, 2, kappa=1)
        assert a == b == pytest.approx(2.0, rel=1e-12)
    f = mode(GridSpec(32), 1)
    low, ratio = bernstein_verify(f, 0, 2, math.inf, kappa=0, shape="ball")
    assert low is None
    assert ratio == pytest.approx(1.0 / math.sqrt(2 * math.pi**2), rel=1e-12)


def test_bernstein_preconditions():
    g = GridSpec(64)
    with pytest.raises(PreconditionError):
        bernstein_verify(mode(g, 1), 3)
    with pytest.raises(DomainError):
        bernstein_verify(mode(g, 8), 3, p=4, q=2)
    with pytest.raises(ConfigurationError):
        bernstein_verify(mode(g, 8), 3, shape="cube")


def test_profile_csv(tmp_path):
    p = tmp_path / "prof.csv"
    P.export_csv(p, samples=11)
    lines = p.read_text().splitlines()
    assert lines[0] == "r,chi,phi" and len(lines) == 12


def test_battery_all_pass():
    results = lp_property_battery(seed=11)
    assert len(results) == 7
    assert all(r.passed for r in results), [r.line() for r in results]
