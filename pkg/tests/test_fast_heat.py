import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from rotlim.errors import ConfigurationError, DomainError, PreconditionError, RegressionError, ResolutionError
from rotlim.fast_heat import (
    HeatConfig,
    decay_norm,
    est_phi_scenario,
    forcing_norm,
    heat_propagate,
    heat_time_grid,
    make_forcing,
    rate_sweep,
)
from rotlim.spectral import GridSpec, SpectralScalar

from conftest import random_scalar


def cos_mode(grid, k1=1, k2=0, amp=1.0):
    c = np.zeros(grid.shape, complex)
    c[k2 % grid.n, k1 % grid.n] += 0.5 * amp
    c[-k2 % grid.n, -k1 % grid.n] += 0.5 * amp
    return SpectralScalar(grid, c)


def cfg_for(eps, phi0, forcing, s=1.0, delta=0.1, T=1.0, dt_g=1 / 64, beta=1.0):
    return HeatConfig(eps, beta, s, delta, T, phi0, forcing, dt_g)


@pytest.fixture
def g16():
    return GridSpec(16)


def test_config_validation(g16):
    z = SpectralScalar.zeros(g16)
    f = np.zeros(g16.shape)
    with pytest.raises(ConfigurationError):
        cfg_for(0.0, z, f)
    with pytest.raises(ConfigurationError):
        cfg_for(0.5, z, f, delta=1.0)
    with pytest.raises(ConfigurationError):
        HeatConfig(0.5, 0.5, 1.0, 0.1, 1.0, z, f)
    with pytest.raises(ConfigurationError):
        cfg_for(0.5, z, np.zeros((3,) + g16.shape), dt_g=0.1)
    with pytest.raises(ConfigurationError):
        cfg_for(0.5, z, np.zeros((8, 8)))


def test_free_decay_single_mode(g16):
    phi0 = cos_mode(g16)
    cfg = cfg_for(0.5, phi0, np.zeros(g16.shape))
    t = np.array([0.0, 0.01, 0.3, 1.0])
    traj = heat_propagate(cfg, t)
    for i, ti in enumerate(t):
        np.testing.assert_allclose(traj.coeffs[i], math.exp(-ti / cfg.nu) * phi0.coeffs, rtol=0, atol=1e-15)
    assert np.array_equal(traj[0].coeffs, phi0.coeffs)


def test_constant_forcing_closed_form(g16):
    g = cos_mode(g16)
    cfg = cfg_for(0.5, SpectralScalar.zeros(g16), g.coeffs)
    t = np.linspace(0, 1, 11)
    traj = heat_propagate(cfg, t)
    nu = cfg.nu
    for i, ti in enumerate(t):
        np.testing.assert_allclose(traj.coeffs[i], nu * (1 - math.exp(-ti / nu)) * g.coeffs, atol=1e-15)


def test_times_outside_horizon(g16):
    cfg = cfg_for(0.5, cos_mode(g16), np.zeros(g16.shape))
    with pytest.raises(DomainError):
        heat_propagate(cfg, [0.0, 1.5])
    with pytest.raises(DomainError):
        heat_propagate(cfg, [0.5, 0.2])


def _duhamel_oracle(cfg, k, t):
    """Per-mode Duhamel integral by adaptive quadrature."""
    iy, ix = k
    lam = cfg.grid.ksq[iy, ix] / cfg.nu
    nodes = [x for x in np.arange(0, t, cfg.dt_g)][1:]

    def part(fn):
        return quad(lambda s: math.exp(-lam * (t - s)) * fn(cfg.forcing_at(s)[iy, ix]), 0, t,
                    points=nodes or None, limit=500, epsabs=1e-14, epsrel=1e-12)[0]

    free = math.exp(-lam * t) * cfg.phi0.coeffs[iy, ix]
    return free + part(np.real) + 1j * part(np.imag)


def test_duhamel_against_quadrature_oracle(g16, rng):
    forcing = make_forcing("multi", g16, 1.0, 1 / 16)
    phi0 = random_scalar(rng, g16, kmax=4)
    cfg = cfg_for(0.5, phi0, forcing, dt_g=1 / 16)
    t_grid = np.array([0.37, 1.0])
    traj = heat_propagate(cfg, t_grid)
    for k in [(0, 1), (2, 1), (15, 3), (0, 0)]:
        for i, t in enumerate(t_grid):
            ref = _duhamel_oracle(cfg, k, t)
            assert abs(traj.coeffs[i][k] - ref) <= 1e-10 * max(1.0, abs(ref))


def test_semigroup(g16, rng):
    forcing = make_forcing("multi", g16, 1.0, 1 / 32)
    cfg = cfg_for(0.25, random_scalar(rng, g16, kmax=5), forcing, dt_g=1 / 32)
    direct = heat_propagate(cfg, [0.0, 0.5, 1.0])
    mid = heat_propagate(cfg, [0.5])[0]
    rest = heat_propagate(cfg, [0.5, 1.0], phi_start=mid, t_start=0.5)
    scale = np.abs(direct.coeffs).max()
    assert np.abs(rest.coeffs[1] - direct.coeffs[2]).max() <= 1e-12 * scale


def test_mode_bound(g16, rng):
    forcing = make_forcing("multi", g16, 1.0, 1 / 32)
    phi0 = random_scalar(rng, g16, kmax=5)
    cfg = cfg_for(0.5, phi0, forcing, dt_g=1 / 32)
    t = heat_time_grid(0.1, 1.0, 64)
    traj = heat_propagate(cfg, t)
    dense = np.linspace(0, 1, 2049)
    gabs = np.array([np.abs(cfg.forcing_at(s)) for s in dense])
    cum = np.concatenate([np.zeros((1,) + g16.shape), np.cumsum(0.5 * (gabs[1:] + gabs[:-1]) * (dense[1] - dense[0]), axis=0)])
    for i, ti in enumerate(t):
        j = int(round(ti * 2048))
        bound = np.abs(phi0.coeffs) + cum[j]
        assert np.all(np.abs(traj.coeffs[i]) <= bound * (1 + 1e-6) + 1e-14)


@pytest.mark.parametrize(
    "nu_eps, s, delta, T",
    [(0.5, 1.0, 0.1, 1.0), (0.25, 2.0, 0.2, 1.0), (0.7, 1.5, 0.05, 0.5), (1.0, 3.0, 0.3, 2.0), (0.3, 0.0, 0.1, 1.0)],
)
def test_decay_norm_closed_form(nu_eps, s, delta, T, g16):
    phi0 = cos_mode(g16, 1, 1)
    cfg = cfg_for(nu_eps, phi0, np.zeros(g16.shape), s=s, delta=delta, T=T)
    traj = heat_propagate(cfg, heat_time_grid(delta, T))
    nu, k2 = cfg.nu, 2.0
    l2 = math.sqrt(2 * math.pi**2) / math.sqrt(2)  # ||cos(x1 + x2)|| = pi sqrt(2)
    expected = k2**s * math.pi * math.sqrt(2) * math.sqrt(nu / (2 * k2) * (math.exp(-2 * k2 * delta / nu) - math.exp(-2 * k2 * T / nu)))
    assert l2 > 0
    assert decay_norm(traj, s, delta, T) == pytest.approx(expected, rel=1e-8)


def test_decay_norm_zero_and_direct_sum(g16, rng):
    cfg = cfg_for(0.5, SpectralScalar.zeros(g16), np.zeros(g16.shape))
    assert decay_norm(heat_propagate(cfg, heat_time_grid(0.1, 1.0)), 1.0, 0.1, 1.0) == 0
    phi0 = random_scalar(rng, g16, kmax=3)
    cfg = HeatConfig(0.8, 1.0, 0.0, 0.0, 1.0, phi0, np.zeros(g16.shape))
    traj = heat_propagate(cfg, heat_time_grid(0.0, 1.0))
    lam = g16.ksq / cfg.nu

    def sq_l2(t):
        return float(g16.length**2 * np.sum(np.exp(-2 * lam * t) * np.abs(phi0.coeffs) ** 2))

    direct = math.sqrt(quad(sq_l2, 0, 1, epsabs=1e-14, epsrel=1e-13)[0])
    assert decay_norm(traj, 0.0, 0.0, 1.0) == pytest.approx(direct, rel=1e-8)


def test_decay_norm_resolution_error(g16):
    cfg = cfg_for(0.5, cos_mode(g16), np.zeros(g16.shape))
    traj = heat_propagate(cfg, np.linspace(0.1, 1.0, 10))
    with pytest.raises(ResolutionError):
        decay_norm(traj, 1.0, 0.1, 1.0)
    with pytest.raises(ResolutionError):
        decay_norm(traj, 1.0, 0.15, 1.0)


def test_multiplier_bound_in_s(g16, rng):
    forcing = make_forcing("multi", g16, 1.0, 1 / 64)
    cfg = cfg_for(0.5, random_scalar(rng, g16), forcing)
    traj = heat_propagate(cfg, heat_time_grid(0.1, 1.0))
    kmax2 = float(g16.kmag.max() ** 2)
    for s in (0.0, 1.0, 2.0):
        assert decay_norm(traj, s + 1, 0.1, 1.0) <= kmax2 * decay_norm(traj, s, 0.1, 1.0)


def test_forcing_norm_constant(g16):
    g = cos_mode(g16)
    cfg = cfg_for(0.5, SpectralScalar.zeros(g16), g.coeffs)
    # ||cos x1||_{H^1}^2 = 2 * 2 pi^2, over T = 1
    assert forcing_norm(cfg, 1.0) == pytest.approx(math.sqrt(4 * math.pi**2), rel=1e-13)


def test_make_forcing_families(g16):
    for kind in ("none", "single", "multi"):
        f = make_forcing(kind, g16, 1.0, 0.25)
        assert f.shape == (5,) + g16.shape
        assert max(SpectralScalar(g16, c).hermitian_defect() for c in f) < 1e-15
    with pytest.raises(ConfigurationError):
        make_forcing("bogus", g16, 1.0, 0.25)


def test_rate_sweep_free_decay_is_superpolynomial():
    g = GridSpec(16)
    x1, _ = g.points()
    tmpl = HeatConfig(0.5, 1.0, 2.0, 0.1, 1.0, SpectralScalar.from_physical(g, np.cos(x1)), np.zeros(g.shape))
    rep = rate_sweep([0.5, 0.25, 0.125, 0.0625], tmpl)
    assert rep.slope > 5 * rep.slope_target
    assert len(rep.rows()) == 4 and set(rep.rows()[0]) == {"eps", "norm", "bound_factor", "ratio"}


def test_rate_sweep_multi_forcing_slope():
    g = GridSpec(32)
    tmpl = HeatConfig(0.5, 1.0, 2.0, 0.1, 1.0, SpectralScalar.zeros(g), make_forcing("multi", g, 1.0, 1 / 64), 1 / 64)
    rep = rate_sweep([2.0**-k for k in range(1, 7)], tmpl)
    assert 1.7 <= rep.slope <= 2.5
    assert rep.band <= 10
    assert all(r > 0 and math.isfinite(r) for r in rep.ratio)


def test_rate_sweep_errors(g16):
    tmpl = cfg_for(0.5, cos_mode(g16), np.zeros(g16.shape))
    with pytest.raises(RegressionError):
        rate_sweep([0.5] * 4, tmpl)
    with pytest.raises(ConfigurationError):
        rate_sweep([0.5, 0.25, 0.125], tmpl)


def test_est_phi_preconditions_and_zero_data():
    with pytest.raises(PreconditionError):
        est_phi_scenario([0.5, 0.25, 0.125, 0.0625], 0.0, 1.0, 2.5)
    rep = est_phi_scenario([0.5, 0.25, 0.125, 0.0625], 0.0, 1.0, 3.0, GridSpec(16), amplitudes=(0, 0, 0, 0))
    assert all(n == 0 for n in rep.norm)
    d = rep.to_dict()
    assert {"rows", "slope", "slope_target"} <= set(d)


def test_est_phi_norm_matches_independent_oracle():
    """One member of the scenario recomputed with a general ODE solver per mode."""
    g = GridSpec(16)
    eps, alpha, beta, s0, delta, T = 0.5, 0.0, 1.0, 3.0, 0.1, 1.0
    rep = est_phi_scenario([eps, 0.4, 0.3, 0.2], alpha, beta, s0, g, delta, T)
    fine = est_phi_scenario([eps, 0.4, 0.3, 0.2], alpha, beta, s0, g, delta, T, t_samples=2048)
    from rotlim.fast_heat import est_phi_profiles

    profiles = est_phi_profiles(g, T, 1 / 64)
    w = [1.0, eps ** (alpha - 2 * beta), 1 / eps, eps ** (1 - 2 * alpha)]
    forcing = sum(wi * p for wi, p in zip(w, profiles))
    cfg = HeatConfig(eps, beta, s0, delta, T, SpectralScalar.zeros(g), forcing, 1 / 64)
    active = np.argwhere(np.abs(forcing).max(axis=0) > 1e-14)
    total = 0.0
    for iy, ix in active:
        lam = g.ksq[iy, ix] / cfg.nu
        weight = g.length**2 * g.kmag[iy, ix] ** (4 * s0) * g.ksq[iy, ix]

        def rhs(t, y):
            f = cfg.forcing_at(t)[iy, ix]
            return [-lam * y[0] + f.real, -lam * y[1] + f.imag, y[0] ** 2 + y[1] ** 2 if t >= delta else 0.0]

        sol = solve_ivp(rhs, (0, T), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-11, atol=1e-14,
                        max_step=1 / 64)
        total += weight * sol.y[2, -1]
    # the time quadrature is second order: 256 samples give ~1e-5, 2048 give ~1e-7
    assert rep.norm[0] == pytest.approx(math.sqrt(total), rel=2e-5)
    assert fine.norm[0] == pytest.approx(math.sqrt(total), rel=2e-7)
