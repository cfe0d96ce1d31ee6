"""Limit dynamics in vorticity form and the residual of the limit vorticity law.

The determined system advanced in time is, with theta = (-lap)^-1 omega,
u = -grad^perp theta and d = 1 when beta = 1 (else 0),

    d_t sigma + u.grad sigma + d theta = 0
    d_t omega + u.grad omega + u.grad sigma + d theta - mu lap omega = 0,

which is the curl of the momentum equation of the limit system. Subtracting
the two lines gives d_t(omega - sigma) + u.grad omega - mu lap omega = 0 for
every sigma, and ``limit0_residual`` measures how far a trajectory is from
satisfying that law.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError, StepSizeError
from .spectral import (
    GridSpec,
    SpectralScalar,
    SpectralVec2,
    curl2d,
    dealias_mask,
    inv_laplacian,
    leray_project,
    perp_grad,
    sobolev_norm,
    to_physical,
    to_spectral,
)

__all__ = [
    "LimitParams",
    "LimitState",
    "velocity_from_vorticity",
    "dens_full_step",
    "simulate_limit",
    "limit0_residual",
    "limit_initial_data",
]


@dataclass(frozen=True)
class LimitParams:
    mu: float
    beta_is_one: bool = True

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if not isinstance(self.beta_is_one, (bool, np.bool_)):
            raise ConfigurationError("beta_is_one must be a boolean flag")

    @classmethod
    def from_beta(cls, mu: float, beta: float) -> "LimitParams":
        return cls(mu, bool(beta == 1))


@dataclass(frozen=True, eq=False)
class LimitState:
    time: float
    omega: SpectralScalar
    sigma: SpectralScalar

    def __post_init__(self) -> None:
        if self.omega.grid != self.sigma.grid:
            raise ConfigurationError("omega and sigma live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.omega.grid

    def velocity(self) -> SpectralVec2:
        return velocity_from_vorticity(self.omega)


def velocity_from_vorticity(omega: SpectralScalar) -> SpectralVec2:
    """Divergence-free u with curl u = omega (mean of omega discarded)."""
    c = omega.coeffs
    if abs(c[0, 0]) > 1e-14 * max(1.0, float(np.abs(c).max())):
        warnings.warn("vorticity has nonzero mean; the mean is discarded", RuntimeWarning, stacklevel=2)
    theta = inv_laplacian(-omega)
    return -perp_grad(theta)


def _coeffs_velocity(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    theta = w * _inv_ksq(grid)  # (-lap)^-1 w, zero mean
    # u = -perp_grad(theta) = (d2 theta, -d1 theta)
    return np.stack([1j * grid.k2 * theta, -1j * grid.k1 * theta]), theta


def _inv_ksq(grid: GridSpec) -> np.ndarray:
    ksq = grid.ksq
    out = np.zeros_like(ksq)
    nz = ksq > 0
    out[nz] = 1.0 / ksq[nz]
    return out


def _advect(u_phys: np.ndarray, f: np.ndarray, grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    """Dealiased u.grad f in spectral space."""
    fx = to_physical(np.stack([1j * grid.k1 * f, 1j * grid.k2 * f]))
    return to_spectral(u_phys[0] * fx[0] + u_phys[1] * fx[1]) * mask


def _rhs(w: np.ndarray, s: np.ndarray, grid: GridSpec, params: LimitParams):
    mask = dealias_mask(grid)
    uh, theta = _coeffs_velocity(w, grid)
    u = to_physical(uh)
    adv_w = _advect(u, w, grid, mask)
    adv_s = _advect(u, s, grid, mask)
    d = 1.0 if params.beta_is_one else 0.0
    ds = -adv_s - d * theta
    dw = -adv_w - adv_s - d * theta
    return dw, ds, u


def _cfl(u: np.ndarray, dt: float, grid: GridSpec) -> float:
    return dt * float(np.sqrt((u**2).sum(axis=0)).max()) * grid.n / grid.length


def dens_full_step(state: LimitState, dt: float, params: LimitParams) -> LimitState:
    """Heun's method with the viscous integrating factor exp(-mu |k|^2 dt) on omega."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    grid = state.grid
    E = np.exp(-params.mu * grid.ksq * dt)
    w, s = state.omega.coeffs, state.sigma.coeffs
    dw0, ds0, u = _rhs(w, s, grid, params)
    c = _cfl(u, dt, grid)
    if c > 0.5:
        raise StepSizeError(f"advective CFL number {c:.3f} exceeds 0.5")
    w1 = E * (w + dt * dw0)
    s1 = s + dt * ds0
    dw1, ds1, _ = _rhs(w1, s1, grid, params)
    w_new = E * (w + 0.5 * dt * dw0) + 0.5 * dt * dw1
    s_new = s + 0.5 * dt * (ds0 + ds1)
    if not (np.all(np.isfinite(w_new)) and np.all(np.isfinite(s_new))):
        raise NumericError("non-finite limit state")
    return LimitState(state.time + dt, SpectralScalar(grid, w_new), SpectralScalar(grid, s_new))


def simulate_limit(
    state0: LimitState, params: LimitParams, T: float, dt: float, stride: int = 1
) -> list[LimitState]:
    """Frames at t = 0, stride*dt, ..., T."""
    if not T > 0 or not dt > 0:
        raise ConfigurationError("T and dt must be positive")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise ConfigurationError(f"T={T} is not an integer multiple of dt={dt}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    frames = [state0]
    st = state0
    for i in range(1, nsteps + 1):
        st = dens_full_step(st, dt, params)
        if i % stride == 0 or i == nsteps:
            frames.append(st)
    return frames


def limit0_residual(
    omega: Sequence[SpectralScalar],
    sigma: Sequence[SpectralScalar],
    dt: float,
    mu: float,
    s_tilde: float = 3.0,
    times: Sequence[float] | None = None,
) -> np.ndarray:
    """||d_t(omega - sigma) + u.grad omega - mu lap omega||_{H^-s} at interior frames.

    The time derivative is a centered difference over the frame spacing
    ``dt``; u is rebuilt from omega. Returns one value per interior frame.
    """
    if len(omega) != len(sigma):
        raise DomainError(f"omega and sigma series differ in length ({len(omega)} vs {len(sigma)})")
    if len(omega) < 3:
        raise DomainError("residual needs at least 3 frames")
    if not dt > 0:
        raise DomainError("frame spacing must be positive")
    if times is not None:
        gaps = np.diff(np.asarray(times, dtype=float))
        if np.max(np.abs(gaps - dt)) > 1e-9 * max(1.0, dt):
            raise DomainError("frames are not uniformly spaced at the declared stride")
    grid = omega[0].grid
    mask = dealias_mask(grid)
    out = np.empty(len(omega) - 2)
    for i in range(1, len(omega) - 1):
        w = omega[i].coeffs
        dq = ((omega[i + 1].coeffs - sigma[i + 1].coeffs) - (omega[i - 1].coeffs - sigma[i - 1].coeffs)) / (2 * dt)
        uh, _ = _coeffs_velocity(w, grid)
        R = dq + _advect(to_physical(uh), w, grid, mask) + mu * grid.ksq * w
        out[i - 1] = sobolev_norm(SpectralScalar(grid, R), -s_tilde)
    return out


def limit_initial_data(r0: SpectralScalar, u0: SpectralVec2) -> LimitState:
    """omega0 = curl of the Leray-projected u0, sigma0 = r0."""
    if r0.grid != u0.grid:
        raise ConfigurationError("r0 and u0 live on different grids")
    dfree, _ = leray_project(u0)
    return LimitState(0.0, curl2d(dfree), r0)
