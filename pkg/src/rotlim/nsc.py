"""Rotating compressible Navier-Stokes with large bulk viscosity on the 2-D torus.

Unknowns are r = rho - 1 and the momentum m = rho u. The system solved is

    d_t r + div m = 0
    d_t m + div(m (x) u) + eps^(-2 alpha) grad P(rho) + eps^(-1) m^perp
        = mu lap u + eps^(-2 beta) grad div u

with P(rho) = a rho^gamma. Everything that is linear in (r, m) with a
singular coefficient is integrated exactly per Fourier mode by a 3x3 matrix
exponential; the O(1) remainder is explicit (second-order exponential time
differencing).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    ConfigurationError,
    DomainError,
    NumericError,
    ResourceError,
    StepSizeError,
    VacuumError,
    VacuumRiskError,
)
from .fast_heat import _exp_fitted_trapezoid
from .spectral import (
    GridSpec,
    SpectralScalar,
    SpectralVec2,
    dealias_mask,
    sobolev_norm,
    to_physical,
    to_spectral,
)

__all__ = [
    "FlowParams",
    "FlowState",
    "DiagnosticsRecord",
    "SimulationResult",
    "pressure",
    "dpressure",
    "internal_energy",
    "relative_entropy",
    "pi_remainder",
    "linear_operator",
    "expm3",
    "linear_exponential",
    "LinearPropagator",
    "nonlinear_rhs",
    "step",
    "simulate",
    "total_energy",
    "ill_prepared_data",
    "matched_state",
    "wave_residual",
    "ess_res_split",
    "sigma_diagnostics",
    "write_diagnostics_csv",
]


@dataclass(frozen=True)
class FlowParams:
    eps: float
    alpha: float = 0.0
    beta: float = 1.0
    mu: float = 0.05
    gamma: float = 2.0
    a: float = 1.0
    rotation: bool = True
    bulk: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.eps <= 1:
            raise ConfigurationError(f"eps must lie in (0, 1], got {self.eps}")
        if not 0 <= self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.beta < 1:
            raise ConfigurationError(f"beta must be >= 1, got {self.beta}")
        if self.mu < 0:
            raise ConfigurationError(f"mu must be >= 0, got {self.mu}")
        if self.gamma <= 1:
            raise ConfigurationError(f"gamma must exceed 1, got {self.gamma}")
        if self.a <= 0:
            raise ConfigurationError(f"pressure constant must be positive, got {self.a}")

    @property
    def mach2(self) -> float:
        """eps^(-2 alpha), the pressure prefactor."""
        return self.eps ** (-2.0 * self.alpha)

    @property
    def coriolis(self) -> float:
        return 1.0 / self.eps if self.rotation else 0.0

    @property
    def bulk_coeff(self) -> float:
        return self.eps ** (-2.0 * self.beta) if self.bulk else 0.0

    @property
    def sound2(self) -> float:
        """P'(1)."""
        return self.a * self.gamma


# --- constitutive functions -------------------------------------------------------


def _rho(rho, allow_zero: bool = True) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or (not allow_zero and np.any(rho == 0)):
        raise DomainError("density must be nonnegative")
    return rho


def pressure(rho, a: float = 1.0, gamma: float = 2.0):
    return a * _rho(rho) ** gamma


def dpressure(rho, a: float = 1.0, gamma: float = 2.0):
    return a * gamma * _rho(rho) ** (gamma - 1.0)


def internal_energy(rho, a: float = 1.0, gamma: float = 2.0):
    """H(rho) = rho int_1^rho P(s)/s^2 ds."""
    r = _rho(rho)
    return a * (r**gamma - r) / (gamma - 1.0)


def relative_entropy(rho, a: float = 1.0, gamma: float = 2.0):
    """E(rho, 1) = H(rho) - H(1) - H'(1)(rho - 1)."""
    r = _rho(rho)
    return a * (r**gamma - 1.0 - gamma * (r - 1.0)) / (gamma - 1.0)


def pi_remainder(rho, a: float = 1.0, gamma: float = 2.0):
    """P(rho) - P(1) - P'(1)(rho - 1)."""
    r = _rho(rho)
    return a * (r**gamma - 1.0 - gamma * (r - 1.0))


# --- state ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowState:
    time: float
    r: SpectralScalar
    m: SpectralVec2

    def __post_init__(self) -> None:
        if self.r.grid != self.m.grid:
            raise ConfigurationError("density and momentum live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.r.grid

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FlowState":
        return cls(0.0, SpectralScalar.zeros(grid), SpectralVec2.zeros(grid))

    def as_array(self) -> np.ndarray:
        return np.stack([self.r.coeffs, self.m[0].coeffs, self.m[1].coeffs])

    @classmethod
    def from_array(cls, time: float, grid: GridSpec, y: np.ndarray) -> "FlowState":
        return cls(
            time,
            SpectralScalar(grid, y[0]),
            SpectralVec2((SpectralScalar(grid, y[1]), SpectralScalar(grid, y[2]))),
        )

    def rho(self) -> np.ndarray:
        return 1.0 + self.r.physical()

    def velocity(self) -> np.ndarray:
        """Physical u = m / rho, shape (2, n, n)."""
        rho = self.rho()
        if rho.min() <= 0:
            raise VacuumError(f"vacuum: min rho = {rho.min():.3e}")
        return self.m.physical() / rho

    def sigma(self, eps: float) -> SpectralScalar:
        return self.r / eps


# --- linear part ------------------------------------------------------------------


def linear_operator(k1, k2, params: FlowParams) -> np.ndarray:
    """Per-mode generator acting on (r, m1, m2); shape (..., 3, 3)."""
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    ksq = k1**2 + k2**2
    b = params.bulk_coeff
    c2 = params.sound2 * params.mach2
    f = params.coriolis
    L = np.zeros(k1.shape + (3, 3), dtype=complex)
    L[..., 0, 1] = -1j * k1
    L[..., 0, 2] = -1j * k2
    L[..., 1, 0] = -1j * k1 * c2
    L[..., 2, 0] = -1j * k2 * c2
    L[..., 1, 1] = -params.mu * ksq - b * k1 * k1
    L[..., 2, 2] = -params.mu * ksq - b * k2 * k2
    L[..., 1, 2] = f - b * k1 * k2
    L[..., 2, 1] = -f - b * k1 * k2
    return L


def expm3(L: np.ndarray, dt: float) -> np.ndarray:
    """exp(L dt) for a single 3x3 matrix or a stack of them (Pade 13)."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    L = np.asarray(L, dtype=complex)
    if not np.all(np.isfinite(L)):
        raise NumericError("non-finite generator entries")
    out = scipy.linalg.expm(L * dt)
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix exponential overflowed")
    return out


# Modes whose bulk rate over one step exceeds this are exponentiated through the
# stiff/slow splitting below instead of plain scaling and squaring.
_STIFF_RATE = 1e3


def _split_functions(a, c, f, mu, b, dt, want_phi: bool):
    """exp, phi1, phi2 of L dt for stiff modes, in the frame (r, m_perp, m_par).

    In that frame the bulk term acts on m_par alone. The invariant subspaces
    z = P x (slow) and x = R z (stiff) are found by fixed-point iteration,
    which contracts at rate ~ |slow scales| / (b |k|^2). The 2x2 slow block is
    then well scaled for Pade and the stiff eigenvalue is handled as a scalar,
    so no information is lost to repeated squaring. Returns None where the
    iteration does not settle.
    """
    n = a.shape[0]
    D = (mu + b) * a**2 * dt
    A_ss = np.zeros((n, 2, 2), dtype=complex)
    A_ss[:, 1, 1] = -mu * a**2 * dt
    A_sz = np.stack([-1j * a * dt, np.full(n, -f * dt, dtype=complex)], axis=1)[:, :, None]  # (n, 2, 1)
    A_zs = np.stack([-1j * a * c * dt, np.full(n, f * dt, dtype=complex)], axis=1)[:, None, :]  # (n, 1, 2)
    A_zz = (-D).astype(complex)[:, None, None]
    P = np.zeros((n, 1, 2), dtype=complex)
    R = np.zeros((n, 2, 1), dtype=complex)
    for _ in range(100):
        P_new = (P @ A_ss + P @ A_sz @ P - A_zs) / A_zz
        R_new = (A_ss @ R + A_sz - R @ A_zs @ R) / A_zz
        done = (np.abs(P_new - P).max() <= 1e-17 * max(np.abs(P_new).max(), 1e-300)
                and np.abs(R_new - R).max() <= 1e-17 * max(np.abs(R_new).max(), 1e-300))
        P, R = P_new, R_new
        if done:
            break
    ok = np.isfinite(P).all(axis=(1, 2)) & np.isfinite(R).all(axis=(1, 2))
    S = A_ss + A_sz @ P  # slow block
    lam = (A_zz + A_zs @ R)[:, 0, 0]  # stiff eigenvalue (times dt)
    # T = [[I, R], [P, 1]] and its inverse through the scalar Schur complement
    T = np.zeros((n, 3, 3), dtype=complex)
    T[:, :2, :2] = np.eye(2)
    T[:, :2, 2:] = R
    T[:, 2:, :2] = P
    T[:, 2, 2] = 1.0
    sig = 1.0 - (P @ R)[:, 0, 0]
    Ti = np.zeros_like(T)
    Ti[:, :2, :2] = np.eye(2) + R @ P / sig[:, None, None]
    Ti[:, :2, 2:] = -R / sig[:, None, None]
    Ti[:, 2:, :2] = -P / sig[:, None, None]
    Ti[:, 2, 2] = 1.0 / sig
    # exp and phi functions of the slow block from one 6x6 augmented exponential
    M = np.zeros((n, 6, 6), dtype=complex)
    M[:, :2, :2] = S
    M[:, :2, 2:4] = np.eye(2)
    M[:, 2:4, 4:6] = np.eye(2)
    X = scipy.linalg.expm(M)
    slow = [X[:, :2, :2], X[:, :2, 2:4], X[:, :2, 4:6]]
    e = np.exp(lam)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        small = np.abs(lam) < 1e-4
        lz = np.where(small, 1.0, lam)
        p1 = np.where(small, 1 + lam / 2 + lam**2 / 6, np.expm1(lz) / lz)
        p2 = np.where(small, 0.5 + lam / 6 + lam**2 / 24, (np.expm1(lz) - lz) / lz**2)
    out = []
    for blk, sc in zip(slow if want_phi else slow[:1], (e, p1, p2)):
        Dg = np.zeros((n, 3, 3), dtype=complex)
        Dg[:, :2, :2] = blk
        Dg[:, 2, 2] = sc
        out.append(T @ Dg @ Ti)
    ok &= np.all([np.isfinite(o).all(axis=(1, 2)) for o in out], axis=0)
    return out, ok


def _stiff_modes(k1, k2, params: FlowParams, dt: float) -> np.ndarray:
    ksq = np.asarray(k1, dtype=float) ** 2 + np.asarray(k2, dtype=float) ** 2
    slow = params.mu * ksq + np.sqrt(ksq * params.sound2 * params.mach2) + params.coriolis
    bulk = params.bulk_coeff * ksq
    return (bulk * dt > _STIFF_RATE) & (bulk > 1e3 * slow)


def _structured(k1, k2, params: FlowParams, dt: float, want_phi: bool):
    """Stiff-mode functions rotated back to (r, m1, m2); (mask, [F...]) or None."""
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    mask = _stiff_modes(k1, k2, params, dt)
    if not mask.any():
        return None
    kk1, kk2 = k1[mask], k2[mask]
    a = np.hypot(kk1, kk2)
    cs, sn = kk1 / a, kk2 / a
    funcs, ok = _split_functions(a, params.sound2 * params.mach2, params.coriolis, params.mu,
                                 params.bulk_coeff, dt, want_phi)
    # rows map (r, m1, m2) to (r, m_perp, m_par)
    U = np.zeros((a.size, 3, 3))
    U[:, 0, 0] = 1.0
    U[:, 1, 1], U[:, 1, 2] = -sn, cs
    U[:, 2, 1], U[:, 2, 2] = cs, sn
    Ut = np.swapaxes(U, 1, 2)
    idx = np.flatnonzero(mask.ravel())[ok]
    return idx, [(Ut @ F @ U)[ok] for F in funcs]


def linear_exponential(k1, k2, params: FlowParams, dt: float) -> np.ndarray:
    """exp(L_k dt) built from the parameters, accurate also for very stiff modes.

    Non-stiff modes go through ``expm3``; modes where the bulk rate dominates
    use a stiff/slow splitting that keeps full relative accuracy of the slow
    dynamics (plain scaling and squaring loses about unit roundoff times
    ||L dt|| there).
    """
    k1, k2 = np.broadcast_arrays(np.asarray(k1, dtype=float), np.asarray(k2, dtype=float))
    E = expm3(linear_operator(k1, k2, params), dt)
    st = _structured(k1, k2, params, dt, want_phi=False)
    if st is not None:
        idx, (F,) = st
        flat = E.reshape(-1, 3, 3)
        flat[idx] = F
    return E


class LinearPropagator:
    """exp(L_k h) for every mode of a grid, applied to stacked (3, n, n) coefficients."""

    def __init__(self, grid: GridSpec, params: FlowParams, dt: float):
        self.grid, self.params, self.dt = grid, params, dt
        E = linear_exponential(grid.k1, grid.k2, params, dt)  # (n, n, 3, 3)
        self._E = np.ascontiguousarray(np.moveaxis(E, (2, 3), (0, 1)))  # (3, 3, n, n)
        self._L = None
        self._phi = None

    def phi_functions(self) -> tuple[np.ndarray, np.ndarray]:
        """phi1(hL) and phi2(hL) per mode, from one augmented 9x9 exponential."""
        if self._phi is None:
            L = linear_operator(self.grid.k1, self.grid.k2, self.params) * self.dt
            M = np.zeros(L.shape[:-2] + (9, 9), dtype=complex)
            eye = np.eye(3)
            M[..., :3, :3] = L
            M[..., :3, 3:6] = eye
            M[..., 3:6, 6:9] = eye
            X = expm3(M, 1.0)
            phis = [X[..., :3, 3:6], X[..., :3, 6:9]]
            st = _structured(self.grid.k1, self.grid.k2, self.params, self.dt, want_phi=True)
            if st is not None:
                idx, (_, F1, F2) = st
                for ph, F in zip(phis, (F1, F2)):
                    flat = ph.reshape(-1, 3, 3)
                    flat[idx] = F
            self._phi = tuple(np.ascontiguousarray(np.moveaxis(ph, (-2, -1), (0, 1))) for ph in phis)
        return self._phi

    def apply_phi(self, which: int, y: np.ndarray) -> np.ndarray:
        return _matvec(self.phi_functions()[which - 1], y)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return _matvec(self._E, y)

    def generator(self, y: np.ndarray) -> np.ndarray:
        """L_k y for every mode."""
        if self._L is None:
            L = linear_operator(self.grid.k1, self.grid.k2, self.params)
            self._L = np.ascontiguousarray(np.moveaxis(L, (2, 3), (0, 1)))
        return _matvec(self._L, y)


def _matvec(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.stack([A[i, 0] * y[0] + A[i, 1] * y[1] + A[i, 2] * y[2] for i in range(3)])


# --- explicit part ----------------------------------------------------------------


@dataclass
class _Eval:
    rhs: np.ndarray  # (3, n, n)
    u_hat: np.ndarray  # (2, n, n), unmasked transform of m / rho
    rho: np.ndarray  # physical density
    u: np.ndarray  # physical velocity


def _evaluate(y: np.ndarray, grid: GridSpec, params: FlowParams) -> _Eval:
    mask = dealias_mask(grid)
    k1, k2 = grid.k1, grid.k2
    phys = to_physical(y)
    rho = 1.0 + phys[0]
    rmin = float(rho.min())
    if not np.isfinite(rmin):
        raise NumericError("non-finite density")
    if rmin <= 0:
        raise VacuumError(f"vacuum: min rho = {rmin:.3e}")
    m = phys[1:]
    u = m / rho
    u_hat = to_spectral(u)
    du = np.where(mask, u_hat, 0.0) - y[1:]  # u - m in spectral space (dealiased)
    u_d = to_physical(np.where(mask, u_hat, 0.0))
    # div(m (x) u)_i = d_j (m_i u_j)
    flux = to_spectral(m[:, None] * u_d[None, :])  # (2, 2, n, n)
    conv = 1j * (k1 * flux[:, 0] + k2 * flux[:, 1])
    pi = to_spectral(pi_remainder(rho, params.a, params.gamma))
    out = np.zeros_like(y)
    ddu = 1j * (k1 * du[0] + k2 * du[1])
    b = params.bulk_coeff
    for i, ki in enumerate((k1, k2)):
        out[i + 1] = (
            -conv[i]
            - params.mach2 * 1j * ki * pi
            - params.mu * grid.ksq * du[i]
            + b * 1j * ki * ddu
        )
    out[1:] *= mask
    return _Eval(out, u_hat, rho, u)


def nonlinear_rhs(state: FlowState, params: FlowParams) -> tuple[SpectralScalar, SpectralVec2]:
    """Explicit part of the momentum tendency; the mass tendency is zero."""
    ev = _evaluate(state.as_array(), state.grid, params)
    g = state.grid
    return SpectralScalar(g, ev.rhs[0]), SpectralVec2(
        (SpectralScalar(g, ev.rhs[1]), SpectralScalar(g, ev.rhs[2]))
    )


def _cfl(u: np.ndarray, dt: float, grid: GridSpec) -> float:
    umax = float(np.sqrt((u**2).sum(axis=0)).max())
    return dt * umax * grid.n / grid.length


def _lawson_heun(y, ev0: _Eval, dt, grid, params, prop: LinearPropagator) -> np.ndarray:
    n0 = ev0.rhs
    y1 = prop.apply(y + dt * n0)
    n1 = _evaluate(y1, grid, params).rhs
    out = prop.apply(y + 0.5 * dt * n0) + 0.5 * dt * n1
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite state after step")
    return out


def _etd2(y, ev0: _Eval, dt, grid, params, prop: LinearPropagator) -> np.ndarray:
    n0 = ev0.rhs
    a = prop.apply(y) + dt * prop.apply_phi(1, n0)
    n1 = _evaluate(a, grid, params).rhs
    out = a + dt * prop.apply_phi(2, n1 - n0)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite state after step")
    return out


_SCHEMES = {"etd2": _etd2, "lawson": _lawson_heun}


def _scheme(name: str):
    try:
        return _SCHEMES[name]
    except KeyError:
        raise ConfigurationError(f"unknown time scheme {name!r}; choose from {sorted(_SCHEMES)}") from None


def step(
    state: FlowState,
    dt: float,
    params: FlowParams,
    propagator: LinearPropagator | None = None,
    scheme: str = "etd2",
) -> FlowState:
    """One second-order exponential step, exact on the linear system.

    ``scheme`` is ``"etd2"`` (Cox-Matthews exponential time differencing,
    the default) or ``"lawson"`` (Heun's method in the integrating-factor
    variable).
    """
    advance = _scheme(scheme)
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    grid = state.grid
    prop = propagator or LinearPropagator(grid, params, dt)
    y = state.as_array()
    ev = _evaluate(y, grid, params)
    c = _cfl(ev.u, dt, grid)
    if c > 0.5:
        raise StepSizeError(f"advective CFL number {c:.3f} exceeds 0.5")
    return FlowState.from_array(state.time + dt, grid, advance(y, ev, dt, grid, params, prop))


# --- diagnostics ------------------------------------------------------------------


def total_energy(state: FlowState, params: FlowParams) -> float:
    """int 1/2 rho |u|^2 + eps^(-2 alpha) E(rho, 1)."""
    return _energy(state.rho(), state.m.physical(), state.grid, params)


def _energy(rho, m, grid, params) -> float:
    if rho.min() <= 0:
        raise VacuumError(f"vacuum: min rho = {rho.min():.3e}")
    kin = 0.5 * (m**2).sum(axis=0) / rho
    pot = params.mach2 * relative_entropy(rho, params.a, params.gamma)
    return float(grid.cell_area * np.sum(kin + pot))


def _dissipation_density(u_hat: np.ndarray, grid: GridSpec, params: FlowParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode mu|grad u|^2 + eps^(-2 beta)|div u|^2, and the bulk part alone."""
    L2 = grid.length**2
    visc = params.mu * grid.ksq * (np.abs(u_hat[0]) ** 2 + np.abs(u_hat[1]) ** 2)
    divu = np.abs(grid.k1 * u_hat[0] + grid.k2 * u_hat[1]) ** 2
    bulk = params.eps ** (-2.0 * params.beta) * divu
    return L2 * (visc + bulk if params.bulk else visc), L2 * bulk


def _dissipation_rate(y, ev: _Eval, grid, params, prop: LinearPropagator):
    """Time derivative of the per-mode densities of _dissipation_density."""
    ydot = prop.generator(y) + ev.rhs
    phys = to_physical(np.stack([ydot[0], ydot[1], ydot[2]]))
    udot = to_spectral((phys[1:] - ev.u * phys[0]) / ev.rho)
    u = ev.u_hat
    L2 = grid.length**2
    visc = 2.0 * params.mu * grid.ksq * np.real(np.conj(u[0]) * udot[0] + np.conj(u[1]) * udot[1])
    du = grid.k1 * u[0] + grid.k2 * u[1]
    dudot = grid.k1 * udot[0] + grid.k2 * udot[1]
    bulk = 2.0 * params.eps ** (-2.0 * params.beta) * np.real(np.conj(du) * dudot)
    return L2 * (visc + bulk if params.bulk else visc), L2 * bulk


def _corrected_trapezoid(a, b, da, db, h):
    """Endpoint-corrected trapezoid per mode; exponential fit where the mode is stiff."""
    tiny = 1e-300
    za = h * np.abs(da) / np.maximum(a, tiny)
    zb = h * np.abs(db) / np.maximum(b, tiny)
    smooth = (za < 0.5) & (zb < 0.5)
    herm = 0.5 * h * (a + b) + h * h / 12.0 * (da - db)
    return np.where(smooth, herm, _exp_fitted_trapezoid(a, b, h))


def _scaled_div_norm(u_hat, grid, params) -> float:
    divu = grid.k1 * u_hat[0] + grid.k2 * u_hat[1]
    return float(params.eps ** (-params.beta) * grid.length * np.sqrt(np.sum(np.abs(divu) ** 2)))


def _curl(y_m: np.ndarray, grid: GridSpec) -> np.ndarray:
    return 1j * (grid.k1 * y_m[1] - grid.k2 * y_m[0])


def _curl_forcing(y: np.ndarray, ev: _Eval, grid: GridSpec, params: FlowParams) -> np.ndarray:
    """curl f with f = mu lap u - div(m (x) u); gradients drop out."""
    n = ev.rhs
    return _curl(n[1:], grid) - params.mu * grid.ksq * _curl(y[1:], grid)


def _wave_residual_at(y_prev, y, y_next, ev: _Eval, dt, grid, params) -> float:
    eps = params.eps
    dcurl = (_curl(y_next[1:], grid) - _curl(y_prev[1:], grid)) / (2.0 * dt)
    divm = 1j * (grid.k1 * y[1] + grid.k2 * y[2])
    R = eps * (dcurl - _curl_forcing(y, ev, grid, params)) + eps * params.coriolis * divm
    return sobolev_norm(SpectralScalar(grid, R), -1.0)


def wave_residual(states: Sequence[FlowState], params: FlowParams, dt: float | None = None) -> float:
    """max over interior frames of ||eps d_t curl m + div m - eps curl f||_{H^-1}.

    ``dt`` is the (uniform) spacing of the frames; it is inferred from their
    times when omitted.
    """
    if len(states) < 3:
        raise DomainError("wave residual needs at least 3 consecutive states")
    times = np.array([s.time for s in states])
    if dt is None:
        dt = float(times[1] - times[0])
    if dt <= 0 or np.max(np.abs(np.diff(times) - dt)) > 1e-9 * max(1.0, dt):
        raise DomainError("states must be uniformly spaced in time")
    grid = states[0].grid
    ys = [s.as_array() for s in states]
    worst = 0.0
    for i in range(1, len(ys) - 1):
        ev = _evaluate(ys[i], grid, params)
        worst = max(worst, _wave_residual_at(ys[i - 1], ys[i], ys[i + 1], ev, dt, grid, params))
    return worst


def ess_res_split(rho, gamma: float = 2.0, grid: GridSpec | None = None):
    """Split at the essential range 1/2 <= rho <= 2.

    Returns ``([rho - 1]_ess, [rho]_res, norms)`` where the fields are physical
    samples and ``norms`` holds ``ess_l2`` (||[rho-1]_ess||_L2), ``res_mass``
    (||[rho]_res||_{L^gamma}^gamma) and ``res_measure``.
    """
    if isinstance(rho, SpectralScalar):
        grid, rho = rho.grid, rho.physical()
    rho = np.asarray(rho, dtype=float)
    if grid is None:
        grid = GridSpec(rho.shape[0])
    ess = (rho >= 0.5) & (rho <= 2.0)
    ess_part = np.where(ess, rho - 1.0, 0.0)
    res_part = np.where(ess, 0.0, rho)
    dA = grid.cell_area
    norms = {
        "ess_l2": float(np.sqrt(dA * np.sum(ess_part**2))),
        "res_mass": float(dA * np.sum(np.abs(res_part) ** gamma)),
        "res_measure": float(dA * np.count_nonzero(~ess)),
    }
    return ess_part, res_part, norms


def sigma_diagnostics(state: FlowState, params: FlowParams, s_tilde: float = 3.0) -> float:
    """||sigma||_{H^-s} with sigma = r / eps."""
    if s_tilde < 3:
        raise DomainError(f"negative-regularity index must be >= 3, got {s_tilde}")
    return sobolev_norm(state.sigma(params.eps), -s_tilde)


# --- initial data -----------------------------------------------------------------


def _random_field(rng: np.random.Generator, grid: GridSpec, kmax: float) -> np.ndarray:
    k = grid.kmag
    shell = (k > 0) & (k <= kmax)
    c = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * shell
    c = c / (1.0 + k**2)
    return to_physical(c)  # real part of the field, hence Hermitian


def ill_prepared_data(
    seed: int, eps: float, amplitude: float, grid: GridSpec, kmax: float = 4.0
) -> tuple[SpectralScalar, SpectralVec2]:
    """Random band-limited (r0, u0) with sup|r0| = sup|u0| = amplitude.

    u0 has both a gradient and a rotational part, so no compatibility with
    the limit constraints is imposed.
    """
    if amplitude < 0:
        raise ConfigurationError("amplitude must be nonnegative")
    if kmax > grid.n / 6:
        raise ConfigurationError(f"kmax={kmax} too large for n={grid.n}: products would alias")
    if 1.0 - eps * amplitude < 0.5:
        raise VacuumRiskError(f"eps*amplitude = {eps * amplitude:g} allows min rho0 < 1/2")
    if amplitude == 0:
        return SpectralScalar.zeros(grid), SpectralVec2.zeros(grid)
    rng = np.random.default_rng(seed)
    r0 = _random_field(rng, grid, kmax)
    r0 *= amplitude / np.abs(r0).max()
    psi = _random_field(rng, grid, kmax)
    phi = _random_field(rng, grid, kmax)
    k1, k2 = grid.k1, grid.k2
    ps, ph = to_spectral(psi), to_spectral(phi)
    u = to_physical(np.stack([-1j * k2 * ps + 1j * k1 * ph, 1j * k1 * ps + 1j * k2 * ph]))
    u *= amplitude / np.sqrt((u**2).sum(axis=0)).max()
    return SpectralScalar.from_physical(grid, r0), SpectralVec2.from_physical(grid, u)


def matched_state(r0: SpectralScalar, u0: SpectralVec2, eps: float) -> FlowState:
    """State with rho0 = 1 + eps r0 and m0 = rho0 u0 (dealiased)."""
    grid = r0.grid
    mask = dealias_mask(grid)
    rho0 = 1.0 + eps * r0.physical()
    if rho0.min() <= 0:
        raise VacuumRiskError("initial density is not positive")
    m = to_spectral(rho0 * u0.physical()) * mask
    y = np.stack([eps * r0.coeffs * mask, m[0], m[1]])
    return FlowState.from_array(0.0, grid, y)


# --- driver -----------------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    t: float
    energy: float
    dissipation: float
    div_norm: float
    sigma_h_neg3: float
    eta_l2: float
    wave_residual: float
    min_rho: float

    COLUMNS = ("t", "energy", "dissipation", "div_norm", "sigma_h_neg3", "eta_l2", "wave_residual", "min_rho")


@dataclass
class SimulationResult:
    params: FlowParams
    dt: float
    stride: int
    states: list[FlowState]
    diagnostics: list[DiagnosticsRecord]
    div_l2t: float  # ||eps^-beta div u||_{L^2(0,T; L^2)}
    steps: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([d.t for d in self.diagnostics])

    def energy_excess(self) -> float:
        """max_t (E(t) + D(0,t)) / E(0) - 1."""
        e0 = self.diagnostics[0].energy
        if e0 == 0:
            return 0.0
        return max((d.energy + d.dissipation) / e0 - 1.0 for d in self.diagnostics)


def write_diagnostics_csv(records: Sequence[DiagnosticsRecord], path: str | Path) -> None:
    try:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DiagnosticsRecord.COLUMNS)
            for rec in records:
                w.writerow([f"{v:.17g}" for v in astuple(rec)])
    except OSError as exc:
        raise OSError(f"cannot write diagnostics to {path}: {exc}") from exc


def _check_band_limited(state: FlowState) -> None:
    y = state.as_array()
    outside = np.abs(y[:, ~dealias_mask(state.grid)])
    scale = max(float(np.abs(y).max()), 1e-300)
    if outside.size and outside.max() > 1e-12 * scale:
        raise ConfigurationError("initial data is not band-limited under the 2/3 cutoff")


def _layer_substeps(y0: np.ndarray, grid: GridSpec, params: FlowParams, dt: float, nsteps: int) -> list[int]:
    """Power-of-two substep counts for the first coarse steps.

    Transients of the stiff potential modes decay at rate about
    (mu + eps^(-2 beta)) |k|^2. A mode still active at time t has rate at most
    ~20/t, and the quadrature wants 2 * rate * h <= 1/2, so steps are graded
    as h ~ t/80, floored at the fastest active rate of the initial data.
    """
    amp = np.abs(y0).max(axis=0)
    if amp.max() == 0:
        return []
    active = amp > 1e-10 * amp.max()
    lam_max = float(((params.mu + params.bulk_coeff) * grid.ksq[active]).max())
    h_min = 0.25 / lam_max if lam_max > 0 else dt
    counts = []
    for i in range(nsteps):
        h = max(h_min, i * dt / 80.0)
        if h >= dt:
            break
        counts.append(1 << int(math.ceil(math.log2(dt / h))))
    return counts


def simulate(
    state0: FlowState,
    params: FlowParams,
    T: float,
    dt: float,
    stride: int = 1,
    keep_states: bool = True,
    s_tilde: float = 3.0,
    scheme: str = "etd2",
    resolve_layer: bool = True,
    deadline: float | None = None,
) -> SimulationResult:
    """Integrate to time T, recording states and diagnostics every ``stride`` steps.

    Dissipation is accumulated per mode with the endpoint-corrected trapezoid
    rule (exact time derivatives of the densities), switching to an
    exponentially fitted rule on modes that are stiff over one step. With
    ``resolve_layer`` the first coarse steps are split into graded substeps
    while fast transients of the initial layer are alive. ``deadline`` is a
    ``time.monotonic()`` value past which the run is abandoned.
    """
    if not T > 0 or not dt > 0:
        raise ConfigurationError("T and dt must be positive")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise ConfigurationError(f"T={T} is not an integer multiple of dt={dt}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    advance = _scheme(scheme)
    _check_band_limited(state0)
    grid = state0.grid
    props: dict[int, LinearPropagator] = {1: LinearPropagator(grid, params, dt)}
    y = state0.as_array()
    t0 = state0.time
    substeps = _layer_substeps(y, grid, params, dt, nsteps) if resolve_layer else []
    ev = _evaluate(y, grid, params)
    dens, bulk = _dissipation_density(ev.u_hat, grid, params)
    ddens, dbulk = _dissipation_rate(y, ev, grid, params, props[1])
    acc = {"diss": 0.0, "bulk": 0.0}
    states: list[FlowState] = []
    records: list[DiagnosticsRecord] = []
    pending: int | None = None  # record index awaiting its wave residual
    y_prev = None

    def record(i: int, y_i, ev_i) -> None:
        st = FlowState.from_array(t0 + i * dt, grid, y_i)
        if keep_states:
            states.append(st)
        records.append(
            DiagnosticsRecord(
                t=st.time,
                energy=_energy(ev_i.rho, to_physical(y_i[1:]), grid, params),
                dissipation=acc["diss"],
                div_norm=_scaled_div_norm(ev_i.u_hat, grid, params),
                sigma_h_neg3=sigma_diagnostics(st, params, s_tilde),
                eta_l2=float(grid.length * np.sqrt(np.sum(np.abs(_curl(y_i[1:], grid)) ** 2))),
                wave_residual=math.nan,
                min_rho=float(ev_i.rho.min()),
            )
        )

    record(0, y, ev)
    for i in range(1, nsteps + 1):
        if deadline is not None and time.monotonic() > deadline:
            raise ResourceError(f"wall-clock budget exhausted at t={t0 + (i - 1) * dt:.4g}")
        c = _cfl(ev.u, dt, grid)
        if c > 0.5:
            raise StepSizeError(f"advective CFL number {c:.3f} exceeds 0.5 at t={t0 + (i - 1) * dt:.4g}")
        m = substeps[i - 1] if i - 1 < len(substeps) else 1
        if m not in props:
            props[m] = LinearPropagator(grid, params, dt / m)
        prop = props[m]
        h = dt / m
        ys, evs = y, ev
        for _ in range(m):
            y_new = advance(ys, evs, h, grid, params, prop)
            ev_new = _evaluate(y_new, grid, params)
            dens_new, bulk_new = _dissipation_density(ev_new.u_hat, grid, params)
            ddens_new, dbulk_new = _dissipation_rate(y_new, ev_new, grid, params, prop)
            acc["diss"] += float(np.sum(_corrected_trapezoid(dens, dens_new, ddens, ddens_new, h)))
            acc["bulk"] += float(np.sum(_corrected_trapezoid(bulk, bulk_new, dbulk, dbulk_new, h)))
            ys, evs = y_new, ev_new
            dens, bulk, ddens, dbulk = dens_new, bulk_new, ddens_new, dbulk_new
        if pending is not None:
            records[pending].wave_residual = _wave_residual_at(y_prev, y, ys, ev, dt, grid, params)
            pending = None
        y_prev = y
        y, ev = ys, evs
        if i % stride == 0 or i == nsteps:
            record(i, y, ev)
            if i < nsteps:
                pending = len(records) - 1
    res = SimulationResult(params, dt, stride, states, records, math.sqrt(acc["bulk"]), nsteps)
    res.extra["layer_substeps"] = int(sum(substeps))
    return res
