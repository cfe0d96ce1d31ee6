"""Discrete Littlewood-Paley decomposition on the torus.

Blocks use the radial profile chi (equal to 1 on [0, r1], 0 on [r2, inf))
and phi(xi) = chi(xi/2) - chi(xi), so that

    chi(D) + sum_{j>=0} phi(2^-j D) = Id

telescopes exactly on every grid frequency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
import math
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError
from .spectral import GridSpec, SpectralScalar, dealias_mask, lp_norm, sobolev_norm, to_physical, to_spectral

__all__ = [
    "lp_property_battery",
    "BatteryResult",
    "DyadicPartition",
    "BesovSpec",
    "dyadic_block",
    "low_freq",
    "besov_norm",
    "chemin_lerner_norm",
    "time_outside_norm",
    "bony_decompose",
    "bernstein_verify",
]


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t<=0, 1 for t>=1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class DyadicPartition:
    r1: float = 1.1
    r2: float = 1.9

    def __post_init__(self) -> None:
        if not 1.0 < self.r1 < self.r2 < 2.0:
            raise ConfigurationError(f"need 1 < r1 < r2 < 2, got r1={self.r1}, r2={self.r2}")

    def chi(self, r) -> np.ndarray:
        return 1.0 - _smoothstep((np.asarray(r, dtype=float) - self.r1) / (self.r2 - self.r1))

    def phi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.chi(r / 2.0) - self.chi(r)

    def max_block(self, grid: GridSpec) -> int:
        """Largest j with a nonzero block on ``grid``."""
        kmax = float(grid.kmag.max())
        j = -1
        while kmax / 2.0 ** (j + 1) > self.r1:
            j += 1
        return j

    def block_symbol(self, grid: GridSpec, j: int) -> np.ndarray:
        return _block_symbol(self, grid, j)

    def low_symbol(self, grid: GridSpec, j: int) -> np.ndarray:
        """Symbol of S_j = chi(2^-j D); S_j = 0 for j <= -1."""
        return _low_symbol(self, grid, j)

    def export_csv(self, path: str | Path, rmax: float = 4.0, samples: int = 401) -> None:
        r = np.linspace(0.0, rmax, samples)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "chi", "phi"])
            for ri, c, p in zip(r, self.chi(r), self.phi(r)):
                w.writerow([f"{ri:.6f}", f"{c:.17g}", f"{p:.17g}"])


@lru_cache(maxsize=256)
def _block_symbol(part: DyadicPartition, grid: GridSpec, j: int) -> np.ndarray:
    if j < -1:
        out = np.zeros(grid.shape)
    elif j == -1:
        out = part.chi(grid.kmag)
    else:
        out = part.phi(grid.kmag / 2.0**j)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=256)
def _low_symbol(part: DyadicPartition, grid: GridSpec, j: int) -> np.ndarray:
    out = np.zeros(grid.shape) if j < 0 else part.chi(grid.kmag / 2.0**j)
    out.flags.writeable = False
    return out


_DEFAULT = DyadicPartition()


@dataclass(frozen=True)
class BesovSpec:
    s: float
    p: float = 2.0
    r: float = 2.0

    def __post_init__(self) -> None:
        if self.p < 1 or self.r < 1:
            raise ConfigurationError(f"Besov exponents need p, r >= 1, got p={self.p}, r={self.r}")


def dyadic_block(f: SpectralScalar, j: int, partition: DyadicPartition = _DEFAULT) -> SpectralScalar:
    return SpectralScalar(f.grid, partition.block_symbol(f.grid, j) * f.coeffs)


def low_freq(f: SpectralScalar, j: int, partition: DyadicPartition = _DEFAULT) -> SpectralScalar:
    return SpectralScalar(f.grid, partition.low_symbol(f.grid, j) * f.coeffs)


def _lr(values: np.ndarray, r: float) -> float:
    values = np.abs(np.asarray(values, dtype=float))
    if np.isinf(r):
        return float(values.max()) if values.size else 0.0
    return float(np.sum(values**r) ** (1.0 / r))


def _block_norms(f: SpectralScalar, p: float, partition: DyadicPartition) -> tuple[np.ndarray, np.ndarray]:
    jmax = partition.max_block(f.grid)
    js = np.arange(-1, jmax + 1)
    norms = np.array([lp_norm(dyadic_block(f, int(j), partition), p) for j in js])
    return js, norms


def besov_norm(f: SpectralScalar, spec: BesovSpec, partition: DyadicPartition = _DEFAULT) -> float:
    js, norms = _block_norms(f, spec.p, partition)
    return _lr(2.0 ** (js * spec.s) * norms, spec.r)


def _time_lq(values: np.ndarray, q: float, dt: float) -> float:
    values = np.abs(values)
    if np.isinf(q):
        return float(values.max())
    return float((dt * np.sum(values**q)) ** (1.0 / q))


def chemin_lerner_norm(
    series: Sequence[SpectralScalar],
    q: float,
    spec: BesovSpec,
    dt: float = 1.0,
    partition: DyadicPartition = _DEFAULT,
) -> float:
    """Time-Lebesgue norm taken per block, before the l^r sum over blocks.

    Time integrals use the rectangle rule with weight ``dt`` per sample, for
    which the Minkowski orderings against ``time_outside_norm`` hold exactly.
    """
    if len(series) == 0:
        raise DomainError("empty time series")
    table = np.array([_block_norms(f, spec.p, partition)[1] for f in series])  # (nt, nblocks)
    js = np.arange(-1, table.shape[1] - 1)
    per_block = np.array([_time_lq(table[:, i], q, dt) for i in range(table.shape[1])])
    return _lr(2.0 ** (js * spec.s) * per_block, spec.r)


def time_outside_norm(
    series: Sequence[SpectralScalar],
    q: float,
    spec: BesovSpec,
    dt: float = 1.0,
    partition: DyadicPartition = _DEFAULT,
) -> float:
    """Classical L^q_T(B^s_{p,r}) norm with the same time quadrature."""
    if len(series) == 0:
        raise DomainError("empty time series")
    vals = np.array([besov_norm(f, spec, partition) for f in series])
    return _time_lq(vals, q, dt)


def bony_decompose(
    u: SpectralScalar, v: SpectralScalar, partition: DyadicPartition = _DEFAULT
) -> tuple[SpectralScalar, SpectralScalar, SpectralScalar]:
    """Paraproducts T_u v, T_v u and remainder R(u, v) of the dealiased product."""
    if u.grid != v.grid:
        raise ConfigurationError("fields live on different grids")
    grid = u.grid
    mask = dealias_mask(grid)
    jmax = partition.max_block(grid)
    js = range(-1, jmax + 1)
    ub = {j: to_physical(partition.block_symbol(grid, j) * u.coeffs) for j in js}
    vb = {j: to_physical(partition.block_symbol(grid, j) * v.coeffs) for j in js}
    tuv = np.zeros(grid.shape)
    tvu = np.zeros(grid.shape)
    rem = np.zeros(grid.shape)
    for j in js:
        if j >= 1:
            su = to_physical(partition.low_symbol(grid, j - 1) * u.coeffs)
            sv = to_physical(partition.low_symbol(grid, j - 1) * v.coeffs)
            tuv += su * vb[j]
            tvu += sv * ub[j]
        for jp in (j - 1, j, j + 1):
            if jp in vb:
                rem += ub[j] * vb[jp]

    def spec(a):
        return SpectralScalar(grid, np.where(mask, to_spectral(a), 0.0))

    return spec(tuv), spec(tvu), spec(rem)


def _grad_power_norm(f: SpectralScalar, kappa: int, q: float) -> float:
    """L^q norm of the pointwise Frobenius norm of the kappa-th derivative tensor."""
    g = f.grid
    if kappa == 0:
        return lp_norm(f, q)
    acc = np.zeros(g.shape)
    for a in range(kappa + 1):
        b = kappa - a
        d = to_physical((1j * g.k1) ** a * (1j * g.k2) ** b * f.coeffs)
        acc += comb(kappa, a) * d**2
    return lp_norm(np.sqrt(acc), q, grid=g)


def bernstein_verify(
    f: SpectralScalar,
    j: int,
    p: float = 2.0,
    q: float | None = None,
    kappa: int = 1,
    shape: str = "annulus",
    partition: DyadicPartition = _DEFAULT,
    rtol: float = 1e-12,
) -> tuple[float | None, float]:
    """Bernstein ratios for a field spectrally localised at scale 2^j.

    Returns ``(lower, upper)``.  For the annulus the single ratio
    ||grad^kappa f||_p / (2^(j kappa) ||f||_p) is reported in both slots and
    must lie in [C^-(kappa+1), C^(kappa+1)]. For the ball only the upper ratio
    ||grad^kappa f||_q / (2^(j(kappa + 2(1/p - 1/q))) ||f||_p) exists.
    """
    q = p if q is None else q
    if not 1 <= p <= q:
        raise DomainError(f"Bernstein needs 1 <= p <= q, got p={p}, q={q}")
    lam = 2.0**j
    k = f.grid.kmag
    amp = np.abs(f.coeffs)
    scale = rtol * max(float(amp.max()), 1e-300)
    if shape == "annulus":
        outside = (k < partition.r1 * lam) | (k > 2 * partition.r2 * lam)
        if q != p:
            raise DomainError("annulus Bernstein inequality is stated for q = p")
    elif shape == "ball":
        outside = k > 2 * partition.r2 * lam
    else:
        raise ConfigurationError(f"unknown Bernstein shape {shape!r}")
    if np.any(amp[outside] > scale):
        raise PreconditionError(f"spectrum of f is not contained in the declared {shape} at j={j}")
    fp = lp_norm(f, p)
    if fp == 0:
        raise PreconditionError("zero field")
    inv = (1.0 / p) - (0.0 if np.isinf(q) else 1.0 / q)
    ratio = _grad_power_norm(f, kappa, q) / (lam ** (kappa + 2 * inv) * fp)
    if shape == "annulus":
        return ratio, ratio
    return None, ratio


# --- property battery ---------------------------------------------------------------


def _support_band(s: float, partition: DyadicPartition, jmax: int) -> tuple[float, float]:
    """A-priori bounds on ||f||_{B^s_{2,2}} / ||f||_{H^s} from the block supports.

    On block j the weight 2^(js) is compared with <k>^s over the support of
    the block; overlapping symbols satisfy 1/2 <= sum phi_j^2 <= 1.
    """
    lo, hi = math.inf, 0.0
    for j in range(-1, jmax + 1):
        if j == -1:
            kk = np.linspace(0.0, partition.r2, 200)
        else:
            kk = np.linspace(partition.r1 * 2.0**j, 2 * partition.r2 * 2.0**j, 200)
        w = 2.0 ** (j * s) / (1.0 + kk**2) ** (s / 2)
        lo, hi = min(lo, float(w.min())), max(hi, float(w.max()))
    return math.sqrt(0.5) * lo, hi


def _random_scalar(rng: np.random.Generator, grid: GridSpec, decay: float = 1.5) -> SpectralScalar:
    c = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    c = c / (1.0 + grid.kmag**2) ** (decay / 2)
    return SpectralScalar(grid, to_spectral(to_physical(c)))


@dataclass
class BatteryResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (threshold {self.threshold:g}) {self.detail}".rstrip()


def lp_property_battery(seed: int = 0, n: int = 64, pairs: int = 20, bernstein_n: int = 256) -> list[BatteryResult]:
    """Partition of unity, Bony identity, Besov/Sobolev equivalence and Bernstein scaling."""
    rng = np.random.default_rng(seed)
    part = _DEFAULT
    grid = GridSpec(n)
    out: list[BatteryResult] = []

    jmax = part.max_block(grid)
    total = sum(part.block_symbol(grid, j) for j in range(-1, jmax + 1))
    err = float(np.abs(total - 1.0).max())
    out.append(BatteryResult("partition of unity", err <= 1e-12, err, 1e-12))

    worst = 0.0
    for _ in range(pairs):
        u, v = _random_scalar(rng, grid), _random_scalar(rng, grid)
        t1, t2, rem = bony_decompose(u, v, part)
        prod = np.where(dealias_mask(grid), to_spectral(u.physical() * v.physical()), 0.0)
        scale = max(float(np.abs(prod).max()), 1e-300)
        worst = max(worst, float(np.abs(t1.coeffs + t2.coeffs + rem.coeffs - prod).max()) / scale)
    out.append(BatteryResult("Bony identity", worst <= 1e-11, worst, 1e-11, f"({pairs} random pairs)"))

    for s in (-1.0, 0.0, 1.0, 2.0):
        lo, hi = _support_band(s, part, jmax)
        ratios = []
        for _ in range(5):
            f = _random_scalar(rng, grid)
            ratios.append(besov_norm(f, BesovSpec(s)) / sobolev_norm(f, s))
        inside = lo <= min(ratios) and max(ratios) <= hi
        out.append(
            BatteryResult(
                f"B^{s:g}_22 / H^{s:g} ratio", inside, max(ratios), hi, f"range [{min(ratios):.3f}, {max(ratios):.3f}] in [{lo:.3f}, {hi:.3f}]"
            )
        )

    bgrid = GridSpec(bernstein_n)
    ratios = []
    for j in range(2, 6):
        f = dyadic_block(_random_scalar(rng, bgrid, decay=0.0), j, part)
        lower, _ = bernstein_verify(f, j, partition=part)
        ratios.append(lower)
    spread = max(ratios) / min(ratios)
    out.append(BatteryResult("Bernstein annulus j=2..5", spread <= 3.0, spread, 3.0, "(max/min of ratios)"))
    return out
