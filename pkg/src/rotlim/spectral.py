"""Periodic 2-D torus discretisation and Fourier-multiplier operators.

Fields are stored as complex Fourier coefficients ``c[k2, k1]`` in standard
FFT order, normalised so that the physical field is

    f(x) = sum_k c_k exp(i k.x),

hence ``||f||_{L^2}^2 = length^2 * sum_k |c_k|^2``.  Axis 0 of every array is
the x2 (``y``) direction and axis 1 is x1 (``x``).

Derivative multipliers zero the Nyquist wavenumber (odd derivatives of the
Nyquist mode are not representable by a real field); norms use the true
wavenumber magnitude with the Nyquist index mapped to ``+n/2``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateError, DomainError

__all__ = [
    "GridSpec",
    "SpectralScalar",
    "SpectralVec2",
    "transform",
    "inverse_transform",
    "grad",
    "div",
    "laplacian",
    "perp_grad",
    "curl2d",
    "inv_laplacian",
    "leray_project",
    "sobolev_norm",
    "homogeneous_sobolev_norm",
    "lp_norm",
    "gagliardo_nirenberg_check",
    "dealias",
    "product",
    "write_snapshot",
    "read_snapshot",
    "read_snapshots",
]


@dataclass(frozen=True)
class GridSpec:
    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ConfigurationError(f"grid size must be an even integer >= 8, got {self.n!r}")
        if not self.length > 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length!r}")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def cell_area(self) -> float:
        return self.dx**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def k1(self) -> np.ndarray:
        """Derivative wavenumber along x1 (Nyquist zeroed), broadcast to (n, n)."""
        return _wavenumbers(self.n, self.length)[0]

    @property
    def k2(self) -> np.ndarray:
        return _wavenumbers(self.n, self.length)[1]

    @property
    def ksq(self) -> np.ndarray:
        """|k|^2 built from derivative wavenumbers; symbol of -laplacian."""
        return _wavenumbers(self.n, self.length)[2]

    @property
    def kmag(self) -> np.ndarray:
        """True |k| with integer indices in {-n/2+1, ..., n/2}, for norms."""
        return _wavenumbers(self.n, self.length)[3]

    @property
    def kmax_index(self) -> np.ndarray:
        """max(|k1|, |k2|) in integer units, used by the 2/3 rule."""
        return _wavenumbers(self.n, self.length)[4]

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinates (x1, x2) as (n, n) arrays."""
        x = np.arange(self.n) * self.dx
        x1, x2 = np.meshgrid(x, x, indexing="xy")
        return x1, x2


@lru_cache(maxsize=32)
def _wavenumbers(n: int, length: float):
    idx = np.fft.fftfreq(n, d=1.0 / n)  # 0..n/2-1, -n/2..-1
    signed = idx.copy()
    signed[n // 2] = n // 2  # Nyquist -> +n/2
    deriv = idx.copy()
    deriv[n // 2] = 0.0
    scale = 2.0 * np.pi / length
    k1 = np.broadcast_to(deriv[None, :] * scale, (n, n)).copy()
    k2 = np.broadcast_to(deriv[:, None] * scale, (n, n)).copy()
    ksq = k1**2 + k2**2
    kmag = np.hypot(signed[None, :], signed[:, None]) * scale
    kmax = np.maximum(np.abs(signed)[None, :], np.abs(signed)[:, None])
    for a in (k1, k2, ksq, kmag, kmax):
        a.flags.writeable = False
    return k1, k2, ksq, kmag, kmax


@dataclass(frozen=True, eq=False)
class SpectralScalar:
    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ConfigurationError(
                f"coefficient array shape {c.shape} does not match grid {self.grid.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralScalar":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: GridSpec, samples: np.ndarray) -> "SpectralScalar":
        return inverse_transform(samples, grid)

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    def physical(self) -> np.ndarray:
        return transform(self)

    def hermitian_defect(self) -> float:
        """max |c_{-k} - conj(c_k)|; zero for real fields."""
        c = self.coeffs
        flipped = np.roll(np.flip(c, axis=(0, 1)), shift=(1, 1), axis=(0, 1))
        return float(np.max(np.abs(flipped - np.conj(c)))) if c.size else 0.0

    def _check(self, other: "SpectralScalar") -> None:
        if other.grid != self.grid:
            raise ConfigurationError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, SpectralScalar):
            self._check(other)
            return SpectralScalar(self.grid, self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralScalar):
            self._check(other)
            return SpectralScalar(self.grid, self.coeffs - other.coeffs)
        return NotImplemented

    def __neg__(self):
        return SpectralScalar(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralScalar(self.grid, self.coeffs * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if np.isscalar(scalar):
            return SpectralScalar(self.grid, self.coeffs / scalar)
        return NotImplemented


@dataclass(frozen=True, eq=False)
class SpectralVec2:
    comps: tuple[SpectralScalar, SpectralScalar]

    def __post_init__(self) -> None:
        a, b = self.comps
        if a.grid != b.grid:
            raise ConfigurationError("vector components live on different grids")
        object.__setattr__(self, "comps", (a, b))

    @classmethod
    def of(cls, a: SpectralScalar, b: SpectralScalar) -> "SpectralVec2":
        return cls((a, b))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralVec2":
        return cls((SpectralScalar.zeros(grid), SpectralScalar.zeros(grid)))

    @classmethod
    def from_physical(cls, grid: GridSpec, samples: np.ndarray) -> "SpectralVec2":
        return cls((inverse_transform(samples[0], grid), inverse_transform(samples[1], grid)))

    @property
    def grid(self) -> GridSpec:
        return self.comps[0].grid

    def __getitem__(self, i: int) -> SpectralScalar:
        return self.comps[i]

    def __add__(self, other):
        if isinstance(other, SpectralVec2):
            return SpectralVec2((self[0] + other[0], self[1] + other[1]))
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralVec2):
            return SpectralVec2((self[0] - other[0], self[1] - other[1]))
        return NotImplemented

    def __neg__(self):
        return SpectralVec2((-self[0], -self[1]))

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralVec2((self[0] * scalar, self[1] * scalar))
        return NotImplemented

    __rmul__ = __mul__

    def physical(self) -> np.ndarray:
        return np.stack([transform(self[0]), transform(self[1])])


# --- transforms ----------------------------------------------------------------


def to_physical(coeffs: np.ndarray) -> np.ndarray:
    """Raw-array inverse FFT; returns real samples."""
    return np.fft.ifft2(coeffs, norm="forward").real


def to_spectral(samples: np.ndarray) -> np.ndarray:
    return np.fft.fft2(samples, norm="forward")


def transform(f: SpectralScalar) -> np.ndarray:
    return to_physical(f.coeffs)


def inverse_transform(samples: np.ndarray, grid: GridSpec) -> SpectralScalar:
    samples = np.asarray(samples)
    if samples.shape != grid.shape:
        raise ConfigurationError(f"sample array shape {samples.shape} does not match grid {grid.shape}")
    return SpectralScalar(grid, to_spectral(samples.real))


# --- differential operators ------------------------------------------------------


def grad(f: SpectralScalar) -> SpectralVec2:
    g = f.grid
    return SpectralVec2(
        (SpectralScalar(g, 1j * g.k1 * f.coeffs), SpectralScalar(g, 1j * g.k2 * f.coeffs))
    )


def div(v: SpectralVec2) -> SpectralScalar:
    g = v.grid
    return SpectralScalar(g, 1j * (g.k1 * v[0].coeffs + g.k2 * v[1].coeffs))


def laplacian(f: SpectralScalar) -> SpectralScalar:
    return SpectralScalar(f.grid, -f.grid.ksq * f.coeffs)


def perp_grad(f: SpectralScalar) -> SpectralVec2:
    """(-d2 f, d1 f)."""
    g = f.grid
    return SpectralVec2(
        (SpectralScalar(g, -1j * g.k2 * f.coeffs), SpectralScalar(g, 1j * g.k1 * f.coeffs))
    )


def curl2d(v: SpectralVec2) -> SpectralScalar:
    """d1 v2 - d2 v1."""
    g = v.grid
    return SpectralScalar(g, 1j * (g.k1 * v[1].coeffs - g.k2 * v[0].coeffs))


def _inv_ksq(grid: GridSpec) -> np.ndarray:
    return _inv_ksq_cached(grid.n, grid.length)


@lru_cache(maxsize=32)
def _inv_ksq_cached(n: int, length: float) -> np.ndarray:
    ksq = _wavenumbers(n, length)[2]
    out = np.zeros_like(ksq)
    nz = ksq > 0
    out[nz] = 1.0 / ksq[nz]
    out.flags.writeable = False
    return out


def inv_laplacian(f: SpectralScalar) -> SpectralScalar:
    """Zero-mean solution of lap(u) = f - mean(f).

    Modes where the derivative symbol vanishes (mean, Nyquist lines) are set
    to zero.
    """
    return SpectralScalar(f.grid, -_inv_ksq(f.grid) * f.coeffs)


def leray_project(v: SpectralVec2) -> tuple[SpectralVec2, SpectralScalar]:
    """Helmholtz split v = P v + grad(phi) + mean(v).

    Returns the divergence-free part (which also carries the mean of ``v``)
    and the zero-mean potential ``phi`` with coefficient -i k.v / |k|^2.
    """
    g = v.grid
    kdotv = g.k1 * v[0].coeffs + g.k2 * v[1].coeffs
    phi = -1j * kdotv * _inv_ksq(g)
    q1 = 1j * g.k1 * phi
    q2 = 1j * g.k2 * phi
    dfree = SpectralVec2(
        (SpectralScalar(g, v[0].coeffs - q1), SpectralScalar(g, v[1].coeffs - q2))
    )
    return dfree, SpectralScalar(g, phi)


# --- norms ----------------------------------------------------------------------


def sobolev_norm(f: SpectralScalar, s: float) -> float:
    g = f.grid
    w = (1.0 + g.kmag**2) ** s
    return float(np.sqrt(g.length**2 * np.sum(w * np.abs(f.coeffs) ** 2)))


def homogeneous_sobolev_norm(f: SpectralScalar, s: float) -> float:
    g = f.grid
    if s < 0 and abs(f.coeffs[0, 0]) > 1e-14 * max(1.0, float(np.max(np.abs(f.coeffs)))):
        raise DomainError("homogeneous Sobolev norm with s < 0 needs a zero-mean field")
    k = g.kmag
    w = np.zeros_like(k)
    nz = k > 0
    w[nz] = k[nz] ** (2 * s)
    return float(np.sqrt(g.length**2 * np.sum(w * np.abs(f.coeffs) ** 2)))


def lp_norm(f: SpectralScalar | np.ndarray, p: float, grid: GridSpec | None = None) -> float:
    """L^p norm by periodic trapezoid quadrature (exact for p=2 on the grid)."""
    if isinstance(f, SpectralScalar):
        grid, samples = f.grid, transform(f)
    else:
        if grid is None:
            raise ConfigurationError("a grid is required for physical-space samples")
        samples = np.asarray(f)
    a = np.abs(samples)
    if np.isinf(p):
        return float(a.max())
    if p < 1:
        raise DomainError(f"L^p needs p >= 1, got {p}")
    return float((grid.cell_area * np.sum(a**p)) ** (1.0 / p))


def gradient_l2(f: SpectralScalar) -> float:
    g = f.grid
    return float(np.sqrt(g.length**2 * np.sum(g.ksq * np.abs(f.coeffs) ** 2)))


def gagliardo_nirenberg_check(f: SpectralScalar, p: float) -> float:
    """Ratio ||f||_p / (||f||_2^(1-lam) ||grad f||_2^lam), lam = (p-2)/p in 2-D."""
    if not 2 <= p < np.inf:
        raise DomainError(f"Gagliardo-Nirenberg check needs 2 <= p < inf, got {p}")
    lam = (p - 2.0) / p
    l2 = lp_norm(f, 2)
    gl2 = gradient_l2(f)
    denom = l2 ** (1 - lam) * gl2**lam
    if gl2 == 0.0 or denom == 0.0:
        raise DegenerateError("constant field: Gagliardo-Nirenberg denominator vanishes")
    return lp_norm(f, p) / denom


# --- dealiasing and products ----------------------------------------------------


def dealias_mask(grid: GridSpec) -> np.ndarray:
    return _mask_cached(grid.n)


@lru_cache(maxsize=32)
def _mask_cached(n: int) -> np.ndarray:
    kmax = _wavenumbers(n, 2 * np.pi)[4]
    m = kmax <= n / 3.0
    m.flags.writeable = False
    return m


def dealias(f: SpectralScalar) -> SpectralScalar:
    return SpectralScalar(f.grid, np.where(dealias_mask(f.grid), f.coeffs, 0.0))


def product(a: SpectralScalar, b: SpectralScalar) -> SpectralScalar:
    """Pseudo-spectral product a*b followed by the 2/3 rule."""
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")
    prod = to_spectral(transform(a) * transform(b))
    return SpectralScalar(a.grid, np.where(dealias_mask(a.grid), prod, 0.0))


# --- snapshot files -------------------------------------------------------------

_MAGIC = b"SPF1"


def _write_record(fh: BinaryIO, fields: Sequence[SpectralScalar]) -> None:
    if not fields:
        raise ConfigurationError("a snapshot needs at least one component")
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise ConfigurationError("snapshot components live on different grids")
    fh.write(_MAGIC)
    fh.write(struct.pack("<II", grid.n, len(fields)))
    for f in fields:
        pairs = np.empty(f.coeffs.shape + (2,), dtype="<f8")
        pairs[..., 0] = f.coeffs.real
        pairs[..., 1] = f.coeffs.imag
        fh.write(pairs.tobytes(order="C"))


def write_snapshot(
    path: str | Path, frames: Iterable[Sequence[SpectralScalar]] | Sequence[SpectralScalar]
) -> None:
    """Write one or more SPF1 records back to back.

    ``frames`` is either a single list of components or an iterable of such
    lists (a trajectory).
    """
    frames = list(frames)
    if frames and isinstance(frames[0], SpectralScalar):
        frames = [frames]
    path = Path(path)
    try:
        with path.open("wb") as fh:
            for comps in frames:
                _write_record(fh, comps)
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshots(path: str | Path, length: float = 2.0 * np.pi) -> list[list[SpectralScalar]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read snapshot {path}: {exc}") from exc
    frames = []
    pos = 0
    while pos < len(data):
        if data[pos : pos + 4] != _MAGIC:
            raise ConfigurationError(f"{path}: bad magic at byte {pos}")
        n, ncomp = struct.unpack_from("<II", data, pos + 4)
        pos += 12
        grid = GridSpec(n, length)
        comps = []
        nbytes = n * n * 16
        for _ in range(ncomp):
            if pos + nbytes > len(data):
                raise ConfigurationError(f"{path}: truncated record")
            pairs = np.frombuffer(data, dtype="<f8", count=n * n * 2, offset=pos).reshape(n, n, 2)
            comps.append(SpectralScalar(grid, pairs[..., 0] + 1j * pairs[..., 1]))
            pos += nbytes
        frames.append(comps)
    return frames


def read_snapshot(path: str | Path, length: float = 2.0 * np.pi) -> list[SpectralScalar]:
    frames = read_snapshots(path, length)
    if not frames:
        raise ConfigurationError(f"{path}: empty snapshot file")
    return frames[0]
