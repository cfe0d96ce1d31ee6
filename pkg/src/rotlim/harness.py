"""Epsilon sweeps of the compressible solver against the limit dynamics.

Every sweep member starts from the same profiles (r0, u0), with
rho0 = 1 + eps r0 and u0 unchanged, and reports low-order observables whose
behaviour as eps -> 0 is the numerical surrogate for the weak convergence
statements (negative Sobolev norms, residuals, trajectory distances).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, RegressionError, ResourceError
from .fitting import fit_order
from .limit import LimitParams, limit0_residual, limit_initial_data, simulate_limit
from .nsc import FlowParams, ill_prepared_data, matched_state, simulate
from .spectral import GridSpec, SpectralScalar, SpectralVec2, curl2d, lp_norm, sobolev_norm

log = logging.getLogger(__name__)

__all__ = [
    "SweepConfig",
    "MemberResult",
    "SweepReport",
    "run_convergence_suite",
    "emit_report",
    "load_report",
    "parse_config_file",
    "default_seed",
]

SEED_ENV = "ROTLIM_SEED"


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class SweepConfig:
    eps_list: tuple[float, ...]
    alpha: float = 0.0
    beta: float = 1.0
    mu: float = 0.05
    gamma: float = 2.0
    a: float = 1.0
    seed: int = 0
    n: int = 64
    T: float = 1.0
    dt: float | None = None  # None: from the advective CFL number below
    cfl: float = 0.2
    frame_dt: float = 0.01
    t_skip: float = 0.1
    amp: float = 0.5
    kmax: float = 4.0
    s_neg: float = 3.0
    delta_tilde: float = 0.1
    jobs: int = 1
    max_n: int = 128
    max_T: float = 2.0

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if len(eps) < 4 or len(set(eps)) < 4:
            raise ConfigurationError("a sweep needs at least 4 distinct eps values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("eps_list must be strictly decreasing")
        if self.n > self.max_n or self.T > self.max_T:
            raise ConfigurationError(f"work bound exceeded: need n <= {self.max_n} and T <= {self.max_T}")
        if not 0 <= self.t_skip < self.T:
            raise ConfigurationError("t_skip must lie in [0, T)")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        ratio = self.frame_dt / self.dt if self.dt else 1.0
        if self.dt is not None and abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError("frame_dt must be an integer multiple of dt")
        nf = self.T / self.frame_dt
        if abs(nf - round(nf)) > 1e-9:
            raise ConfigurationError("T must be an integer multiple of frame_dt")
        FlowParams(eps[0], self.alpha, self.beta, self.mu, self.gamma, self.a)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eps_list"] = list(self.eps_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown sweep config keys: {sorted(unknown)}")
        d = dict(d)
        d["eps_list"] = tuple(d["eps_list"])
        return cls(**d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("jobs")  # scheduling does not change results
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _data_hash(r0: SpectralScalar, u0: SpectralVec2) -> str:
    h = hashlib.sha256()
    for c in (r0.coeffs, u0[0].coeffs, u0[1].coeffs):
        h.update(np.ascontiguousarray(c).tobytes())
    return h.hexdigest()[:16]


def _resolve_dt(cfg: SweepConfig, u0: SpectralVec2) -> float:
    """Common step for all members: the advective CFL rule, snapped to divide frame_dt."""
    if cfg.dt is not None:
        return cfg.dt
    grid = u0.grid
    umax = float(np.sqrt((u0.physical() ** 2).sum(axis=0)).max())
    dt = cfg.frame_dt if umax == 0 else min(cfg.frame_dt, cfg.cfl * grid.length / (grid.n * umax))
    k = int(math.ceil(cfg.frame_dt / dt - 1e-12))
    return cfg.frame_dt / k


@dataclass
class MemberResult:
    eps: float
    status: str = "ok"
    div_l2t: float = math.nan
    residual_l2: float = math.nan
    sigma_linf: float = math.nan
    distance: float = math.nan
    energy_excess: float = math.nan
    data_hash: str = ""
    residual_series: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


METRICS = ("div_l2t", "residual_l2", "sigma_linf", "distance")


@dataclass
class SweepReport:
    config: dict
    config_hash: str
    seed: int
    dt: float
    members: list[MemberResult]
    fits: dict[str, dict | None]
    bands: dict[str, float]
    checks: dict[str, bool]
    reference_beta_is_one: bool

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def metric(self, name: str) -> list[float]:
        return [getattr(m, name) for m in self.members]

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        d = dict(d)
        d["members"] = [MemberResult(**m) for m in d["members"]]
        return cls(**d)


# --- one member ---------------------------------------------------------------------


def _velocity_hat(state) -> SpectralVec2:
    return SpectralVec2.from_physical(state.grid, state.velocity())


def _run_member(
    cfg: SweepConfig,
    eps: float,
    r0: SpectralScalar,
    u0: SpectralVec2,
    dt: float,
    reference: list | None,
    budget_s: float | None,
) -> MemberResult:
    out = MemberResult(eps=eps, data_hash=_data_hash(r0, u0))
    params = FlowParams(eps, cfg.alpha, cfg.beta, cfg.mu, cfg.gamma, cfg.a)
    stride = int(round(cfg.frame_dt / dt))
    try:
        deadline = None if budget_s is None else time.monotonic() + budget_s
        res = simulate(matched_state(r0, u0, eps), params, cfg.T, dt, stride=stride, deadline=deadline)
    except (NumericError, ResourceError) as exc:
        out.status = f"failed: {type(exc).__name__}: {exc}"
        return out
    frames = res.states
    times = res.times
    us = [_velocity_hat(s) for s in frames]
    omega = [curl2d(u) for u in us]
    sigma = [s.sigma(eps) for s in frames]
    R = limit0_residual(omega, sigma, cfg.frame_dt, cfg.mu, cfg.s_neg, times=times)
    inner = times[1:-1]
    sel = inner >= cfg.t_skip - 1e-12
    out.div_l2t = res.div_l2t
    out.residual_series = [float(x) for x in R]
    out.residual_l2 = float(math.sqrt(cfg.frame_dt * np.sum(R[sel] ** 2)))
    out.sigma_linf = max(sobolev_norm(s, -(cfg.s_neg + cfg.delta_tilde)) for s in sigma)
    out.energy_excess = res.energy_excess()
    if reference is not None:
        dist = 0.0
        for i, t in enumerate(times):
            if t < cfg.t_skip - 1e-12:
                continue
            ref = reference[i]
            du = us[i] - ref.velocity()
            d_u = math.hypot(lp_norm(du[0], 2), lp_norm(du[1], 2))
            dist = max(dist, d_u + sobolev_norm(sigma[i] - ref.sigma, -cfg.s_neg))
        out.distance = dist
    return out


def _member_job(args):
    return _run_member(*args)


# --- suite --------------------------------------------------------------------------


def _fit(eps: list[float], vals: list[float]) -> dict | None:
    pairs = [(e, v) for e, v in zip(eps, vals) if np.isfinite(v)]
    try:
        return fit_order(pairs).to_dict()
    except RegressionError as exc:
        log.info("fit skipped: %s", exc)
        return None


def _band(vals: list[float]) -> float:
    v = [x for x in vals if np.isfinite(x)]
    if not v:
        return math.nan
    if max(v) == 0:
        return 1.0
    if min(v) <= 0:
        return math.inf
    return max(v) / min(v)


def run_convergence_suite(cfg: SweepConfig) -> SweepReport:
    """Run every member, then fit orders and evaluate the sweep checks.

    Failed members (vacuum, CFL, budget) are kept with a failure marker and
    left out of the fits. A member whose runtime exceeds ten times the median
    of the members completed before it is aborted.
    """
    grid = GridSpec(cfg.n)
    r0, u0 = ill_prepared_data(cfg.seed, cfg.eps_list[0], cfg.amp, grid, cfg.kmax)
    dt = _resolve_dt(cfg, u0)
    stride = int(round(cfg.frame_dt / dt))
    lim = LimitParams.from_beta(cfg.mu, cfg.beta)
    reference = simulate_limit(limit_initial_data(r0, u0), lim, cfg.T, dt, stride)
    runtimes: list[float] = []
    members: list[MemberResult] = []

    def budget() -> float | None:
        return 10.0 * statistics.median(runtimes) if runtimes else None

    eps_list = list(cfg.eps_list)
    if cfg.jobs == 1:
        for eps in eps_list:
            t0 = time.monotonic()
            members.append(_run_member(cfg, eps, r0, u0, dt, reference, budget()))
            runtimes.append(time.monotonic() - t0)
            log.info("eps=%g done in %.2fs (%s)", eps, runtimes[-1], members[-1].status)
    else:
        t0 = time.monotonic()
        members.append(_run_member(cfg, eps_list[0], r0, u0, dt, reference, None))
        runtimes.append(time.monotonic() - t0)
        span = budget()
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            jobs = [(cfg, e, r0, u0, dt, reference, span) for e in eps_list[1:]]
            members.extend(pool.map(_member_job, jobs))
    members.sort(key=lambda m: -m.eps)
    hashes = {m.data_hash for m in members}
    if len(hashes) != 1:
        raise ConfigurationError("matched-data discipline violated: members saw different initial profiles")

    eps_ok = [m.eps for m in members]
    fits = {name: _fit(eps_ok, [getattr(m, name) if m.ok else math.nan for m in members]) for name in METRICS}
    bands = {name: _band([getattr(m, name) for m in members if m.ok]) for name in METRICS}
    dist = [m.distance for m in members if m.ok]
    res_fit = fits["residual_l2"]
    all_zero = all(getattr(m, k) == 0 for m in members for k in METRICS if m.ok)
    checks = {
        "all_members_ok": all(m.ok for m in members),
        "div_band": bands["div_l2t"] <= 3.0,
        "sigma_band": bands["sigma_linf"] <= 3.0,
        "residual_slope": all_zero or (res_fit is not None and res_fit["slope"] > 0.2 and res_fit["r2"] >= 0.8),
        "distance_monotone": all_zero
        or (len(dist) >= 4 and all(b < a for a, b in zip(dist, dist[1:]))),
    }
    return SweepReport(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        dt=dt,
        members=members,
        fits=fits,
        bands=bands,
        checks=checks,
        reference_beta_is_one=lim.beta_is_one,
    )


# --- output -------------------------------------------------------------------------

CSV_HEADER = ("config_hash", "seed", "eps", "metric", "value", "status")


def _csv_text(report: SweepReport | None, config_hash: str = "", seed: int = 0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    if report is not None:
        for name in METRICS:
            for m in sorted(report.members, key=lambda m: -m.eps):
                w.writerow([report.config_hash, report.seed, repr(m.eps), name, repr(getattr(m, name)), m.status])
    return buf.getvalue()


def emit_report(report: SweepReport | None, path: str | Path, fmt: str | None = None) -> Path:
    """Write ``report`` as CSV (one row per eps per metric) or nested JSON.

    ``None`` stands for an empty sweep and yields a header-only CSV.
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "csv":
        text = _csv_text(report)
    elif fmt == "json":
        if report is None:
            raise ConfigurationError("an empty sweep has no JSON form")
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path: str | Path) -> SweepReport:
    try:
        return SweepReport.from_dict(json.loads(Path(path).read_text()))
    except OSError as exc:
        raise OSError(f"cannot read report {path}: {exc}") from exc


# --- config files -------------------------------------------------------------------


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat UTF-8 ``key = value`` file; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out

