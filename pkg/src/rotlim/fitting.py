"""Log-log least-squares fits of measured quantities against epsilon."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .errors import RegressionError


@dataclass(frozen=True)
class OrderFit:
    slope: float
    r2: float
    band: float
    slope_target: float | None = None
    intercept: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OrderFit":
        return cls(**d)


def fit_order(pairs: Iterable[tuple[float, float]], slope_target: float | None = None) -> OrderFit:
    """Ordinary least squares of log(value) on log(eps).

    ``band`` is max/min of value / eps**slope_target (of value alone when no
    target is given). All-zero values short-circuit to ``slope = +inf``.
    """
    pairs = sorted(pairs)
    if len(pairs) < 4:
        raise RegressionError(f"need at least 4 (eps, value) pairs, got {len(pairs)}")
    eps = np.array([p[0] for p in pairs], dtype=float)
    val = np.array([p[1] for p in pairs], dtype=float)
    if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
        raise RegressionError("eps values must be positive and finite")
    if len(np.unique(eps)) < 4:
        raise RegressionError("degenerate abscissa: fewer than 4 distinct eps values")
    if np.all(val == 0):
        return OrderFit(slope=math.inf, r2=1.0, band=1.0, slope_target=slope_target)
    if np.any(val <= 0) or not np.all(np.isfinite(val)):
        raise RegressionError("values must be positive and finite for a log-log fit")
    x = np.log(eps)
    y = np.log(val)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    syy = np.sum((y - ym) ** 2)
    r2 = 1.0 if syy == 0 else float(1.0 - np.sum(resid**2) / syy)
    scaled = val / eps**slope_target if slope_target is not None else val
    band = float(scaled.max() / scaled.min())
    return OrderFit(slope=slope, r2=r2, band=band, slope_target=slope_target, intercept=intercept)
