"""Bias correction by extrapolating estimates linearly in 1/J to 1/J = 0."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import cem
from .dataset import Dataset
from .errors import ConfigError, NumericError, StratificationWarning
from .estimator import estimate
from .seeds import derive_seed
from .stratify import CEMMethod, Method, RFMethod, stratify


@dataclass(frozen=True)
class LineFit:
    intercept: float
    slope: float
    r2: float

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "slope": self.slope, "r2": self.r2}


def ols_intercept_at_zero(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Simple least-squares line of ``y`` on ``x``; the intercept is the value at x = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError("x and y must be 1-D and equally long")
    if np.unique(x).shape[0] < 2:
        raise NumericError("degenerate grid: need at least two distinct values of 1/J")
    xbar, ybar = x.mean(), y.mean()
    sxx = np.sum((x - xbar) ** 2)
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    intercept = float(ybar - slope * xbar)
    ss_tot = float(np.sum((y - ybar) ** 2))
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return LineFit(intercept, slope, r2)


@dataclass(frozen=True)
class GridPoint:
    J: int
    tau_hat: float
    var_hat: float
    method: str
    seed: int | None = None
    requested: int | None = None
    prune_report: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"J": self.J, "requested": self.requested, "tau_hat": self.tau_hat,
                "var_hat": self.var_hat, "method": self.method, "seed": self.seed,
                "prune_report": self.prune_report, "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class ExtrapolationResult:
    points: tuple[GridPoint, ...]
    tau_fit: LineFit
    var_fit: LineFit
    dropped: tuple[int, ...] = ()

    @property
    def tau_corrected(self) -> float:
        return self.tau_fit.intercept

    @property
    def var_corrected(self) -> float:
        return self.var_fit.intercept

    @property
    def var_clamped(self) -> bool:
        return self.var_fit.intercept < 0

    @property
    def se_corrected(self) -> float:
        return math.sqrt(max(self.var_fit.intercept, 0.0))

    def to_dict(self) -> dict:
        return {
            "tau_corrected": self.tau_corrected,
            "var_corrected": self.var_corrected,
            "se_corrected": self.se_corrected,
            "var_clamped": self.var_clamped,
            "tau_fit": self.tau_fit.to_dict(),
            "var_fit": self.var_fit.to_dict(),
            "points": [p.to_dict() for p in self.points],
            "dropped_requests": list(self.dropped),
            "realized_differs": [p.requested for p in self.points
                                 if p.requested is not None and p.requested != p.J],
        }


def extrapolate(points: Sequence[GridPoint], dropped: Sequence[int] = ()) -> ExtrapolationResult:
    """Fit estimate and variance against 1/J (realized J) and package the result."""
    if len(points) < 2:
        raise NumericError("degenerate grid: fewer than two usable grid points")
    inv = [1.0 / p.J for p in points]
    tau_fit = ols_intercept_at_zero(inv, [p.tau_hat for p in points])
    var_fit = ols_intercept_at_zero(inv, [p.var_hat for p in points])
    res = ExtrapolationResult(tuple(points), tau_fit, var_fit, tuple(dropped))
    if res.var_clamped:
        warnings.warn("extrapolated variance is negative; standard error clamped to 0",
                      StratificationWarning, stacklevel=2)
    return res


def grid_point(d: Dataset, method: Method, J: int, estimand: str, seed: int | None,
               weight_mode: str = "retained", variance_policy: str = "zero_with_warning",
               workers: int = 1, rf_cache: dict | None = None,
               att_conventional: bool = False) -> GridPoint:
    if isinstance(method, CEMMethod):
        pruned, report, bins = cem.cem_for_target(d, J, estimand, method.rules, method.max_bins)
        diag = {"bins": bins}
    else:
        st = stratify(d, method, estimand, k=J, seed=seed, workers=workers, rf_cache=rf_cache)
        pruned, report, diag = st.pruned, st.report, st.diagnostics
    est = estimate(d, pruned, estimand, weight_mode, variance_policy, prune_report=report,
                   att_conventional=att_conventional)
    return GridPoint(pruned.J, est.tau_hat, est.var_hat, method.name, seed, J,
                     report.to_dict(), diag)


def run_grid(d: Dataset, method: Method, grid: Sequence[int], estimand: str = "ACE",
             seed: int | None = None, shared_seed: bool = False, weight_mode: str = "retained",
             variance_policy: str = "zero_with_warning", workers: int = 1,
             att_conventional: bool = False) -> ExtrapolationResult:
    """Estimate at each requested stratum count, then extrapolate to 1/J = 0.

    Grid point ``g`` uses seed ``(seed, g)`` unless ``shared_seed``, in which
    case every point uses ``seed`` itself (and the random forest is grown once).
    Points with no estimable strata are dropped with a warning.
    """
    grid = [int(g) for g in grid]
    if len(set(grid)) < 2:
        raise NumericError("degenerate grid: need at least two distinct stratum counts")
    if any(g < 1 or g > d.n for g in grid):
        raise ConfigError(f"grid values must lie in 1..{d.n}")
    if not isinstance(method, CEMMethod) and seed is None:
        raise ConfigError(f"method {method.name} needs an explicit seed")
    rf_cache: dict | None = {} if isinstance(method, RFMethod) and shared_seed else None
    points, dropped = [], []
    for g, J in enumerate(grid):
        point_seed = None if seed is None else (seed if shared_seed else derive_seed(seed, g))
        try:
            points.append(grid_point(d, method, J, estimand, point_seed, weight_mode,
                                     variance_policy, workers, rf_cache, att_conventional))
        except NumericError as exc:
            warnings.warn(f"grid point J={J} dropped: {exc}", StratificationWarning, stacklevel=2)
            dropped.append(J)
    return extrapolate(points, dropped)
