"""Method configurations and the shared stratify -> prune step."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Union

from . import cem
from .cem import CoarsenRule, PruneReport
from .dataset import Dataset, StrataAssignment, standardize
from .errors import ConfigError, StratificationWarning
from .kmeans import KMeansConfig, fit_kmeans, quantization_error
from .rf import ForestConfig, RFClustering, rf_cluster


@dataclass(frozen=True)
class CEMMethod:
    rules: Mapping[str, CoarsenRule] = field(default_factory=dict)
    default_bins: int | None = None
    max_bins: int = 200
    name = "cem"

    def describe(self) -> dict:
        return {
            "method": "cem",
            "rules": {k: {"rule": type(v).__name__, **asdict(v)} for k, v in self.rules.items()},
            "default_bins": self.default_bins,
        }


@dataclass(frozen=True)
class KMeansMethod:
    restarts: int = 10
    init: str = "kmeanspp"
    max_iter: int = 100
    tol: float = 1e-8
    standardize: bool = False
    name = "kmeans"

    def describe(self) -> dict:
        return {"method": "kmeans", **asdict(self)}


@dataclass(frozen=True)
class RFMethod:
    n_trees: int = 1000
    mtry: int | None = None
    min_leaf: int = 1
    max_depth: int | None = None
    proximity_mode: str = "oob"
    standardize: bool = False
    name = "rf"

    def describe(self) -> dict:
        return {"method": "rf", **asdict(self)}

    def forest_config(self, seed: int) -> ForestConfig:
        return ForestConfig(self.n_trees, self.mtry, self.min_leaf, self.max_depth, seed,
                            self.proximity_mode)


Method = Union[CEMMethod, KMeansMethod, RFMethod]


@dataclass(frozen=True, eq=False)
class Stratification:
    raw: StrataAssignment
    pruned: StrataAssignment
    report: PruneReport
    requested_k: int | None
    seed: int | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.pruned.J


def _numeric_x(d: Dataset, method: Union[KMeansMethod, RFMethod]):
    return standardize(d, method.standardize).x if method.standardize else d.x


def raw_strata(d: Dataset, method: Method, k: int | None = None, seed: int | None = None,
               workers: int = 1, rf_cache: dict | None = None) -> tuple[StrataAssignment, dict]:
    """Unpruned strata (with arm counts) and method diagnostics."""
    if isinstance(method, CEMMethod):
        s = cem.cem_strata(d, method.rules, method.default_bins)
        return s, {"J_raw": s.J}
    if k is None:
        raise ConfigError(f"method {method.name} needs a stratum count k")
    if seed is None:
        raise ConfigError(f"method {method.name} needs an explicit seed")
    if isinstance(method, KMeansMethod):
        if d.categorical_mask.any():
            warnings.warn("k-means treats categorical level codes as numbers", StratificationWarning,
                          stacklevel=2)
        x = _numeric_x(d, method)
        cfg = KMeansConfig(k, seed, method.init, method.max_iter, method.tol, method.restarts)
        fit = fit_kmeans(x, cfg)
        s = fit.strata(d.t)
        return s, {"J_raw": s.J, "objective": fit.objective,
                   "quantization_error": quantization_error(x, fit.centers),
                   "iterations": fit.iterations, "converged": fit.converged,
                   "best_restart": fit.restart}
    if isinstance(method, RFMethod):
        cache_key = seed
        clus = rf_cache.get(cache_key) if rf_cache is not None else None
        if clus is None:
            clus = rf_cluster(_numeric_x(d, method), method.forest_config(seed),
                              categorical=d.categorical_mask, workers=workers)
            if rf_cache is not None:
                rf_cache[cache_key] = clus
        s = clus.strata(k, d.t)
        return s, {"J_raw": s.J, "synth_seed": clus.synth_seed, "forest_seed": clus.forest_seed}
    raise ConfigError(f"unknown method {method!r}")


def stratify(d: Dataset, method: Method, estimand: str = "ACE", k: int | None = None,
             seed: int | None = None, prune_policy: str = "drop", workers: int = 1,
             rf_cache: dict | None = None) -> Stratification:
    s, diag = raw_strata(d, method, k, seed, workers, rf_cache)
    pruned, report = cem.prune(s, d.t, estimand, prune_policy)
    return Stratification(s, pruned, report, k, seed, diag)


def rf_clustering_for(d: Dataset, method: RFMethod, seed: int, workers: int = 1) -> RFClustering:
    return rf_cluster(_numeric_x(d, method), method.forest_config(seed),
                      categorical=d.categorical_mask, workers=workers)
