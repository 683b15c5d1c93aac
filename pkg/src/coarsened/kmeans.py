"""K-means (Lloyd) quantization of the confounder matrix."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import StrataAssignment, compact_strata
from .errors import ConfigError
from .seeds import derive_seed

INITS = ("kmeanspp", "random_points")


@dataclass(frozen=True)
class KMeansConfig:
    K: int
    seed: int
    init: str = "kmeanspp"
    max_iter: int = 100
    tol: float = 1e-8
    restarts: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.max_iter < 1 or self.restarts < 1:
            raise ConfigError("max_iter and restarts must be at least 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass(frozen=True, eq=False)
class KMeansFit:
    centers: np.ndarray
    labels: np.ndarray
    objective: float
    iterations: int
    converged: bool
    history: tuple[float, ...]
    restart: int

    @property
    def assignment(self) -> StrataAssignment:
        return compact_strata(self.labels)

    def strata(self, t) -> StrataAssignment:
        return compact_strata(self.labels, t)


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # direct differences rather than the |x|^2 - 2xc + |c|^2 expansion: exact enough
    # that the per-iteration objective never rises by rounding
    out = np.empty((x.shape[0], centers.shape[0]))
    for k in range(centers.shape[0]):
        diff = x - centers[k]
        out[:, k] = np.einsum("ij,ij->i", diff, diff)
    return out


def quantization_error(x, centers) -> float:
    """Mean squared distance from each point to its nearest center."""
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if centers.ndim == 1:
        centers = centers[:, None]
    if x.shape[1] != centers.shape[1]:
        raise ConfigError("x and centers differ in dimension")
    return float(sq_distances(x, centers).min(axis=1).mean())


def _init_centers(x: np.ndarray, K: int, init: str, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    if init == "random_points":
        return x[rng.choice(n, size=K, replace=False)].copy()
    idx = [int(rng.integers(n))]
    d2 = sq_distances(x, x[idx[0]][None, :])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, sq_distances(x, x[nxt][None, :])[:, 0])
    return x[idx].copy()


def _update_centers(x: np.ndarray, labels: np.ndarray, mind2: np.ndarray, K: int) -> np.ndarray:
    p = x.shape[1]
    counts = np.bincount(labels, minlength=K)
    centers = np.empty((K, p))
    for j in range(p):
        centers[:, j] = np.bincount(labels, weights=x[:, j], minlength=K)
    empty = np.flatnonzero(counts == 0)
    nonempty = counts > 0
    centers[nonempty] /= counts[nonempty, None]
    if empty.size:
        # re-seed each empty cluster at the point currently farthest from its center
        far = np.argsort(-mind2, kind="stable")
        for k, i in zip(empty, far):
            centers[k] = x[i]
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    d2 = sq_distances(x, centers)
    labels = d2.argmin(axis=1)  # argmin keeps the lowest center index on ties
    mind2 = d2[np.arange(x.shape[0]), labels]
    obj = float(mind2.sum())
    history = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        centers = _update_centers(x, labels, mind2, centers.shape[0])
        d2 = sq_distances(x, centers)
        new_labels = d2.argmin(axis=1)
        mind2 = d2[np.arange(x.shape[0]), new_labels]
        new_obj = float(mind2.sum())
        history.append(new_obj)
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        done = unchanged or (obj - new_obj) <= tol * obj
        obj = new_obj
        if done:
            converged = True
            break
    return centers, labels, obj, it, converged, history


def fit_kmeans(x, cfg: KMeansConfig) -> KMeansFit:
    """Best-of-restarts Lloyd k-means, deterministic given ``cfg.seed``.

    Restart ``r`` draws its initial centers from a generator seeded by
    ``(cfg.seed, r)``; ties in the final objective keep the earliest restart.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if cfg.K > n:
        raise ConfigError(f"K={cfg.K} exceeds the number of observations n={n}")
    best = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng(derive_seed(cfg.seed, r))
        init = _init_centers(x, cfg.K, cfg.init, rng)
        centers, labels, obj, it, conv, hist = _lloyd(x, init, cfg.max_iter, cfg.tol)
        if best is None or obj < best.objective:
            best = KMeansFit(centers, labels, obj, it, conv, tuple(hist), r)
    if not best.converged:
        warnings.warn(f"k-means did not converge in {cfg.max_iter} iterations", RuntimeWarning,
                      stacklevel=2)
    return best
