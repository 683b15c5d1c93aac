from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ConfigError
from .forest import PROXIMITY_MODES, Forest


@dataclass(frozen=True, eq=False)
class ProximityMatrix:
    values: np.ndarray
    mode: str

    def distance(self) -> np.ndarray:
        d = 1.0 - self.values
        np.fill_diagonal(d, 0.0)
        return d


@numba.njit(cache=True, nogil=True)
def _accumulate(leaves, mask, counts):
    # counts[i, j] += 1 for every tree where rows i, j are eligible and share a leaf
    n = leaves.shape[1]
    order_buf = np.empty(n, np.int64)
    for b in range(leaves.shape[0]):
        m = 0
        for i in range(n):
            if mask[b, i]:
                order_buf[m] = i
                m += 1
        rows = order_buf[:m]
        keys = leaves[b, rows]
        order = np.argsort(keys, kind="mergesort")
        g0 = 0
        while g0 < m:
            g1 = g0 + 1
            while g1 < m and keys[order[g1]] == keys[order[g0]]:
                g1 += 1
            for u in range(g0, g1):
                i = rows[order[u]]
                for v in range(g0, g1):
                    counts[i, rows[order[v]]] += 1
            g0 = g1


def _chunks(n: int, k: int) -> list[range]:
    k = max(1, min(k, n))
    step = -(-n // k)
    return [range(s, min(s + step, n)) for s in range(0, n, step)]


def proximity(forest: Forest, x, mode: str | None = None, workers: int = 1) -> ProximityMatrix:
    """Fraction of trees in which two rows of ``x`` land in the same leaf.

    ``all_pairs`` counts every tree. ``oob`` counts only trees where both rows
    were out of bag, which requires ``x`` to be the leading rows of the
    training matrix (real rows come first after synthesis); pairs that are
    never jointly out of bag get proximity 0.

    Counts are integers reduced across workers, so the matrix is identical
    for any worker count.
    """
    mode = mode or forest.config.proximity_mode
    if mode not in PROXIMITY_MODES:
        raise ConfigError(f"unknown proximity mode {mode!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    leaves = forest.apply(x, workers=workers)
    B = leaves.shape[0]
    if mode == "oob":
        if n > forest.n_train:
            raise ConfigError("oob proximity needs x to be leading training rows")
        mask = forest.oob_matrix()[:, :n]
    else:
        mask = np.ones((B, n), np.bool_)
    mask = np.ascontiguousarray(mask)

    def work(r: range) -> np.ndarray:
        counts = np.zeros((n, n), np.int64)
        _accumulate(leaves[r.start:r.stop], mask[r.start:r.stop], counts)
        return counts

    parts = _chunks(B, workers)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(work, parts))
    else:
        results = [work(r) for r in parts]
    same = results[0]
    for c in results[1:]:
        same += c

    if mode == "all_pairs":
        return ProximityMatrix(same / B, mode)
    m = mask.astype(np.float64)
    # integer-valued float products: exact regardless of BLAS threading
    denom = m.T @ m
    prox = np.divide(same, denom, out=np.zeros((n, n)), where=denom > 0)
    return ProximityMatrix(prox, mode)
