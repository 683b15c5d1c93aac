"""Ward-D2 agglomerative clustering on a precomputed distance matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..dataset import StrataAssignment, compact_strata
from ..errors import ConfigError


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Merge sequence in scipy layout: rows (id_a, id_b, height, size).

    Leaves are ids 0..n-1 and the cluster formed at step s gets id n+s.
    """

    merges: np.ndarray
    n: int

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]


@numba.njit(cache=True)
def _row_nn(D2, active, i):
    n = D2.shape[0]
    best = np.inf
    arg = -1
    for j in range(n):
        if j != i and active[j] and D2[i, j] < best:
            best = D2[i, j]
            arg = j
    return arg, best


@numba.njit(cache=True)
def _ward(D2):
    n = D2.shape[0]
    active = np.ones(n, np.bool_)
    size = np.ones(n, np.int64)
    cid = np.arange(n)
    nn = np.empty(n, np.int64)
    nnd = np.empty(n)
    for i in range(n):
        nn[i], nnd[i] = _row_nn(D2, active, i)
    out = np.empty((n - 1, 4))
    for step in range(n - 1):
        # smallest distance; ties resolve to the lexicographically smallest pair
        a = -1
        best = np.inf
        for i in range(n):
            if active[i] and nnd[i] < best:
                best = nnd[i]
                a = i
        b = nn[a]
        if b < a:
            a, b = b, a
        dab = D2[a, b]
        na = size[a]
        nb = size[b]
        ia = cid[a]
        ib = cid[b]
        out[step, 0] = min(ia, ib)
        out[step, 1] = max(ia, ib)
        out[step, 2] = np.sqrt(dab)
        out[step, 3] = na + nb
        active[b] = False
        for k in range(n):
            if active[k] and k != a:
                nk = size[k]
                v = ((na + nk) * D2[k, a] + (nb + nk) * D2[k, b] - nk * dab) / (na + nb + nk)
                D2[k, a] = v
                D2[a, k] = v
        size[a] = na + nb
        cid[a] = n + step
        nn[a], nnd[a] = _row_nn(D2, active, a)
        for k in range(n):
            if not active[k] or k == a:
                continue
            if nn[k] == a or nn[k] == b:
                nn[k], nnd[k] = _row_nn(D2, active, k)
            elif D2[k, a] < nnd[k] or (D2[k, a] == nnd[k] and a < nn[k]):
                nn[k] = a
                nnd[k] = D2[k, a]
    return out


def ward_linkage(d) -> Dendrogram:
    """Ward-D2 linkage: Lance-Williams updates on squared distances, heights reported unsquared."""
    d = np.asarray(d, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ConfigError("distance matrix must be square")
    if not np.array_equal(d, d.T):
        raise ConfigError("distance matrix must be symmetric")
    if np.any(np.diag(d) != 0):
        raise ConfigError("distance matrix must have a zero diagonal")
    n = d.shape[0]
    if n < 2:
        return Dendrogram(np.empty((0, 4)), n)
    return Dendrogram(_ward(np.ascontiguousarray(d * d)), n)


def cut_dendrogram(tree: Dendrogram, K: int) -> np.ndarray:
    """Cluster label per leaf after the first n-K merges, numbered by first appearance."""
    n = tree.n
    if not 1 <= K <= n:
        raise ConfigError(f"K={K} outside 1..{n}")
    parent = np.arange(2 * n - 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for s in range(n - K):
        a, b = int(tree.merges[s, 0]), int(tree.merges[s, 1])
        parent[find(a)] = n + s
        parent[find(b)] = n + s
    roots = np.array([find(i) for i in range(n)])
    return compact_strata(roots).labels


def ward_cut(d, K: int, t=None) -> StrataAssignment:
    d = np.asarray(d, dtype=float)
    if not 1 <= K <= d.shape[0]:
        raise ConfigError(f"K={K} outside 1..{d.shape[0]}")
    return compact_strata(cut_dendrogram(ward_linkage(d), K), t)
