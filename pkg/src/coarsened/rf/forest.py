"""Unsupervised random forest: synthetic contrast class and a CART ensemble.

Trees are grown by a numba kernel driven by a small xorshift generator, so a
tree depends only on (data, config, tree seed) and never on which thread
grew it.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ConfigError, StratificationWarning
from ..seeds import derive_seed

MAX_CATEGORY_LEVELS = 64
PROXIMITY_MODES = ("oob", "all_pairs")


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    mtry: int | None = None
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0
    proximity_mode: str = "oob"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be at least 1")
        if self.proximity_mode not in PROXIMITY_MODES:
            raise ConfigError(f"unknown proximity mode {self.proximity_mode!r}")

    def resolved_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(p))
        if not 1 <= m <= p:
            raise ConfigError(f"mtry={m} outside 1..{p}")
        return m


def synthesize_second_class(x, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``x`` on n synthetic rows drawn column-wise from its marginals.

    Returns the 2n x p matrix (real rows first) and labels (real=1, synthetic=0).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    rng = np.random.default_rng(seed)
    synth = np.empty_like(x)
    for j in range(p):
        synth[:, j] = x[rng.integers(0, n, size=n), j]
    labels = np.concatenate([np.ones(n, np.int8), np.zeros(n, np.int8)])
    return np.vstack([x, synth]), labels


# --- numba kernels ---------------------------------------------------------

@numba.njit(cache=True)
def _next(state):
    # xorshift64*
    s = state[0]
    s ^= s >> np.uint64(12)
    s ^= s << np.uint64(25)
    s ^= s >> np.uint64(27)
    state[0] = s
    return s * np.uint64(2685821657736338717)


@numba.njit(cache=True)
def _randbelow(state, m):
    return np.int64((_next(state) >> np.uint64(11)) % np.uint64(m))


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, is_cat, mtry, min_leaf, max_depth, seed):
    m, p = X.shape
    state = np.empty(1, np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    for _ in range(4):
        _next(state)

    inbag = np.zeros(m, np.int32)
    work = np.empty(m, np.int64)
    for i in range(m):
        r = _randbelow(state, m)
        work[i] = r
        inbag[r] += 1

    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    catmask = np.zeros(cap, np.uint64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)

    stack_node = np.empty(cap, np.int64)
    stack_start = np.empty(cap, np.int64)
    stack_end = np.empty(cap, np.int64)
    stack_depth = np.empty(cap, np.int64)
    top = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    feats = np.arange(p)
    vals = np.empty(m)
    labs = np.empty(m, np.int64)
    lvl_n = np.zeros(MAX_CATEGORY_LEVELS, np.int64)
    lvl_c = np.zeros(MAX_CATEGORY_LEVELS, np.int64)
    lvl_rank = np.empty(MAX_CATEGORY_LEVELS)

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        cnt = end - start
        c1 = 0
        for k in range(start, end):
            c1 += y[work[k]]
        value[node] = c1 / cnt
        if c1 == 0 or c1 == cnt or cnt < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        best_mask = np.uint64(0)
        # Fisher-Yates over features; look at mtry of them, more only if none splits
        for a in range(p):
            b = a + _randbelow(state, p - a)
            tmp = feats[a]
            feats[a] = feats[b]
            feats[b] = tmp
            if a >= mtry and best_f >= 0:
                break
            f = feats[a]
            for k in range(cnt):
                vals[k] = X[work[start + k], f]
                labs[k] = y[work[start + k]]
            if is_cat[f]:
                for lv in range(MAX_CATEGORY_LEVELS):
                    lvl_n[lv] = 0
                    lvl_c[lv] = 0
                for k in range(cnt):
                    lv = np.int64(vals[k])
                    lvl_n[lv] += 1
                    lvl_c[lv] += labs[k]
                n_present = 0
                for lv in range(MAX_CATEGORY_LEVELS):
                    if lvl_n[lv] > 0:
                        n_present += 1
                        lvl_rank[lv] = lvl_c[lv] / lvl_n[lv]
                    else:
                        lvl_rank[lv] = np.inf
                if n_present < 2:
                    continue
                # levels ordered by class-1 share (ties by code): best prefix split
                order = np.argsort(lvl_rank, kind="mergesort")
                nl = 0
                cl = 0
                mask = np.uint64(0)
                for q in range(n_present - 1):
                    lv = order[q]
                    nl += lvl_n[lv]
                    cl += lvl_c[lv]
                    mask |= np.uint64(1) << np.uint64(lv)
                    nr = cnt - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    cr = c1 - cl
                    score = (nl - cl * cl / nl - (nl - cl) * (nl - cl) / nl
                             + nr - cr * cr / nr - (nr - cr) * (nr - cr) / nr)
                    if score < best_score:
                        best_score = score
                        best_f = f
                        best_mask = mask
            else:
                order = np.argsort(vals[:cnt], kind="mergesort")
                if vals[order[0]] == vals[order[cnt - 1]]:
                    continue
                nl = 0
                cl = 0
                for q in range(cnt - 1):
                    nl += 1
                    cl += labs[order[q]]
                    v0 = vals[order[q]]
                    v1 = vals[order[q + 1]]
                    if v0 == v1:
                        continue
                    nr = cnt - nl
                    if nl < min_leaf or nr < min_leaf:
                        continue
                    cr = c1 - cl
                    # n * weighted child Gini impurity
                    score = (nl - cl * cl / nl - (nl - cl) * (nl - cl) / nl
                             + nr - cr * cr / nr - (nr - cr) * (nr - cr) / nr)
                    if score < best_score:
                        best_score = score
                        best_f = f
                        thr = 0.5 * (v0 + v1)
                        if thr >= v1:
                            thr = v0
                        best_thr = thr
        if best_f < 0:
            continue

        # partition work[start:end] in place: left block first
        i = start
        j = end - 1
        while i <= j:
            xv = X[work[i], best_f]
            if is_cat[best_f]:
                go_left = ((best_mask >> np.uint64(np.int64(xv))) & np.uint64(1)) == np.uint64(1)
            else:
                go_left = xv <= best_thr
            if go_left:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        catmask[node] = best_mask
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack_node[top] = rnode
        stack_start[top] = i
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_start[top] = start
        stack_end[top] = i
        stack_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), catmask[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy(), inbag)


@numba.njit(cache=True, nogil=True)
def _apply_tree(X, is_cat, feature, threshold, catmask, left, right):
    out = np.empty(X.shape[0], np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            xv = X[r, f]
            if is_cat[f]:
                go_left = ((catmask[node] >> np.uint64(np.int64(xv))) & np.uint64(1)) == np.uint64(1)
            else:
                go_left = xv <= threshold[node]
            node = left[node] if go_left else right[node]
        out[r] = node
    return out


# --- python surface --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    catmask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    inbag: np.ndarray
    seed: int

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def oob(self) -> np.ndarray:
        return self.inbag == 0


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    is_cat: np.ndarray
    config: ForestConfig
    n_train: int
    y_train: np.ndarray

    def apply(self, x, workers: int = 1) -> np.ndarray:
        """Terminal node index of every row in every tree (n_trees x n)."""
        x = np.ascontiguousarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]

        def one(tr: Tree):
            return _apply_tree(x, self.is_cat, tr.feature, tr.threshold, tr.catmask, tr.left, tr.right)

        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                rows = list(ex.map(one, self.trees))
        else:
            rows = [one(tr) for tr in self.trees]
        return np.vstack(rows)

    def oob_matrix(self) -> np.ndarray:
        return np.vstack([tr.oob for tr in self.trees])

    def oob_error(self, x) -> float:
        """Majority-vote misclassification over rows with at least one out-of-bag tree."""
        leaves = self.apply(x)
        oob = self.oob_matrix()
        votes1 = np.zeros(self.n_train)
        votes = np.zeros(self.n_train)
        for b, tr in enumerate(self.trees):
            pred = (tr.value[leaves[b]] > 0.5).astype(float)
            votes1 += pred * oob[b]
            votes += oob[b]
        seen = votes > 0
        pred = votes1[seen] * 2 > votes[seen]
        return float(np.mean(pred != (self.y_train[seen] == 1)))


def fit_forest(x, labels, cfg: ForestConfig, categorical=None, workers: int = 1) -> Forest:
    """Grow ``cfg.n_trees`` Gini CART trees on bootstrap samples of (x, labels).

    Tree ``b`` is seeded by ``(cfg.seed, b)``. ``categorical`` flags columns
    holding integer level codes (< 64 levels); these split on level subsets
    formed by ordering levels by their class-1 share.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.ascontiguousarray(labels, dtype=np.int64)
    m, p = x.shape
    if y.shape != (m,):
        raise ConfigError("labels must have one entry per row")
    if np.unique(y).size < 2:
        raise ConfigError("fit_forest needs two classes")
    is_cat = np.zeros(p, np.bool_) if categorical is None else np.asarray(categorical, np.bool_)
    for j in np.flatnonzero(is_cat):
        col = x[:, j]
        if col.min() < 0 or col.max() >= MAX_CATEGORY_LEVELS or not np.all(col == np.round(col)):
            warnings.warn(f"column {j}: categorical codes outside 0..63, splitting it as ordered",
                          StratificationWarning, stacklevel=2)
            is_cat[j] = False
    if (x == x[0]).all():
        warnings.warn("all rows identical; trees reduce to single leaves", StratificationWarning,
                      stacklevel=2)
    mtry = cfg.resolved_mtry(p)
    max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)

    def grow(b: int) -> Tree:
        seed = derive_seed(cfg.seed, b)
        arrays = _grow_tree(x, y, is_cat, mtry, cfg.min_leaf, max_depth, np.uint64(seed))
        return Tree(*arrays, seed=seed)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            trees = list(ex.map(grow, range(cfg.n_trees)))
    else:
        trees = [grow(b) for b in range(cfg.n_trees)]
    return Forest(tuple(trees), is_cat, cfg, m, y)
