"""Independent reference computations used as test oracles.

Each oracle is written from the printed formulas with plain loops and shares
no code with the package.
"""

from __future__ import annotations

import itertools
import math


def naive_ace(y, t, labels):
    """Loop over strata: tau = sum (n_j/n)(m1 - m0); var = sum (n_j/n)^2 (s1/n1 + s0/n0)."""
    strata = sorted(set(labels))
    n = len(y)
    tau = 0.0
    var = 0.0
    for j in strata:
        y1 = [y[i] for i in range(n) if labels[i] == j and t[i] == 1]
        y0 = [y[i] for i in range(n) if labels[i] == j and t[i] == 0]
        nj = len(y1) + len(y0)
        m1 = sum(y1) / len(y1)
        m0 = sum(y0) / len(y0)
        tau += nj / n * (m1 - m0)
        v1 = sum((v - m1) ** 2 for v in y1) / (len(y1) - 1) if len(y1) > 1 else 0.0
        v0 = sum((v - m0) ** 2 for v in y0) / (len(y0) - 1) if len(y0) > 1 else 0.0
        var += (nj / n) ** 2 * (v1 / len(y1) + v0 / len(y0))
    return tau, var


def naive_acet(y, t, labels):
    strata = sorted(set(labels))
    n = len(y)
    n1 = sum(1 for v in t if v == 1)
    n0 = n - n1
    tau = 0.0
    var = 0.0
    for j in strata:
        y1 = [y[i] for i in range(n) if labels[i] == j and t[i] == 1]
        y0 = [y[i] for i in range(n) if labels[i] == j and t[i] == 0]
        nj = len(y1) + len(y0)
        w = (len(y1) / n1) / (len(y0) / n0)
        m1 = sum(y1) / len(y1)
        m0 = sum(y0) / len(y0)
        tau += nj / n * (m1 - w * m0)
        v1 = sum((v - m1) ** 2 for v in y1) / (len(y1) - 1) if len(y1) > 1 else 0.0
        v0 = sum((v - m0) ** 2 for v in y0) / (len(y0) - 1) if len(y0) > 1 else 0.0
        var += (nj / n) ** 2 * (v1 / len(y1) + w * w * v0 / len(y0))
    return tau, var


def brute_force_kmeans(points, K):
    """Minimum within-cluster SSE over every assignment of 1-D/p-D points to K labels."""
    n = len(points)
    best = (math.inf, None)
    for assign in itertools.product(range(K), repeat=n):
        if len(set(assign)) != K:
            continue
        sse = 0.0
        for k in range(K):
            members = [points[i] for i in range(n) if assign[i] == k]
            dim = len(members[0])
            centre = [sum(m[d] for m in members) / len(members) for d in range(dim)]
            sse += sum(sum((m[d] - centre[d]) ** 2 for d in range(dim)) for m in members)
        if sse < best[0] - 1e-12:
            best = (sse, assign)
    return best


def ols_line(x, y):
    n = len(x)
    xb = sum(x) / n
    yb = sum(y) / n
    sxy = sum((a - xb) * (b - yb) for a, b in zip(x, y))
    sxx = sum((a - xb) ** 2 for a in x)
    slope = sxy / sxx
    return yb - slope * xb, slope


def co_membership(labels):
    """Set of frozensets of row indices sharing a label; label values do not matter."""
    groups: dict = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def rand_index(a, b):
    n = len(a)
    agree = 0
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            agree += (a[i] == a[j]) == (b[i] == b[j])
            total += 1
    return agree / total
