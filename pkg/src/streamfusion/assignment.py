"""Maximum-weight bipartite matching (Kuhn-Munkres with potentials)."""
from __future__ import annotations

import numpy as np


def min_cost_assignment(cost: np.ndarray) -> np.ndarray:
    """Column index assigned to each row of a square cost matrix (O(n^3))."""
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    rows = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        rows[p[j] - 1] = j - 1
    return rows


def max_weight_matching(weights: np.ndarray) -> list[tuple[int, int]]:
    """Pairs (row, col) of a maximum-weight partial matching.

    Only strictly positive entries count as edges; a row or column may stay
    unmatched.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2:
        raise ValueError("weights must be a matrix")
    r, c = w.shape
    if r == 0 or c == 0:
        return []
    n = max(r, c)
    square = np.zeros((n, n))
    square[:r, :c] = np.where(w > 0, w, 0.0)
    cols = min_cost_assignment(-square)
    return [(i, int(cols[i])) for i in range(r) if cols[i] < c and w[i, cols[i]] > 0]


def matching_value(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(sum(w[i, j] for i, j in max_weight_matching(w)))
