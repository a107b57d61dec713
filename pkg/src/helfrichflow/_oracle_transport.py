"""Brute-force transportation oracle used by the validation suite.

Deliberately naive and fully independent of the LP/Sinkhorn solvers: the
optimum is found by enumerating every basic feasible solution of the
transportation polytope (spanning trees of the complete bipartite graph).
Exponential; intended for instances with <= 4 atoms per side.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_transport(a, b, cost) -> float:
    n, m = cost.shape
    best = math.inf
    edges = list(itertools.product(range(n), range(m)))
    for subset in itertools.combinations(edges, n + m - 1):
        plan = _solve_tree(subset, a, b, n, m)
        if plan is None:
            continue
        if (plan < -1e-12).any():
            continue
        value = sum(plan[k] * cost[i, j] for k, (i, j) in enumerate(subset))
        best = min(best, value)
    return best


def _solve_tree(subset, a, b, n, m):
    """Flow on a candidate spanning tree by leaf elimination; None when the
    subset is not a tree (cycle or missing node).

    Rows 0..n-1 and columns n..n+m-1 carry requirements a_i and b_j; a leaf's
    last edge must carry exactly its remaining requirement (possibly negative,
    which the caller rejects as infeasible)."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for k, (i, j) in enumerate(subset):
        adj.setdefault(i, []).append((n + j, k))
        adj.setdefault(n + j, []).append((i, k))
    if len(adj) != n + m:
        return None
    requirement = np.concatenate([np.asarray(a, dtype=float), np.asarray(b, dtype=float)])
    degree = {node: len(neigh) for node, neigh in adj.items()}
    flow = np.zeros(len(subset))
    used = [False] * len(subset)
    leaves = [node for node, d in degree.items() if d == 1]
    eliminated: set[int] = set()
    for _ in range(len(subset)):
        node = None
        while leaves:
            candidate = leaves.pop()
            if candidate not in eliminated:
                node = candidate
                break
        if node is None:
            return None  # cycle remains
        edge = next(((other, k) for other, k in adj[node] if not used[k]), None)
        if edge is None:
            return None
        other, k = edge
        used[k] = True
        flow[k] = requirement[node]
        requirement[other] -= requirement[node]
        requirement[node] = 0.0
        eliminated.add(node)
        degree[other] -= 1
        if degree[other] == 1 and other not in eliminated:
            leaves.append(other)
    return flow
