"""Pure-Python exact transport solver (transportation simplex).

Twin of the compiled kernel in _transport_core.pyx: same initialization
(northwest corner), same Bland pivoting rule, so both backends follow the
same pivot sequence and return identical optima. Used when the compiled
extension is unavailable or explicitly disabled.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_TOL = 1e-11


def solve_transport(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray) -> float:
    """Minimal total cost moving `supply` onto `demand` under `cost`.

    supply (m,) and demand (n,) are positive and sum to the same total
    (demand is rescaled to match exactly); cost is (m, n) and finite.
    """
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = cost.shape
    if supply.shape != (m,) or demand.shape != (n,):
        raise ValueError("supply/demand shapes do not match cost")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    if np.any(supply <= 0.0) or np.any(demand <= 0.0):
        raise ValueError("supply and demand entries must be positive")
    if m == 1:
        return float(np.dot(demand, cost[0]) * (supply[0] / demand.sum()))
    if n == 1:
        return float(np.dot(supply, cost[:, 0]) * (demand[0] / supply.sum()))

    a = supply.copy()
    b = demand * (supply.sum() / demand.sum())
    flows = np.zeros((m, n))
    basis = np.zeros((m, n), dtype=bool)

    # northwest-corner initial basis: exactly m + n - 1 cells
    i = j = 0
    while True:
        q = min(a[i], b[j])
        flows[i, j] = q
        basis[i, j] = True
        a[i] = max(a[i] - q, 0.0)
        b[j] = max(b[j] - q, 0.0)
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1:
            i += 1
        elif i == m - 1:
            j += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1

    u = np.empty(m)
    v = np.empty(n)
    max_pivots = 100 * m * n + 1000
    for _ in range(max_pivots):
        _compute_duals(cost, basis, u, v)
        reduced = cost - u[:, None] - v[None, :]
        candidates = (~basis) & (reduced < -_TOL)
        if not candidates.any():
            break
        flat = int(np.flatnonzero(candidates.reshape(-1))[0])  # Bland: first cell
        ei, ej = divmod(flat, n)
        cycle = _find_cycle(basis, ei, ej, m, n)
        # odd positions lose theta; leaving cell = lexicographically first minimizer
        losers = [cycle[k] for k in range(1, len(cycle), 2)]
        theta = min(flows[ci, cj] for ci, cj in losers)
        leave = min((ci, cj) for ci, cj in losers if flows[ci, cj] <= theta + 1e-15)
        for k, (ci, cj) in enumerate(cycle):
            if k % 2 == 0:
                flows[ci, cj] += theta
            else:
                flows[ci, cj] = max(flows[ci, cj] - theta, 0.0)
        basis[leave] = False
        basis[ei, ej] = True
    else:
        raise RuntimeError("transportation simplex failed to terminate")

    # sequential row-major accumulation, bitwise identical to the compiled twin
    total = 0.0
    for ci, cj in zip(*np.nonzero(basis)):
        total += flows[ci, cj] * cost[ci, cj]
    return float(total)


def _compute_duals(cost: np.ndarray, basis: np.ndarray, u: np.ndarray, v: np.ndarray) -> None:
    m, n = cost.shape
    u_set = np.zeros(m, dtype=bool)
    v_set = np.zeros(n, dtype=bool)
    u[0] = 0.0
    u_set[0] = True
    pending = [(0, True)]  # (index, is_row)
    while pending:
        k, is_row = pending.pop()
        if is_row:
            for j in range(n):
                if basis[k, j] and not v_set[j]:
                    v[j] = cost[k, j] - u[k]
                    v_set[j] = True
                    pending.append((j, False))
        else:
            for i in range(m):
                if basis[i, k] and not u_set[i]:
                    u[i] = cost[i, k] - v[k]
                    u_set[i] = True
                    pending.append((i, True))
    if not (u_set.all() and v_set.all()):
        raise RuntimeError("basis is not a spanning tree")


def _find_cycle(basis: np.ndarray, ei: int, ej: int, m: int, n: int):
    """Cells of the unique cycle closed by the entering cell (ei, ej).

    Returned in cycle order starting at the entering cell, so even
    positions gain flow and odd positions lose it.
    """
    # bipartite vertices: rows 0..m-1, cols m..m+n-1; find tree path row ei -> col ej
    total = m + n
    parent = [-1] * total
    seen = [False] * total
    seen[ei] = True
    queue = [ei]
    head = 0
    target = m + ej
    while head < len(queue):
        node = queue[head]
        head += 1
        if node == target:
            break
        if node < m:
            for j in range(n):
                if basis[node, j] and not seen[m + j]:
                    seen[m + j] = True
                    parent[m + j] = node
                    queue.append(m + j)
        else:
            j = node - m
            for i in range(m):
                if basis[i, j] and not seen[i]:
                    seen[i] = True
                    parent[i] = node
                    queue.append(i)
    if not seen[target]:
        raise RuntimeError("entering cell closes no cycle; basis disconnected")
    path_nodes = [target]
    while path_nodes[-1] != ei:
        path_nodes.append(parent[path_nodes[-1]])
    # consecutive node pairs are basic cells along the tree path ej -> ei
    cells = []
    for a_node, b_node in zip(path_nodes, path_nodes[1:]):
        if a_node < m:
            cells.append((a_node, b_node - m))
        else:
            cells.append((b_node, a_node - m))
    return [(ei, ej)] + cells
