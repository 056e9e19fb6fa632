# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled exact transport solver (transportation simplex).

Mirrors _transport_fallback.solve_transport step for step: northwest-corner
initialization and Bland pivoting, so the two backends return identical
optima and follow the same pivot sequence.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"

DEF TOL = 1e-11


def solve_transport(supply, demand, cost):
    """Minimal total cost moving `supply` onto `demand` under `cost`."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sup = np.ascontiguousarray(supply, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dem = np.ascontiguousarray(demand, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t n = c.shape[1]
    if sup.shape[0] != m or dem.shape[0] != n:
        raise ValueError("supply/demand shapes do not match cost")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains non-finite entries")
    if np.any(sup <= 0.0) or np.any(dem <= 0.0):
        raise ValueError("supply and demand entries must be positive")
    if m == 1:
        return float(np.dot(dem, c[0]) * (sup[0] / dem.sum()))
    if n == 1:
        return float(np.dot(sup, c[:, 0]) * (dem[0] / sup.sum()))

    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = sup.copy()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = dem * (sup.sum() / dem.sum())
    cdef cnp.ndarray[cnp.float64_t, ndim=2] flows = np.zeros((m, n))
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] basis = np.zeros((m, n), dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.empty(n)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] u_set = np.zeros(m, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] v_set = np.zeros(n, dtype=np.uint8)
    # bipartite scratch: rows 0..m-1, cols m..m+n-1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] parent = np.empty(m + n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] seen = np.empty(m + n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] queue = np.empty(m + n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cyc_i = np.empty(m + n + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cyc_j = np.empty(m + n + 1, dtype=np.int64)

    cdef Py_ssize_t i = 0, j = 0, ei, ej, k, node, head, tail, target
    cdef Py_ssize_t pivot, max_pivots = 100 * m * n + 1000
    cdef Py_ssize_t cyc_len, ci, cj, li, lj, changed
    cdef double q, red, theta, f, total

    # northwest-corner initial basis: exactly m + n - 1 cells
    while True:
        q = a[i] if a[i] < b[j] else b[j]
        flows[i, j] = q
        basis[i, j] = 1
        a[i] = a[i] - q
        if a[i] < 0.0:
            a[i] = 0.0
        b[j] = b[j] - q
        if b[j] < 0.0:
            b[j] = 0.0
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

    for pivot in range(max_pivots):
        # duals by sweeping the basis tree from u[0] = 0
        for k in range(m):
            u_set[k] = 0
        for k in range(n):
            v_set[k] = 0
        u[0] = 0.0
        u_set[0] = 1
        changed = 1
        while changed:
            changed = 0
            for i in range(m):
                for j in range(n):
                    if basis[i, j]:
                        if u_set[i] and not v_set[j]:
                            v[j] = c[i, j] - u[i]
                            v_set[j] = 1
                            changed = 1
                        elif v_set[j] and not u_set[i]:
                            u[i] = c[i, j] - v[j]
                            u_set[i] = 1
                            changed = 1
        for i in range(m):
            if not u_set[i]:
                raise RuntimeError("basis is not a spanning tree")
        for j in range(n):
            if not v_set[j]:
                raise RuntimeError("basis is not a spanning tree")

        # Bland: first non-basic cell (row-major) with negative reduced cost
        ei = -1
        ej = -1
        for i in range(m):
            for j in range(n):
                if not basis[i, j]:
                    red = c[i, j] - u[i] - v[j]
                    if red < -TOL:
                        ei = i
                        ej = j
                        break
            if ei >= 0:
                break
        if ei < 0:
            break  # optimal

        # unique tree path from row ei to col ej
        for k in range(m + n):
            seen[k] = 0
            parent[k] = -1
        seen[ei] = 1
        queue[0] = ei
        head = 0
        tail = 1
        target = m + ej
        while head < tail:
            node = queue[head]
            head += 1
            if node == target:
                break
            if node < m:
                for j in range(n):
                    if basis[node, j] and not seen[m + j]:
                        seen[m + j] = 1
                        parent[m + j] = node
                        queue[tail] = m + j
                        tail += 1
            else:
                j = node - m
                for i in range(m):
                    if basis[i, j] and not seen[i]:
                        seen[i] = 1
                        parent[i] = node
                        queue[tail] = i
                        tail += 1
        if not seen[target]:
            raise RuntimeError("entering cell closes no cycle; basis disconnected")

        # cycle cells: entering first, then path cells from col ej back to row ei
        cyc_i[0] = ei
        cyc_j[0] = ej
        cyc_len = 1
        node = target
        while node != ei:
            k = parent[node]
            if node < m:
                cyc_i[cyc_len] = node
                cyc_j[cyc_len] = k - m
            else:
                cyc_i[cyc_len] = k
                cyc_j[cyc_len] = node - m
            cyc_len += 1
            node = k

        # odd positions lose flow; theta = min, leaving = first minimizer
        theta = -1.0
        for k in range(1, cyc_len, 2):
            f = flows[cyc_i[k], cyc_j[k]]
            if theta < 0.0 or f < theta:
                theta = f
        li = -1
        lj = -1
        for k in range(1, cyc_len, 2):
            ci = cyc_i[k]
            cj = cyc_j[k]
            if flows[ci, cj] <= theta + 1e-15:
                if li < 0 or ci < li or (ci == li and cj < lj):
                    li = ci
                    lj = cj
        for k in range(cyc_len):
            ci = cyc_i[k]
            cj = cyc_j[k]
            if k % 2 == 0:
                flows[ci, cj] += theta
            else:
                f = flows[ci, cj] - theta
                flows[ci, cj] = f if f > 0.0 else 0.0
        basis[li, lj] = 0
        basis[ei, ej] = 1
    else:
        raise RuntimeError("transportation simplex failed to terminate")

    total = 0.0
    for i in range(m):
        for j in range(n):
            if basis[i, j]:
                total += flows[i, j] * c[i, j]
    return total
