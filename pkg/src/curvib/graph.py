"""Undirected simple graphs, degree/mass matrices, BFS distances, synthetic
stochastic-block-model data, and edge-noise injection.

Graphs are immutable after construction: edges are canonical (i < j, sorted
lexicographically) and neighbor lists are sorted, so every downstream report
is reproducible byte-for-byte.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _streams


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph over nodes 0..node_count-1."""

    node_count: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...]

    def degree(self, u: int) -> int:
        return len(self.neighbors[u])

    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, i: int, j: int) -> bool:
        if i > j:
            i, j = j, i
        return (i, j) in self.edge_set()

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    def directed_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Both orientations of every edge.

        Returns (src, dst, edge_id) arrays of length 2E where edge_id maps
        each directed arc back to its canonical undirected edge.
        """
        if not self.edges:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z
        e = np.asarray(self.edges, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        eid = np.concatenate([np.arange(len(e)), np.arange(len(e))])
        return src, dst, eid


def build_graph(edge_pairs, node_count: int) -> Graph:
    """Canonicalize an edge list: drop self-loops, dedupe, symmetrize.

    Isolated nodes are permitted. Raises on out-of-range indices or
    node_count < 1.
    """
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    canon = set()
    for i, j in edge_pairs:
        i, j = int(i), int(j)
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise ValueError(f"edge ({i}, {j}) out of range for {node_count} nodes")
        if i == j:
            continue
        canon.add((i, j) if i < j else (j, i))
    edges = tuple(sorted(canon))
    adj: list[list[int]] = [[] for _ in range(node_count)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    neighbors = tuple(tuple(sorted(nb)) for nb in adj)
    return Graph(node_count=node_count, edges=edges, neighbors=neighbors)


@dataclass(frozen=True)
class MassMatrix:
    """Row-stochastic lazy-walk matrix: alpha at the diagonal, (1-alpha)/deg
    on neighbors. Isolated nodes get identity rows (all mass stays put).

    Stored in COO form (row, col, val) with rows grouped and columns
    ascending; `row` is sorted so the arrays double as CSR-expanded indices.
    """

    alpha: float
    node_count: int
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.node_count, self.node_count))
        out[self.row, self.col] = self.val
        return out

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.node_count)
        np.add.at(out, self.row, self.val)
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Dense product (self @ x) without autodiff."""
        out = np.zeros((self.node_count, x.shape[1]))
        np.add.at(out, self.row, self.val[:, None] * x[self.col])
        return out


def mass_matrix(g: Graph, alpha: float) -> MassMatrix:
    """Per-node mass rows: alpha stays put, the rest spreads uniformly over
    neighbors. Isolated nodes keep all mass (identity row)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for u in range(g.node_count):
        nb = g.neighbors[u]
        if not nb:
            rows.append(u)
            cols.append(u)
            vals.append(1.0)
            continue
        share = (1.0 - alpha) / len(nb)
        entries = sorted([(u, alpha)] + [(v, share) for v in nb])
        for c, w in entries:
            rows.append(u)
            cols.append(c)
            vals.append(w)
    return MassMatrix(
        alpha=alpha,
        node_count=g.node_count,
        row=np.asarray(rows, dtype=np.int64),
        col=np.asarray(cols, dtype=np.int64),
        val=np.asarray(vals, dtype=np.float64),
    )


def hop_distance(g: Graph, source: int, targets, radius_cap: int) -> dict[int, int]:
    """BFS hop counts from source to the given targets, up to radius_cap.

    Targets unreachable within the cap are simply absent from the result.
    """
    if radius_cap < 1:
        raise ValueError("radius_cap must be >= 1")
    want = set(int(t) for t in targets)
    found: dict[int, int] = {}
    if source in want:
        found[source] = 0
    if len(found) == len(want):
        return found
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if dist[u] >= radius_cap:
            continue
        for v in g.neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                if v in want:
                    found[v] = dist[v]
                    if len(found) == len(want):
                        return found
                queue.append(v)
    return found


def _all_pairs(n: int) -> int:
    return n * (n - 1) // 2


def _sample_non_edges(g: Graph, count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniformly sample `count` distinct non-edges (no self-loops)."""
    n = g.node_count
    total = _all_pairs(n)
    existing = g.edge_set()
    avail = total - len(existing)
    count = min(count, avail)
    if count == 0:
        return []
    if total <= 2_000_000:
        pool = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in existing]
        idx = rng.choice(len(pool), size=count, replace=False)
        return [pool[k] for k in sorted(idx)]
    # large graphs: rejection sampling
    picked: set[tuple[int, int]] = set()
    while len(picked) < count:
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        if i == j:
            continue
        pair = (i, j) if i < j else (j, i)
        if pair in existing or pair in picked:
            continue
        picked.add(pair)
    return sorted(picked)


def inject_noise(g: Graph, ratio: float, mode: str, seed: int) -> Graph:
    """Perturb the edge set: remove existing edges, add non-edges, or both.

    The budget is floor(ratio * |E|); mode "mixed" splits it between
    removals (rounded up) and additions. Deterministic given seed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {ratio}")
    if mode not in ("add", "remove", "mixed"):
        raise ValueError(f"unknown noise mode: {mode}")
    budget = int(ratio * g.edge_count())
    if budget == 0:
        return g
    if mode == "remove":
        n_remove, n_add = budget, 0
    elif mode == "add":
        n_remove, n_add = 0, budget
    else:
        n_add = budget // 2
        n_remove = budget - n_add
    rng = _streams.substream(seed, _streams.NOISE)
    edges = set(g.edges)
    if n_remove:
        idx = rng.choice(g.edge_count(), size=min(n_remove, g.edge_count()), replace=False)
        for k in idx:
            edges.discard(g.edges[int(k)])
    if n_add:
        edges.update(_sample_non_edges(g, n_add, rng))
    return build_graph(edges, g.node_count)


@dataclass(frozen=True)
class LabelSet:
    """Integer node labels plus disjoint train/val/test masks."""

    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def validate(self) -> None:
        n = self.labels.shape[0]
        for m in (self.train_mask, self.val_mask, self.test_mask):
            if m.shape != (n,) or m.dtype != np.bool_:
                raise ValueError("masks must be boolean vectors of length N")
        if np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask) \
                or np.any(self.val_mask & self.test_mask):
            raise ValueError("split masks must be pairwise disjoint")
        present = np.unique(self.labels[self.train_mask])
        expected = np.unique(self.labels)
        missing = set(expected.tolist()) - set(present.tolist())
        if missing:
            raise ValueError(f"classes missing from train mask: {sorted(missing)}")


def sbm_generate(
    block_sizes,
    p_in: float,
    p_out: float,
    feature_dim: int,
    feature_noise: float,
    seed: int,
) -> tuple[Graph, np.ndarray, LabelSet]:
    """Stochastic block model with one-hot block features plus Gaussian noise.

    Labels are block indices; masks are stratified per block (20% train,
    20% val, rest test, at least one node each). Deterministic given seed.
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes or any(b < 1 for b in block_sizes):
        raise ValueError("block_sizes must be nonempty positive integers")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("p_in and p_out must be probabilities")
    c = len(block_sizes)
    if feature_dim < c:
        raise ValueError(f"feature_dim must be >= number of blocks ({c})")
    n = sum(block_sizes)
    labels = np.repeat(np.arange(c), block_sizes)

    rng = _streams.substream(seed, _streams.SBM)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = list(zip(iu[keep].tolist(), ju[keep].tolist()))
    g = build_graph(edges, n)

    frng = _streams.substream(seed, _streams.FEATURES)
    features = frng.normal(scale=feature_noise, size=(n, feature_dim))
    features[np.arange(n), labels] += 1.0

    srng = _streams.substream(seed, _streams.SPLITS)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for b in range(c):
        idx = np.flatnonzero(labels == b)
        idx = idx[srng.permutation(len(idx))]
        n_train = max(1, int(0.2 * len(idx)))
        n_val = max(1, int(0.2 * len(idx)))
        train[idx[:n_train]] = True
        val[idx[n_train:n_train + n_val]] = True
        test[idx[n_train + n_val:]] = True
    label_set = LabelSet(labels=labels, train_mask=train, val_mask=val, test_mask=test)
    label_set.validate()
    return g, features, label_set
