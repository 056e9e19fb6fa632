"""Structure refinement: discrete Ricci-flow edge weights, concrete
(Gumbel-sigmoid) relaxation of Bernoulli edge sampling, hard thresholding,
and the Bernoulli likelihood of the observed adjacency.

Flow weights K = (1 - kappa) * d are nonnegative while kappa <= 1, so edge
keep-probabilities pi = sigmoid(K) live in [0.5, 1): refinement prunes an
edge only when its flow weight collapses to zero and the coin flip at
pi = 0.5 comes up tails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, build_graph
from .ibcurv import IbCurvatureMap, LatentMetricConfig, edge_latent_distances


@dataclass(frozen=True)
class CandidateSet:
    """Edges considered for refinement: the original edges plus sampled
    2-hop pairs (up to `per_node` each), in canonical order."""

    pairs: tuple[tuple[int, int], ...]
    node_count: int

    def __post_init__(self):
        arr = (np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
               if self.pairs else np.zeros((0, 2), dtype=np.int64))
        object.__setattr__(self, "_array", arr)
        object.__setattr__(self, "_keys", arr[:, 0] * self.node_count + arr[:, 1])

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_array(self) -> np.ndarray:
        return self._array

    def pair_keys(self) -> np.ndarray:
        """Pairs encoded as i * node_count + j, aligned with `pairs`."""
        return self._keys

    def src_dst(self) -> tuple[np.ndarray, np.ndarray]:
        return self._array[:, 0], self._array[:, 1]


def build_candidates(g: Graph, per_node: int = 5, seed: int = 0,
                     dense: bool = False) -> CandidateSet:
    """Candidate pairs for refinement.

    Dense mode takes every node pair (memory-bounded to 300 nodes); sparse
    mode keeps the original edges and samples up to `per_node` 2-hop
    neighbors per node, weighted by shared-neighbor count so the most
    plausible missing links dominate. Seeded, deterministic.
    """
    if dense:
        if g.node_count > 300:
            raise ValueError("dense candidate mode is limited to 300 nodes")
        pairs = tuple((i, j) for i in range(g.node_count)
                      for j in range(i + 1, g.node_count))
        return CandidateSet(pairs=pairs, node_count=g.node_count)
    pairs = set(g.edges)
    rng = _streams.substream(seed, _streams.CANDIDATES)
    base = frozenset(g.edges)
    for u in range(g.node_count):
        support: dict[tuple[int, int], int] = {}
        for v in g.neighbors[u]:
            for w in g.neighbors[v]:
                if w == u:
                    continue
                pair = (u, w) if u < w else (w, u)
                if pair not in base:
                    support[pair] = support.get(pair, 0) + 1
        if not support:
            continue
        ordered = sorted(support)
        if len(ordered) > per_node:
            # strongest shared-neighbor support first; random jitter breaks
            # ties so equal-support pairs are sampled uniformly
            jitter = rng.random(len(ordered))
            ranked = sorted(range(len(ordered)),
                            key=lambda k: (-support[ordered[k]], jitter[k]))
            ordered = sorted(ordered[k] for k in ranked[:per_node])
        pairs.update(ordered)
    return CandidateSet(pairs=tuple(sorted(pairs)), node_count=g.node_count)


@dataclass
class FlowWeights:
    """Nonnegative per-candidate flow weights K = (1 - kappa) * d."""

    candidates: CandidateSet
    values: Tensor  # (len(candidates), 1)
    epoch: int = 0


def ricci_flow_step(kappa: IbCurvatureMap, z: Tensor, cfg: LatentMetricConfig,
                    candidates: CandidateSet, epoch: int = 0) -> FlowWeights:
    """One discrete flow update: K = (1 - kappa) * latent distance."""
    if kappa.edges is not candidates.pairs and kappa.edges != candidates.pairs:
        raise ValueError("kappa must be keyed by the candidate pairs")
    src, dst = candidates.src_dst()
    dist = edge_latent_distances(z, src, dst, cfg)
    one = z.tape.constant(np.ones((len(candidates), 1)))
    k = ad.elementwise_multiply(ad.subtract(one, kappa.values), dist)
    return FlowWeights(candidates=candidates, values=k, epoch=epoch)


@dataclass
class EdgeProbabilities:
    """Per-candidate keep-probabilities pi = sigmoid(K).

    Keeps the logits tensor alongside pi so downstream sampling and
    likelihoods can work in logit space, which stays finite even where
    sigmoid saturates to 1.0 in float64.
    """

    candidates: CandidateSet
    values: Tensor  # pi, in (0, 1)
    logits: Tensor  # K = logit(pi)

    @classmethod
    def from_flow(cls, flow: FlowWeights) -> "EdgeProbabilities":
        return cls(candidates=flow.candidates, values=ad.sigmoid(flow.values),
                   logits=flow.values)

    @classmethod
    def from_values(cls, candidates: CandidateSet, pi: np.ndarray, tape) -> "EdgeProbabilities":
        """Probabilities given directly (tests, exports); pi strictly in (0, 1)."""
        pi = np.asarray(pi, dtype=np.float64).reshape(-1, 1)
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise ValueError("pi must lie strictly inside (0, 1)")
        values = tape.constant(pi)
        logits = tape.constant(np.log(pi) - np.log1p(-pi))
        return cls(candidates=candidates, values=values, logits=logits)


def concrete_sample(pi: EdgeProbabilities, tau: float, seed: int,
                    *counters: int) -> Tensor:
    """Soft Bernoulli relaxation: sigmoid((logit(pi) + logit(eps)) / tau).

    eps ~ Uniform(0, 1) from the stream keyed by (seed, *counters), one
    draw per candidate in canonical order. Differentiable through pi;
    thresholding the result at 0.5 is distributed exactly Bernoulli(pi).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rng = _streams.substream(seed, _streams.CONCRETE, *counters)
    eps = rng.random((len(pi.candidates), 1))
    eps = np.clip(eps, 1e-12, 1.0 - 1e-12)
    noise = pi.values.tape.constant(np.log(eps) - np.log1p(-eps))
    return ad.sigmoid(ad.scale(ad.add(pi.logits, noise), 1.0 / tau))


def harden(soft, candidates: CandidateSet, *, train_mask: np.ndarray | None = None,
           pi_values: np.ndarray | None = None) -> Graph:
    """Discretize soft samples: keep a candidate iff its value >= 0.5.

    Straight-through: the returned graph is used for forward structure
    while gradients continue to flow through the soft values wherever they
    feed a loss. If `train_mask`/`pi_values` are given, a training node
    that would end up isolated keeps its highest-pi candidate edge.
    """
    values = soft.data if isinstance(soft, Tensor) else np.asarray(soft, dtype=np.float64)
    values = values.reshape(-1)
    if values.shape[0] != len(candidates):
        raise ValueError("soft values must cover the candidate set")
    keep = values >= 0.5
    pairs = candidates.pair_array()
    kept = pairs[keep]
    if train_mask is not None and pi_values is not None:
        pi_flat = np.asarray(pi_values).reshape(-1)
        degree = np.zeros(candidates.node_count, dtype=np.int64)
        np.add.at(degree, kept[:, 0], 1)
        np.add.at(degree, kept[:, 1], 1)
        rescued = []
        for u in np.flatnonzero(train_mask):
            if degree[u] > 0:
                continue
            touching = np.flatnonzero((pairs[:, 0] == u) | (pairs[:, 1] == u))
            if touching.size:
                rescued.append(pairs[touching[np.argmax(pi_flat[touching])]])
        if rescued:
            kept = np.vstack([kept, np.array(rescued)])
    return build_graph([(int(i), int(j)) for i, j in kept], candidates.node_count)


def structure_likelihood(pi: EdgeProbabilities, original: Graph,
                         candidates: CandidateSet) -> Tensor:
    """Mean Bernoulli negative log-likelihood of the original adjacency.

    Computed in logit space: -log pi = softplus(-K), -log(1 - pi) =
    softplus(K), so the loss stays finite where pi saturates.
    """
    if original.edges:
        edge_arr = np.asarray(original.edges, dtype=np.int64)
        edge_keys = edge_arr[:, 0] * candidates.node_count + edge_arr[:, 1]
    else:
        edge_keys = np.zeros(0, dtype=np.int64)
    member = np.isin(edge_keys, candidates.pair_keys())
    if not member.all():
        raise ValueError("candidates must contain every original edge")
    indicator = np.isin(candidates.pair_keys(), edge_keys).astype(np.float64).reshape(-1, 1)
    tape = pi.values.tape
    ind = tape.constant(indicator)
    anti = tape.constant(1.0 - indicator)
    k = pi.logits
    nll = ad.add(ad.elementwise_multiply(ind, ad.softplus(ad.scale(k, -1.0))),
                 ad.elementwise_multiply(anti, ad.softplus(k)))
    return ad.mean_all(nll)
