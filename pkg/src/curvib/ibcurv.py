"""Differentiable curvature surrogate and its flow objective.

The surrogate scores each edge by how much a scalar summary s = M f(Z)
(M a row-stochastic mass matrix, f a learned affine head) varies across the
edge relative to latent distance:

    kappa(i, j) = 1 - |s_i - s_j| / d(z_i, z_j)

Gradients flow into Z and the head. The flow objective sums
(1 - kappa) * d over edges, which the trainer drives toward zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .graph import MassMatrix


@dataclass
class LatentMetricConfig:
    """Latent metric settings: Euclidean distance floored at floor_epsilon."""

    floor_epsilon: float = 1e-6

    def __post_init__(self):
        if self.floor_epsilon <= 0:
            raise ValueError("floor_epsilon must be positive")


class AffineHead:
    """Affine map from H-dim representations to one scalar per node."""

    def __init__(self, hidden_dim: int, rng: np.random.Generator,
                 init_scale: float = 0.01) -> None:
        limit = np.sqrt(6.0 / (hidden_dim + 1)) * init_scale
        self.weight = Parameter("head.weight",
                                rng.uniform(-limit, limit, size=(hidden_dim, 1)))
        self.bias = Parameter("head.bias", np.zeros((1, 1)))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def apply(self, tape: Tape, z: Tensor) -> Tensor:
        return ad.add(ad.matmul(z, tape.watch(self.weight)), tape.watch(self.bias))


@dataclass
class IbCurvatureMap:
    """Per-edge differentiable curvature, keyed by canonical edge order."""

    edges: tuple[tuple[int, int], ...]
    values: Tensor  # (E, 1), on the tape
    alpha: float
    signed: bool = False
    src: np.ndarray | None = None
    dst: np.ndarray | None = None

    def __post_init__(self):
        if self.src is None or self.dst is None:
            arr = (np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
                   if self.edges else np.zeros((0, 2), dtype=np.int64))
            self.src, self.dst = arr[:, 0], arr[:, 1]

    def numpy(self) -> np.ndarray:
        return self.values.data[:, 0].copy()

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {e: float(v) for e, v in zip(self.edges, self.values.data[:, 0])}


def latent_distance(z_i: Tensor, z_j: Tensor, cfg: LatentMetricConfig) -> Tensor:
    """Floored Euclidean distance between two (1, H) latent rows."""
    if z_i.shape != z_j.shape:
        raise ValueError(f"latent_distance: shapes {z_i.shape} vs {z_j.shape}")
    return _floored_norm(ad.subtract(z_i, z_j), cfg)


def _floored_norm(diff: Tensor, cfg: LatentMetricConfig) -> Tensor:
    # sqrt(max(||diff||^2, eps^2)) = max(||diff||, eps), with zero gradient
    # once the floor engages (keeps collided representations finite)
    sq = ad.row_sum(ad.square(diff))
    return ad.sqrt(ad.clamp_min(sq, cfg.floor_epsilon ** 2))


def edge_latent_distances(z: Tensor, src, dst, cfg: LatentMetricConfig) -> Tensor:
    """Floored Euclidean distances for each (src, dst) pair; (E, 1) tensor."""
    diff = ad.subtract(ad.gather_rows(z, src), ad.gather_rows(z, dst))
    return _floored_norm(diff, cfg)


def ib_curvature(mass: MassMatrix, z: Tensor, head: AffineHead,
                 cfg: LatentMetricConfig, edges, *, signed: bool = False) -> IbCurvatureMap:
    """Curvature surrogate for each listed edge, differentiable in Z and head.

    `edges` may be any iterable of node pairs, or a refine.CandidateSet
    whose cached index arrays are reused. `signed=True` keeps the raw
    difference s_i - s_j in the numerator (the asymmetric variant, for
    ablation); the default takes its absolute value so kappa <= 1 and
    kappa(i, j) = kappa(j, i).
    """
    if hasattr(edges, "src_dst"):  # CandidateSet fast path
        src, dst = edges.src_dst()
        edges = edges.pairs
    else:
        edges = tuple((int(i), int(j)) for i, j in edges)
        arr = (np.asarray(edges, dtype=np.int64).reshape(-1, 2)
               if edges else np.zeros((0, 2), dtype=np.int64))
        src, dst = arr[:, 0], arr[:, 1]
    if mass.node_count != z.shape[0]:
        raise ValueError("mass matrix and Z disagree on node count")
    tape = z.tape
    s = ad.sparse_matmul(mass, head.apply(tape, z))
    ds = ad.subtract(ad.gather_rows(s, src), ad.gather_rows(s, dst))
    numer = ds if signed else ad.absolute_value(ds)
    dist = edge_latent_distances(z, src, dst, cfg)
    kappa = ad.subtract(tape.constant(np.ones((len(edges), 1))), ad.divide(numer, dist))
    return IbCurvatureMap(edges=edges, values=kappa, alpha=mass.alpha,
                          signed=signed, src=src, dst=dst)


def ibcurv_objective(kappa: IbCurvatureMap, z: Tensor, cfg: LatentMetricConfig) -> Tensor:
    """Flow objective: sum over edges of (1 - kappa) * latent distance.

    Algebraically equals sum |s_i - s_j| under the unsigned surrogate;
    minimizing it drives kappa toward 1.
    """
    dist = edge_latent_distances(z, kappa.src, kappa.dst, cfg)
    one = z.tape.constant(np.ones((len(kappa.edges), 1)))
    return ad.sum_all(ad.elementwise_multiply(ad.subtract(one, kappa.values), dist))
