"""Curvature-aware message-passing encoder.

Each layer aggregates neighbor representations through positive edge
weights derived from the curvature surrogate (softplus of an affine map of
kappa, normalized per destination node), with a residual update:

    h_i <- relu(h_i + linear(sum_j w_ij h_j))

Two linear heads produce the Gaussian posterior (mu, log_var) of the
bottleneck code; class logits come from the reparameterized sample during
training and from mu at evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .graph import Graph
from .vib import GaussianPosterior, reparameterize

LOG_VAR_RANGE = 10.0


@dataclass
class GnnConfig:
    depth: int = 2
    hidden_dim: int = 64
    class_count: int = 2
    dropout_rate: float = 0.5
    normalize_weights: bool = True  # ablation flag: False keeps raw softplus weights

    def __post_init__(self):
        if self.depth < 1 or self.hidden_dim < 1 or self.class_count < 1:
            raise ValueError("depth, hidden_dim and class_count must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class EncoderOutput:
    mu: Tensor
    log_var: Tensor
    logits: Tensor
    code: Tensor  # the Z fed to the logits head (sample or mu)


class EdgeWeightTransform:
    """Affine reshaping of curvature into raw positive edge weights."""

    def __init__(self) -> None:
        self.scale = Parameter("edge.scale", np.array([[1.0]]))
        self.shift = Parameter("edge.shift", np.array([[0.0]]))

    def parameters(self) -> list[Parameter]:
        return [self.scale, self.shift]


def edge_weights(kappa: Tensor, transform: EdgeWeightTransform, g: Graph,
                 normalize: bool = True) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-arc positive weights from per-edge curvature.

    kappa is (E, 1) in canonical edge order; returns (weights, src, dst)
    over both arc orientations, normalized over each destination's incoming
    arcs unless `normalize` is False. Differentiable through kappa and the
    transform.
    """
    if kappa.shape != (g.edge_count(), 1):
        raise ValueError(f"kappa shape {kappa.shape} does not cover {g.edge_count()} edges")
    src, dst, eid = g.directed_index()
    tape = kappa.tape
    kdir = ad.gather_rows(kappa, eid)
    raw = ad.softplus(ad.add(ad.elementwise_multiply(kdir, tape.watch(transform.scale)),
                             tape.watch(transform.shift)))
    if not normalize:
        return raw, src, dst
    denom = ad.scatter_add_rows(raw, dst, g.node_count)
    weights = ad.divide(raw, ad.gather_rows(denom, dst))
    return weights, src, dst


def aggregate(z: Tensor, weights: Tensor, src: np.ndarray, dst: np.ndarray,
              w_msg: Tensor, b_msg: Tensor) -> Tensor:
    """Residual curvature-weighted aggregation step."""
    msg = ad.scatter_add_rows(ad.elementwise_multiply(weights, ad.gather_rows(z, src)),
                              dst, z.shape[0])
    return ad.relu(ad.add(z, ad.add(ad.matmul(msg, w_msg), b_msg)))


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class CurvatureGnn:
    """Encoder producing the bottleneck posterior and class logits."""

    def __init__(self, feature_dim: int, cfg: GnnConfig, rng: np.random.Generator):
        self.cfg = cfg
        h = cfg.hidden_dim
        self.w_in = Parameter("gnn.w_in", glorot(rng, feature_dim, h))
        self.b_in = Parameter("gnn.b_in", np.zeros((1, h)))
        self.layers: list[tuple[Parameter, Parameter]] = []
        for layer in range(cfg.depth):
            self.layers.append((
                Parameter(f"gnn.layer{layer}.w", glorot(rng, h, h)),
                Parameter(f"gnn.layer{layer}.b", np.zeros((1, h))),
            ))
        self.w_mu = Parameter("gnn.w_mu", glorot(rng, h, h))
        self.b_mu = Parameter("gnn.b_mu", np.zeros((1, h)))
        self.w_lv = Parameter("gnn.w_lv", glorot(rng, h, h))
        self.b_lv = Parameter("gnn.b_lv", np.zeros((1, h)))
        self.w_out = Parameter("gnn.w_out", glorot(rng, h, cfg.class_count))
        self.b_out = Parameter("gnn.b_out", np.zeros((1, cfg.class_count)))

    def parameters(self) -> list[Parameter]:
        params = [self.w_in, self.b_in]
        for w, b in self.layers:
            params.extend([w, b])
        params.extend([self.w_mu, self.b_mu, self.w_lv, self.b_lv,
                       self.w_out, self.b_out])
        return params

    def forward(self, tape: Tape, features: np.ndarray, kappa: Tensor,
                g: Graph, transform: EdgeWeightTransform, *,
                training: bool, seed: int = 0, step_key: tuple[int, ...] = ()) -> EncoderOutput:
        """Full encoder pass over graph `g` with per-edge curvature `kappa`.

        Dropout and the reparameterization draw are keyed by
        (seed, step_key) and only active in training mode, so evaluation is
        deterministic and two eval passes agree bitwise.
        """
        if features.shape[0] != g.node_count:
            raise ValueError("feature rows must match node count")
        drop = None
        if training and self.cfg.dropout_rate > 0.0:
            drop = _streams.substream(seed, _streams.DROPOUT, *step_key)

        x = tape.constant(features)
        h = ad.relu(ad.add(ad.matmul(x, tape.watch(self.w_in)), tape.watch(self.b_in)))
        if drop is not None:
            h = ad.dropout(h, self.cfg.dropout_rate, drop)
        if g.edge_count() > 0:
            weights, src, dst = edge_weights(kappa, transform, g,
                                             normalize=self.cfg.normalize_weights)
        else:
            weights, src, dst = tape.constant(np.zeros((0, 1))), \
                np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        for w, b in self.layers:
            h = aggregate(h, weights, src, dst, tape.watch(w), tape.watch(b))
            if drop is not None:
                h = ad.dropout(h, self.cfg.dropout_rate, drop)
        mu = ad.add(ad.matmul(h, tape.watch(self.w_mu)), tape.watch(self.b_mu))
        log_var = ad.clamp(ad.add(ad.matmul(h, tape.watch(self.w_lv)),
                                  tape.watch(self.b_lv)),
                           -LOG_VAR_RANGE, LOG_VAR_RANGE)
        if training:
            code = reparameterize(GaussianPosterior(mu, log_var), seed, *step_key)
        else:
            code = mu
        logits = ad.add(ad.matmul(code, tape.watch(self.w_out)), tape.watch(self.b_out))
        return EncoderOutput(mu=mu, log_var=log_var, logits=logits, code=code)
