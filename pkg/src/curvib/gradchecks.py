"""Canned gradient-integrity checks on small instances.

Each check builds a deterministic scalar loss on a ~10-node graph and
compares tape gradients against central finite differences. The affine
head's bias is excluded from differencing everywhere: it is analytically
inert (the row-stochastic mass action cancels it), so its gradient is
asserted to be exactly ~0 instead.
"""

from __future__ import annotations

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Parameter, Tape, grad_check
from .gnn import CurvatureGnn, EdgeWeightTransform, GnnConfig
from .graph import build_graph, mass_matrix, sbm_generate
from .ibcurv import AffineHead, LatentMetricConfig, ib_curvature, ibcurv_objective
from .refine import (CandidateSet, EdgeProbabilities, build_candidates,
                     concrete_sample, structure_likelihood)
from .vib import GaussianPosterior, compression_loss, prediction_loss, vib_loss


def _instance(seed: int, hidden: int = 4):
    g, x, labels = sbm_generate([5, 5], 0.7, 0.25, 3, 0.6, seed=seed)
    rng = _streams.substream(seed, _streams.PARAMS, 99)
    z = Parameter("z", rng.normal(size=(10, hidden)))
    head = AffineHead(hidden, rng)
    head.weight.value[:] = rng.normal(size=(hidden, 1)) * 0.5
    head.bias.value[:] = rng.normal() * 0.1
    return g, x, labels, z, head


def check_surrogate_curvature(seed: int, step: float = 1e-5) -> float:
    g, _, _, z, head = _instance(seed)
    mass = mass_matrix(g, 0.5)
    cfg = LatentMetricConfig()

    def build(tape: Tape):
        kappa = ib_curvature(mass, tape.watch(z), head, cfg, g.edges)
        return ad.sum_all(kappa.values)

    err = grad_check(build, [z, head.weight], step=step)
    head.bias.zero_grad()
    tape = Tape()
    tape.backward(build(tape))
    if np.max(np.abs(head.bias.gradient)) > 1e-12:
        raise AssertionError("head bias gradient should vanish analytically")
    return err


def check_flow_objective(seed: int, step: float = 1e-5) -> float:
    g, _, _, z, head = _instance(seed)
    mass = mass_matrix(g, 0.5)
    cfg = LatentMetricConfig()

    def build(tape: Tape):
        leaf = tape.watch(z)
        kappa = ib_curvature(mass, leaf, head, cfg, g.edges)
        # small smooth anchor: the raw objective has exact-zero gradient
        # entries (integer edge-sign cancellations through the rational
        # mass rows), where central differences compare noise against the
        # 1e-8 denominator floor; the anchor keeps every entry informative
        anchor = ad.scale(ad.mean_all(ad.square(leaf)), 1e-3)
        return ad.add(ibcurv_objective(kappa, leaf, cfg), anchor)

    return grad_check(build, [z, head.weight], step=step)


def check_encoder_vib(seed: int, step: float = 1e-5) -> float:
    g, x, labels, _, _ = _instance(seed)
    cfg = GnnConfig(depth=2, hidden_dim=5, class_count=labels.class_count(),
                    dropout_rate=0.3)
    model = CurvatureGnn(x.shape[1], cfg, _streams.substream(seed, _streams.PARAMS, 7))
    transform = EdgeWeightTransform()
    kappa_data = _streams.substream(seed, _streams.PARAMS, 8).normal(
        size=(g.edge_count(), 1))

    def build(tape: Tape):
        out = model.forward(tape, x, tape.constant(kappa_data), g, transform,
                            training=True, seed=seed, step_key=(0,))
        pred = prediction_loss(out.logits, labels, labels.train_mask)
        comp = compression_loss(GaussianPosterior(out.mu, out.log_var),
                                labels.train_mask)
        return vib_loss(pred, comp, beta=0.01).total

    return grad_check(build, model.parameters() + transform.parameters(), step=step)


def check_structure_composite(seed: int, step: float = 1e-5) -> float:
    g, _, _, z, head = _instance(seed)
    candidates = build_candidates(g, per_node=2, seed=seed)
    mass = mass_matrix(g, 0.5)
    cfg = LatentMetricConfig()

    def build(tape: Tape):
        leaf = tape.watch(z)
        kappa = ib_curvature(mass, leaf, head, cfg, candidates)
        dist = _edge_distances(leaf, candidates, cfg)
        k = ad.elementwise_multiply(
            ad.subtract(tape.constant(np.ones((len(candidates), 1))), kappa.values),
            dist)
        pi = EdgeProbabilities(candidates=candidates, values=ad.sigmoid(k), logits=k)
        soft = concrete_sample(pi, tau=0.5, seed=seed)
        return ad.add(structure_likelihood(pi, g, candidates), ad.mean_all(soft))

    return grad_check(build, [z, head.weight], step=step)


def _edge_distances(z, candidates: CandidateSet, cfg: LatentMetricConfig):
    from .ibcurv import edge_latent_distances

    src, dst = candidates.src_dst()
    return edge_latent_distances(z, src, dst, cfg)


ALL_CHECKS = {
    "surrogate-curvature": check_surrogate_curvature,
    "flow-objective": check_flow_objective,
    "encoder-vib": check_encoder_vib,
    "structure-composite": check_structure_composite,
}


def run_all(seeds=range(5), step: float = 1e-5) -> dict[str, float]:
    """Worst relative error per check across the seeds."""
    return {name: max(fn(seed, step) for seed in seeds)
            for name, fn in ALL_CHECKS.items()}
