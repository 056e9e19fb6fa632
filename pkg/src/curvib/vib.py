"""Variational bottleneck loss: reparameterized sampling, masked
cross-entropy prediction term, and the closed-form KL compression term
against a standard-normal prior, combined as prediction + beta * compression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import LabelSet


@dataclass
class GaussianPosterior:
    """Per-node diagonal Gaussian over the bottleneck code."""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ValueError("mu and log_var must share a shape")


@dataclass
class VibLossParts:
    prediction: Tensor
    compression: Tensor
    beta: float
    total: Tensor


def reparameterize(post: GaussianPosterior, seed: int, *counters: int) -> Tensor:
    """Z = mu + exp(log_var / 2) * eps with eps from the keyed stream."""
    rng = _streams.substream(seed, _streams.REPARAM, *counters)
    eps = post.mu.tape.constant(rng.standard_normal(post.mu.shape))
    sigma = ad.exp(ad.scale(post.log_var, 0.5))
    return ad.add(post.mu, ad.elementwise_multiply(sigma, eps))


def prediction_loss(logits: Tensor, labels: LabelSet, mask: np.ndarray) -> Tensor:
    """Mean negative log-softmax-likelihood over the masked nodes."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("prediction_loss: empty mask")
    tape = logits.tape
    log_probs = ad.log_row_softmax(gather_rows_checked(logits, idx))
    onehot = np.zeros((idx.size, logits.shape[1]))
    onehot[np.arange(idx.size), labels.labels[idx]] = 1.0
    picked = ad.row_sum(ad.elementwise_multiply(log_probs, tape.constant(onehot)))
    return ad.scale(ad.mean_all(picked), -1.0)


def gather_rows_checked(t: Tensor, idx: np.ndarray) -> Tensor:
    if idx.max(initial=-1) >= t.shape[0]:
        raise ValueError("mask longer than logits")
    return ad.gather_rows(t, idx)


def compression_loss(post: GaussianPosterior, mask: np.ndarray) -> Tensor:
    """Mean over masked nodes of KL(N(mu, sigma^2) || N(0, I)).

    Closed form per node: 0.5 * sum_h (mu^2 + sigma^2 - 1 - log sigma^2).
    """
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("compression_loss: empty mask")
    mu = gather_rows_checked(post.mu, idx)
    log_var = ad.gather_rows(post.log_var, idx)
    inner = ad.subtract(ad.add(ad.square(mu), ad.exp(log_var)),
                        ad.add_scalar(log_var, 1.0))
    return ad.scale(ad.mean_all(ad.row_sum(inner)), 0.5)


def vib_loss(pred: Tensor, comp: Tensor, beta: float) -> VibLossParts:
    """total = prediction + beta * compression."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    total = ad.add(pred, ad.scale(comp, beta))
    return VibLossParts(prediction=pred, compression=comp, beta=beta, total=total)
