"""Plain residual mean-aggregation GCN, the control model for comparative
experiments. Separately coded dense formulation: messages are A_mean @ H
with A_mean the row-normalized adjacency, no curvature, no bottleneck."""

from __future__ import annotations

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Parameter, Tape
from .gnn import glorot
from .graph import Graph, LabelSet
from .vib import prediction_loss


def mean_adjacency(g: Graph) -> np.ndarray:
    """Dense row-normalized adjacency; isolated rows stay zero."""
    a = np.zeros((g.node_count, g.node_count))
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    deg = a.sum(axis=1, keepdims=True)
    np.divide(a, deg, out=a, where=deg > 0)
    return a


class PlainGcn:
    """Residual mean-aggregation GCN with a direct logits head."""

    def __init__(self, feature_dim: int, hidden_dim: int, class_count: int,
                 depth: int, dropout_rate: float, rng: np.random.Generator):
        self.depth = depth
        self.dropout_rate = dropout_rate
        self.w_in = Parameter("gcn.w_in", glorot(rng, feature_dim, hidden_dim))
        self.b_in = Parameter("gcn.b_in", np.zeros((1, hidden_dim)))
        self.layers = [
            (Parameter(f"gcn.layer{k}.w", glorot(rng, hidden_dim, hidden_dim)),
             Parameter(f"gcn.layer{k}.b", np.zeros((1, hidden_dim))))
            for k in range(depth)
        ]
        self.w_out = Parameter("gcn.w_out", glorot(rng, hidden_dim, class_count))
        self.b_out = Parameter("gcn.b_out", np.zeros((1, class_count)))

    def parameters(self) -> list[Parameter]:
        params = [self.w_in, self.b_in]
        for w, b in self.layers:
            params.extend([w, b])
        params.extend([self.w_out, self.b_out])
        return params

    def forward(self, tape: Tape, features: np.ndarray, a_mean: np.ndarray, *,
                training: bool, seed: int = 0, step_key: tuple[int, ...] = ()):
        drop = None
        if training and self.dropout_rate > 0.0:
            drop = _streams.substream(seed, _streams.DROPOUT, *step_key)
        adj = tape.constant(a_mean)
        x = tape.constant(features)
        h = ad.relu(ad.add(ad.matmul(x, tape.watch(self.w_in)), tape.watch(self.b_in)))
        if drop is not None:
            h = ad.dropout(h, self.dropout_rate, drop)
        for w, b in self.layers:
            msg = ad.matmul(adj, h)
            h = ad.relu(ad.add(h, ad.add(ad.matmul(msg, tape.watch(w)), tape.watch(b))))
            if drop is not None:
                h = ad.dropout(h, self.dropout_rate, drop)
        return ad.add(ad.matmul(h, tape.watch(self.w_out)), tape.watch(self.b_out))


def train_plain_gcn(g: Graph, features: np.ndarray, labels: LabelSet, *,
                    hidden_dim: int = 64, depth: int = 2, dropout_rate: float = 0.5,
                    epochs: int = 150, lr: float = 0.01, patience: int = 20,
                    seed: int = 0):
    """Train the control model; returns (model, best validation accuracy)."""
    from .train import Adam, accuracy_and_macro_f1  # local import avoids a cycle

    rng = _streams.substream(seed, _streams.PARAMS)
    model = PlainGcn(features.shape[1], hidden_dim, labels.class_count(),
                     depth, dropout_rate, rng)
    a_mean = mean_adjacency(g)
    opt = Adam(model.parameters(), lr=lr)
    best_val = -1.0
    best_values = [p.value.copy() for p in model.parameters()]
    stale = 0
    for epoch in range(epochs):
        tape = Tape()
        logits = model.forward(tape, features, a_mean, training=True,
                               seed=seed, step_key=(epoch,))
        loss = prediction_loss(logits, labels, labels.train_mask)
        for p in model.parameters():
            p.zero_grad()
        tape.backward(loss)
        opt.step()
        val_acc, _ = evaluate_plain_gcn(model, g, features, labels, labels.val_mask,
                                        a_mean=a_mean)
        if val_acc > best_val:
            best_val = val_acc
            best_values = [p.value.copy() for p in model.parameters()]
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    for p, v in zip(model.parameters(), best_values):
        p.value[:] = v
    return model, best_val


def evaluate_plain_gcn(model: PlainGcn, g: Graph, features: np.ndarray,
                       labels: LabelSet, mask: np.ndarray,
                       a_mean: np.ndarray | None = None) -> tuple[float, float]:
    from .train import accuracy_and_macro_f1

    if a_mean is None:
        a_mean = mean_adjacency(g)
    tape = Tape()
    logits = model.forward(tape, features, a_mean, training=False)
    pred = logits.data.argmax(axis=1)
    return accuracy_and_macro_f1(pred, labels.labels, mask, labels.class_count())
