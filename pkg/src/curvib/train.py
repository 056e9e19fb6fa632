"""Bi-level training loop.

Each outer epoch alternates:
  phase 1 - representation steps on the bottleneck loss with the curvature
            map held fixed (encoder, heads, edge transform update);
  phase 2 - structure steps: flow weights from the current curvature,
            concrete edge sampling, hardening into a refined graph, and
            gradient steps on structure likelihood + the flow objective
            (curvature head updates);
  joint   - curvature recomputed on the refined graph, one gradient step on
            bottleneck loss + lambda_curv * flow objective over all
            parameters.

All randomness is keyed by (seed, purpose, epoch, phase, step), so a run is
reproducible bitwise and resumable mid-stream from a checkpoint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from . import _streams
from . import autodiff as ad
from .autodiff import Parameter, Tape
from .gnn import CurvatureGnn, EdgeWeightTransform, GnnConfig
from .graph import Graph, LabelSet, mass_matrix
from .ibcurv import AffineHead, LatentMetricConfig, ib_curvature, ibcurv_objective
from .refine import (CandidateSet, EdgeProbabilities, build_candidates,
                     concrete_sample, harden, ricci_flow_step,
                     structure_likelihood)
from .vib import GaussianPosterior, compression_loss, prediction_loss, vib_loss


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; carries epoch/phase context."""


@dataclass
class TrainConfig:
    outer_epochs: int = 50
    inner_repr_epochs: int = 5
    inner_struct_epochs: int = 5
    beta: float = 1e-3
    alpha: float = 0.5
    tau: float = 0.5
    learning_rate: float = 1e-3
    depth: int = 2
    hidden_dim: int = 64
    dropout_rate: float = 0.5
    seed: int = 0
    candidate_k: int = 5
    dense_candidates: bool = False
    lambda_curv: float = 0.01
    patience: int = 20
    dataset: str = "sbm:100,100:0.2:0.05:8:1.0"

    def __post_init__(self):
        if min(self.outer_epochs, self.inner_repr_epochs, self.inner_struct_epochs) < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.gradient
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class MetricsRow:
    epoch: int
    prediction: float
    compression: float
    structure: float
    ibcurv: float
    total: float
    accuracy_val: float
    macro_f1_val: float = float("nan")
    wall_time: float = 0.0

    CSV_COLUMNS = ("epoch", "prediction", "compression", "structure",
                   "ibcurv", "total", "accuracy_val")

    def csv_values(self):
        return (self.epoch, self.prediction, self.compression, self.structure,
                self.ibcurv, self.total, self.accuracy_val)


@dataclass
class TrainState:
    cfg: TrainConfig
    model: CurvatureGnn
    transform: EdgeWeightTransform
    head: AffineHead
    metric_cfg: LatentMetricConfig
    original: Graph
    candidates: CandidateSet
    a_star: Graph
    kappa: np.ndarray  # (len(candidates),) current surrogate values
    opt_repr: Adam
    opt_struct: Adam
    opt_joint: Adam
    epoch: int = 0
    last_structure_loss: float = float("nan")
    metrics: list[MetricsRow] = field(default_factory=list)
    step_losses: list[tuple[int, str, int, float]] = field(default_factory=list)
    best_val: float = -1.0
    best_epoch: int = -1
    stale: int = 0
    best_params: dict[str, np.ndarray] = field(default_factory=dict)
    best_a_star: Graph | None = None
    best_kappa: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        return (self.model.parameters() + self.transform.parameters()
                + self.head.parameters())

    def kappa_for(self, g: Graph) -> np.ndarray:
        """Current curvature values for g's edges (g must be candidate-covered)."""
        index = {pair: k for k, pair in enumerate(self.candidates.pairs)}
        try:
            rows = [index[e] for e in g.edges]
        except KeyError as exc:
            raise KeyError(f"edge {exc} not in the candidate set") from exc
        return self.kappa[rows].reshape(-1, 1)

    def snapshot_best(self) -> None:
        self.best_params = {p.name: p.value.copy() for p in self.parameters()}
        self.best_a_star = self.a_star
        self.best_kappa = self.kappa.copy()

    def restore_best(self) -> None:
        if not self.best_params:
            return
        for p in self.parameters():
            p.value[:] = self.best_params[p.name]
        self.a_star = self.best_a_star
        self.kappa = self.best_kappa.copy()


def _gnn_config(cfg: TrainConfig, class_count: int) -> GnnConfig:
    return GnnConfig(depth=cfg.depth, hidden_dim=cfg.hidden_dim,
                     class_count=class_count, dropout_rate=cfg.dropout_rate)


def initialize(cfg: TrainConfig, data) -> TrainState:
    """Fresh state: parameters seeded, refined structure = original graph,
    curvature initialized from the untrained encoder's representations."""
    g, features, labels = data.graph, data.features, data.labels
    if features.shape[0] != g.node_count:
        raise ValueError("dataset features and graph disagree on node count")
    rng = _streams.substream(cfg.seed, _streams.PARAMS)
    model = CurvatureGnn(features.shape[1], _gnn_config(cfg, labels.class_count()), rng)
    transform = EdgeWeightTransform()
    head = AffineHead(cfg.hidden_dim, rng)
    metric_cfg = LatentMetricConfig()
    candidates = build_candidates(g, per_node=cfg.candidate_k, seed=cfg.seed,
                                  dense=cfg.dense_candidates)
    state = TrainState(cfg=cfg, model=model, transform=transform, head=head,
                       metric_cfg=metric_cfg, original=g, candidates=candidates,
                       a_star=g, kappa=np.ones(len(candidates)),
                       opt_repr=Adam(model.parameters() + transform.parameters(),
                                     lr=cfg.learning_rate),
                       opt_struct=Adam(head.parameters(), lr=cfg.learning_rate),
                       opt_joint=Adam(model.parameters() + transform.parameters()
                                      + head.parameters(), lr=cfg.learning_rate))
    # curvature from the initial representations (uniform kappa feeds the
    # first forward; the near-zero head keeps the initial map close to 1)
    tape = Tape()
    out = model.forward(tape, features, tape.constant(state.kappa_for(g)), g,
                        transform, training=False)
    tape2 = Tape()
    kappa0 = ib_curvature(mass_matrix(g, cfg.alpha), tape2.constant(out.mu.data),
                          head, metric_cfg, candidates.pairs)
    state.kappa = kappa0.numpy()
    return state


def _eval_representation(state: TrainState, features: np.ndarray) -> np.ndarray:
    tape = Tape()
    out = state.model.forward(tape, features,
                              tape.constant(state.kappa_for(state.a_star)),
                              state.a_star, state.transform, training=False)
    return out.mu.data.copy()


def phase1_representation(state: TrainState, data) -> TrainState:
    """Inner representation steps on the bottleneck loss; curvature fixed."""
    cfg = state.cfg
    labels = data.labels
    kappa_const = state.kappa_for(state.a_star)
    for step in range(cfg.inner_repr_epochs):
        tape = Tape()
        out = state.model.forward(tape, data.features, tape.constant(kappa_const),
                                  state.a_star, state.transform, training=True,
                                  seed=cfg.seed, step_key=(state.epoch, 1, step))
        pred = prediction_loss(out.logits, labels, labels.train_mask)
        comp = compression_loss(GaussianPosterior(out.mu, out.log_var),
                                labels.train_mask)
        parts = vib_loss(pred, comp, cfg.beta)
        if not np.isfinite(parts.total.data).all():
            raise TrainingAbort(f"non-finite loss in phase 1, epoch {state.epoch}")
        for p in state.opt_repr.params:
            p.zero_grad()
        tape.backward(parts.total)
        state.opt_repr.step()
        state.step_losses.append((state.epoch, "repr", step, parts.total.item()))
    return state


def phase2_refinement(state: TrainState, data) -> TrainState:
    """Inner structure steps: sample refined graphs, fit the curvature head.

    Each step works on a fresh Bernoulli-relaxed sample of the structure;
    the structure that persists into the joint step and evaluation is the
    deterministic hardening of the final keep-probabilities (threshold at
    0.5), so downstream passes are reproducible and the fixed point
    "pi > 0.5 on original edges keeps them" holds exactly.
    """
    cfg = state.cfg
    z_data = _eval_representation(state, data.features)
    for step in range(cfg.inner_struct_epochs):
        tape = Tape()
        z = tape.constant(z_data)
        mass = mass_matrix(state.a_star, cfg.alpha)
        kappa = ib_curvature(mass, z, state.head, state.metric_cfg,
                             state.candidates.pairs)
        flow = ricci_flow_step(kappa, z, state.metric_cfg, state.candidates,
                               epoch=state.epoch)
        pi = EdgeProbabilities.from_flow(flow)
        soft = concrete_sample(pi, cfg.tau, cfg.seed, state.epoch, step)
        new_graph = harden(soft, state.candidates,
                           train_mask=data.labels.train_mask,
                           pi_values=pi.values.data)
        # the flow objective is a sum over candidates; left unweighted its
        # per-candidate gradient (1) swamps the mean-reduced likelihood
        # (<= 1/|C|) and collapses the head, so scale it to mean form
        flow_term = ad.scale(ibcurv_objective(kappa, z, state.metric_cfg),
                             cfg.lambda_curv / max(len(state.candidates), 1))
        loss = ad.add(structure_likelihood(pi, state.original, state.candidates),
                      flow_term)
        if not np.isfinite(loss.data).all():
            raise TrainingAbort(f"non-finite loss in phase 2, epoch {state.epoch}")
        for p in state.opt_struct.params:
            p.zero_grad()
        tape.backward(loss)
        state.opt_struct.step()
        state.a_star = new_graph
        state.last_structure_loss = float(
            structure_likelihood(pi, state.original, state.candidates).item())
    # deterministic refresh with the updated head
    tape = Tape()
    z = tape.constant(z_data)
    kappa = ib_curvature(mass_matrix(state.a_star, cfg.alpha), z, state.head,
                         state.metric_cfg, state.candidates.pairs)
    flow = ricci_flow_step(kappa, z, state.metric_cfg, state.candidates,
                           epoch=state.epoch)
    pi = EdgeProbabilities.from_flow(flow)
    state.a_star = harden(pi.values, state.candidates,
                          train_mask=data.labels.train_mask,
                          pi_values=pi.values.data)
    state.kappa = kappa.numpy()
    return state


def outer_step(state: TrainState, data) -> TrainState:
    """Joint step on the full objective; curvature recomputed on the
    refined structure; appends one metrics row."""
    cfg = state.cfg
    labels = data.labels
    started = time.perf_counter()
    tape = Tape()
    out = state.model.forward(tape, data.features,
                              tape.constant(state.kappa_for(state.a_star)),
                              state.a_star, state.transform, training=True,
                              seed=cfg.seed, step_key=(state.epoch, 3, 0))
    pred = prediction_loss(out.logits, labels, labels.train_mask)
    comp = compression_loss(GaussianPosterior(out.mu, out.log_var),
                            labels.train_mask)
    parts = vib_loss(pred, comp, cfg.beta)
    kappa_new = ib_curvature(mass_matrix(state.a_star, cfg.alpha), out.mu,
                             state.head, state.metric_cfg, state.candidates.pairs)
    ibc = ibcurv_objective(kappa_new, out.mu, state.metric_cfg)
    total = ad.add(parts.total, ad.scale(ibc, cfg.lambda_curv))
    if not np.isfinite(total.data).all():
        raise TrainingAbort(f"non-finite loss in joint step, epoch {state.epoch}")
    for p in state.opt_joint.params:
        p.zero_grad()
    tape.backward(total)
    state.opt_joint.step()
    state.kappa = kappa_new.numpy()

    val_acc, val_f1 = evaluate(state, data, "val")
    state.metrics.append(MetricsRow(
        epoch=state.epoch,
        prediction=pred.item(),
        compression=comp.item(),
        structure=state.last_structure_loss,
        ibcurv=ibc.item(),
        total=total.item(),
        accuracy_val=val_acc,
        macro_f1_val=val_f1,
        wall_time=time.perf_counter() - started,
    ))
    return state


def accuracy_and_macro_f1(pred: np.ndarray, labels: np.ndarray,
                          mask: np.ndarray, class_count: int) -> tuple[float, float]:
    """Accuracy and unweighted mean per-class F1 over the masked nodes.

    Classes with no true and no predicted instances in the split score 0.
    """
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty evaluation split")
    y = labels[idx]
    p = pred[idx]
    accuracy = float(np.mean(p == y))
    f1s = []
    for c in range(class_count):
        tp = float(np.sum((p == c) & (y == c)))
        fp = float(np.sum((p == c) & (y != c)))
        fn = float(np.sum((p != c) & (y == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return accuracy, float(np.mean(f1s))


def evaluate(state: TrainState, data, split: str) -> tuple[float, float]:
    """Deterministic evaluation (code = posterior mean, no dropout)."""
    labels = data.labels
    mask = {"val": labels.val_mask, "test": labels.test_mask,
            "train": labels.train_mask}.get(split)
    if mask is None:
        raise ValueError(f"unknown split {split!r}")
    tape = Tape()
    out = state.model.forward(tape, data.features,
                              tape.constant(state.kappa_for(state.a_star)),
                              state.a_star, state.transform, training=False)
    pred = out.logits.data.argmax(axis=1)
    return accuracy_and_macro_f1(pred, labels.labels, mask, labels.class_count())


def train(cfg: TrainConfig, data, callback: Callable[[TrainState], None] | None = None,
          state: TrainState | None = None) -> TrainState:
    """Full bi-level run with early stopping on validation accuracy.

    Passing a resumed `state` continues exactly where it stopped; the
    keyed random streams make the continuation identical to an
    uninterrupted run.
    """
    if state is None:
        state = initialize(cfg, data)
    while state.epoch < cfg.outer_epochs:
        phase1_representation(state, data)
        phase2_refinement(state, data)
        outer_step(state, data)
        row = state.metrics[-1]
        if row.accuracy_val >= state.best_val:
            # ties keep the most recent checkpoint: with a small validation
            # split the accuracy plateaus early and the first peak is by far
            # the least-trained model among equals
            if row.accuracy_val > state.best_val:
                state.stale = 0
            else:
                state.stale += 1
            state.best_val = row.accuracy_val
            state.best_epoch = state.epoch
            state.snapshot_best()
        else:
            state.stale += 1
        if callback is not None:
            callback(state)
        state.epoch += 1
        if state.stale >= cfg.patience:
            break
    state.restore_best()
    return state


def run_single(cfg: TrainConfig, data, seed: int) -> dict:
    """One full run at the given seed; returns summary metrics."""
    run_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": seed})
    state = train(run_cfg, data)
    test_acc, test_f1 = evaluate(state, data, "test")
    val_acc, val_f1 = evaluate(state, data, "val")
    return {
        "seed": seed,
        "test_accuracy": test_acc,
        "test_macro_f1": test_f1,
        "val_accuracy": val_acc,
        "val_macro_f1": val_f1,
        "epochs_run": len(state.metrics),
        "best_epoch": state.best_epoch,
        "metrics": [asdict(row) for row in state.metrics],
        "state": state,
    }


def summarize(per_seed: list[dict], keys=("test_accuracy", "test_macro_f1")) -> dict:
    """Mean and sample standard deviation per metric (std 0 for one seed)."""
    summary = {}
    for key in keys:
        values = np.array([r[key] for r in per_seed])
        summary[f"{key}_mean"] = float(values.mean())
        summary[f"{key}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    summary["seeds"] = [r["seed"] for r in per_seed]
    return summary


def run_experiment(cfg: TrainConfig, data, replicate_seeds, jobs: int = 1) -> dict:
    """Independent full runs per seed; failures are reported, not fatal."""
    replicate_seeds = list(replicate_seeds)
    if not replicate_seeds:
        raise ValueError("need at least one seed")
    results: list[dict] = []
    failures: list[dict] = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {seed: pool.submit(_run_single_result, cfg, data, seed)
                       for seed in replicate_seeds}
            for seed in replicate_seeds:
                try:
                    results.append(futures[seed].result())
                except Exception as exc:  # noqa: BLE001 - per-seed isolation
                    failures.append({"seed": seed, "error": str(exc)})
    else:
        for seed in replicate_seeds:
            try:
                results.append(run_single(cfg, data, seed))
            except Exception as exc:  # noqa: BLE001 - per-seed isolation
                failures.append({"seed": seed, "error": str(exc)})
    if not results:
        raise RuntimeError(f"all seeds failed: {failures}")
    summary = summarize(results)
    summary["failures"] = failures
    return {"per_seed": results, "summary": summary}


def _run_single_result(cfg: TrainConfig, data, seed: int) -> dict:
    result = run_single(cfg, data, seed)
    result = dict(result)
    result.pop("state")  # not picklable across processes cheaply
    return result
