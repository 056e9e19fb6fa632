"""Dataset loading and validation, split construction, and run artifact
persistence (checkpoints, metrics CSV, manifests) with content-hash gating.

File formats:
  edge list  - text, one "i j" pair per line, 0-based, '#' comments
  features   - CSV, N rows x M columns, no header
  labels     - CSV with header node_id,label,split; split in {train,val,test}
  metrics    - CSV, header epoch,prediction,compression,structure,ibcurv,
               total,accuracy_val; 12 significant digits
  manifest   - JSON with config echo, input hashes, output paths, version
  checkpoint - the binary parameter format from curvib.autodiff
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .autodiff import Parameter, read_parameter_file, save_parameters
from .graph import Graph, LabelSet, build_graph, sbm_generate

FLOAT_FMT = "%.12g"


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class DatasetBundle:
    graph: Graph
    features: np.ndarray
    labels: LabelSet
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)

    def validate(self) -> "DatasetBundle":
        n = self.graph.node_count
        if self.features.shape[0] != n:
            raise DataError(f"feature rows ({self.features.shape[0]}) != nodes ({n})")
        if self.labels.labels.shape[0] != n:
            raise DataError(f"label rows ({self.labels.labels.shape[0]}) != nodes ({n})")
        if not np.isfinite(self.features).all():
            raise DataError("features contain non-finite entries")
        self.labels.validate()
        return self


def content_hash64(path) -> str:
    """64-bit blake2b digest of a file, hex-encoded (documented hash)."""
    digest = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 16):
            digest.update(chunk)
    return digest.hexdigest()


# -- readers / writers -----------------------------------------------------


def read_edge_list(path, node_count: int | None = None) -> list[tuple[int, int]]:
    """Parse an edge-list file; with node_count given, range-check each line."""
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node id in {line!r}")
            if node_count is not None and not (0 <= i < node_count and 0 <= j < node_count):
                raise DataError(f"{path}:{lineno}: edge ({i}, {j}) references a "
                                f"node outside the {node_count}-node feature file")
            edges.append((i, j))
    return edges


def write_edge_list(edges, path) -> None:
    with open(path, "w") as fh:
        for i, j in edges:
            fh.write(f"{i} {j}\n")


def read_features(path) -> np.ndarray:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}")
    return values


def write_features(values: np.ndarray, path) -> None:
    np.savetxt(path, values, delimiter=",", fmt=FLOAT_FMT)


def read_labels(path, node_count: int) -> LabelSet:
    labels = np.full(node_count, -1, dtype=np.int64)
    masks = {"train": np.zeros(node_count, dtype=bool),
             "val": np.zeros(node_count, dtype=bool),
             "test": np.zeros(node_count, dtype=bool)}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "node_id,label,split":
            raise DataError(f"{path}:1: expected header node_id,label,split")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns")
            try:
                node = int(parts[0])
                label = int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node or label")
            if not 0 <= node < node_count:
                raise DataError(f"{path}:{lineno}: node {node} out of range")
            split = parts[2]
            if split not in masks:
                raise DataError(f"{path}:{lineno}: unknown split token {split!r}")
            labels[node] = label
            masks[split][node] = True
    if np.any(labels < 0):
        missing = int(np.flatnonzero(labels < 0)[0])
        raise DataError(f"{path}: node {missing} has no label row")
    return LabelSet(labels=labels, train_mask=masks["train"],
                    val_mask=masks["val"], test_mask=masks["test"])


def write_labels(labels: LabelSet, path) -> None:
    with open(path, "w") as fh:
        fh.write("node_id,label,split\n")
        split = np.where(labels.train_mask, "train",
                         np.where(labels.val_mask, "val", "test"))
        for node, (label, token) in enumerate(zip(labels.labels, split)):
            fh.write(f"{node},{label},{token}\n")


def load_dataset(edge_path, feature_path, label_path, name: str = "dataset") -> DatasetBundle:
    """Load and cross-validate the three on-disk pieces of a dataset.

    Node count comes from the feature rows; stray edge indices and unknown
    split tokens are rejected with the offending line reported.
    """
    features = read_features(feature_path)
    node_count = features.shape[0]
    raw_edges = read_edge_list(edge_path, node_count=node_count)
    graph = build_graph(raw_edges, node_count)
    labels = read_labels(label_path, node_count)
    provenance = {str(p): content_hash64(p)
                  for p in (edge_path, feature_path, label_path)}
    return DatasetBundle(graph=graph, features=features, labels=labels,
                         name=name, provenance=provenance).validate()


def make_planetoid_splits(labels: np.ndarray, per_class_train: int = 20,
                          val_size: int = 500, test_size: int = 1000,
                          seed: int = 0) -> LabelSet:
    """Standard citation-benchmark protocol: a fixed number of training
    nodes per class, then val/test drawn from the remainder."""
    from . import _streams

    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    rng = _streams.substream(seed, _streams.SPLITS)
    train = np.zeros(n, dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < per_class_train:
            raise DataError(f"class {c} has only {idx.size} nodes "
                            f"(< {per_class_train} required for train)")
        chosen = rng.choice(idx, size=per_class_train, replace=False)
        train[chosen] = True
    rest = np.flatnonzero(~train)
    rest = rest[rng.permutation(rest.size)]
    if rest.size < val_size + test_size:
        raise DataError("not enough nodes left for val and test splits")
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:val_size]] = True
    test[rest[val_size:val_size + test_size]] = True
    out = LabelSet(labels=labels, train_mask=train, val_mask=val, test_mask=test)
    out.validate()
    return out


def parse_dataset_reference(ref: str) -> DatasetBundle:
    """Materialize a dataset from its config reference.

    "sbm:<sizes>:<p_in>:<p_out>:<dim>:<noise>[:<seed>]" generates a block
    model; "files:<edges>:<features>:<labels>" loads from disk.
    """
    kind, _, rest = ref.partition(":")
    if kind == "sbm":
        parts = rest.split(":")
        if len(parts) not in (5, 6):
            raise DataError(f"bad sbm reference {ref!r}")
        sizes = [int(s) for s in parts[0].split(",")]
        p_in, p_out = float(parts[1]), float(parts[2])
        dim, noise = int(parts[3]), float(parts[4])
        seed = int(parts[5]) if len(parts) == 6 else 0
        g, x, labels = sbm_generate(sizes, p_in, p_out, dim, noise, seed)
        return DatasetBundle(graph=g, features=x, labels=labels, name=ref,
                             provenance={"reference": ref})
    if kind == "files":
        parts = rest.split(":")
        if len(parts) != 3:
            raise DataError(f"bad files reference {ref!r}")
        return load_dataset(parts[0], parts[1], parts[2], name=ref)
    raise DataError(f"unknown dataset reference kind {kind!r}")


# -- manifest ---------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    input_hashes: dict
    outputs: dict
    version: str = __version__
    created: str = ""
    status: str = "complete"

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "input_hashes": self.input_hashes,
             "outputs": self.outputs, "version": self.version,
             "created": self.created, "status": self.status},
            indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        raw = json.loads(text)
        return cls(config=raw["config"], input_hashes=raw["input_hashes"],
                   outputs=raw["outputs"], version=raw["version"],
                   created=raw["created"], status=raw["status"])

    @classmethod
    def fresh(cls, config: dict, input_hashes: dict | None = None) -> "RunManifest":
        return cls(config=config, input_hashes=dict(input_hashes or {}),
                   outputs={}, created=time.strftime("%Y-%m-%dT%H:%M:%S"),
                   status="running")


def write_metrics_csv(rows, path) -> None:
    from .train import MetricsRow

    with open(path, "w") as fh:
        fh.write(",".join(MetricsRow.CSV_COLUMNS) + "\n")
        for row in rows:
            values = row.csv_values()
            fh.write(f"{values[0]},"
                     + ",".join(FLOAT_FMT % v for v in values[1:]) + "\n")


def read_metrics_csv(path) -> list[dict]:
    from .train import MetricsRow

    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != MetricsRow.CSV_COLUMNS:
            raise DataError(f"{path}: unexpected metrics header {header}")
        for line in fh:
            parts = line.strip().split(",")
            rows.append({"epoch": int(parts[0]),
                         **{k: float(v) for k, v in zip(header[1:], parts[1:])}})
    return rows


def write_curvature_csv(values: dict, path) -> None:
    """Per-edge kappa rows (src,dst,kappa) in canonical edge order."""
    with open(path, "w") as fh:
        fh.write("src,dst,kappa\n")
        for (i, j) in sorted(values):
            fh.write(f"{i},{j}," + (FLOAT_FMT % values[(i, j)]) + "\n")


def write_histogram_csv(kappas: np.ndarray, path, bins: int = 40) -> None:
    """Binned curvature counts over [min(kappa), 1] (bin_left,bin_right,count)."""
    kappas = np.asarray(kappas, dtype=np.float64)
    lo = float(kappas.min()) if kappas.size else 0.0
    hi = 1.0
    if lo >= hi:
        lo = hi - 1.0
    counts, edges = np.histogram(kappas, bins=bins, range=(lo, hi))
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for k in range(bins):
            fh.write((FLOAT_FMT % edges[k]) + "," + (FLOAT_FMT % edges[k + 1])
                     + f",{counts[k]}\n")


def write_probabilities_csv(candidates, pi_values: np.ndarray, kept_edges, path) -> None:
    kept = set(kept_edges)
    with open(path, "w") as fh:
        fh.write("src,dst,pi,kept\n")
        for pair, p in zip(candidates.pairs, np.asarray(pi_values).reshape(-1)):
            fh.write(f"{pair[0]},{pair[1]}," + (FLOAT_FMT % p)
                     + f",{int(pair in kept)}\n")


# -- train-state persistence -------------------------------------------------

CHECKPOINT = "checkpoint.bin"
METRICS = "metrics.csv"
MANIFEST = "manifest.json"


def _edges_to_array(pairs) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2))
    return np.asarray(pairs, dtype=np.float64)


def _array_to_edges(arr: np.ndarray) -> tuple[tuple[int, int], ...]:
    return tuple((int(i), int(j)) for i, j in np.asarray(arr).reshape(-1, 2))


def _state_blob(state) -> list[Parameter]:
    """Flatten a TrainState into named arrays in the checkpoint format."""
    blob: list[Parameter] = list(state.parameters())
    for tag, opt in (("repr", state.opt_repr), ("struct", state.opt_struct),
                     ("joint", state.opt_joint)):
        blob.append(Parameter(f"opt.{tag}.t", [[float(opt.t)]]))
        for p, m, v in zip(opt.params, opt.m, opt.v):
            blob.append(Parameter(f"opt.{tag}.m.{p.name}", m))
            blob.append(Parameter(f"opt.{tag}.v.{p.name}", v))
    blob.append(Parameter("state.epoch", [[float(state.epoch)]]))
    blob.append(Parameter("state.best_val", [[state.best_val]]))
    blob.append(Parameter("state.best_epoch", [[float(state.best_epoch)]]))
    blob.append(Parameter("state.stale", [[float(state.stale)]]))
    blob.append(Parameter("state.last_structure_loss",
                          [[state.last_structure_loss]]))
    blob.append(Parameter("state.a_star", _edges_to_array(state.a_star.edges)))
    blob.append(Parameter("state.kappa", state.kappa.reshape(-1, 1)))
    metrics = np.array([[r.epoch, r.prediction, r.compression, r.structure,
                         r.ibcurv, r.total, r.accuracy_val, r.macro_f1_val,
                         r.wall_time] for r in state.metrics]).reshape(-1, 9)
    blob.append(Parameter("state.metrics", metrics if metrics.size else np.zeros((0, 9))))
    for name, value in state.best_params.items():
        blob.append(Parameter(f"best.{name}", value))
    if state.best_a_star is not None:
        blob.append(Parameter("best.a_star", _edges_to_array(state.best_a_star.edges)))
        blob.append(Parameter("best.kappa", state.best_kappa.reshape(-1, 1)))
    return blob


def save_artifacts(state, manifest: RunManifest, out_dir) -> None:
    """Write checkpoint, metrics CSV and manifest into out_dir.

    Rewriting an unchanged state produces byte-identical files (the
    manifest is written exactly as given).
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, CHECKPOINT)
    save_parameters(_state_blob(state), ckpt)
    write_metrics_csv(state.metrics, os.path.join(out_dir, METRICS))
    manifest.outputs = {**manifest.outputs,
                        "checkpoint": CHECKPOINT, "metrics": METRICS}
    manifest.input_hashes = {**manifest.input_hashes,
                             "checkpoint": content_hash64(ckpt)}
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        fh.write(manifest.to_json())


def load_artifacts(run_dir, data: DatasetBundle | None = None):
    """Rebuild (state, manifest) from a run directory.

    The checkpoint's stored hash must match the file on disk; pass `data`
    to skip re-materializing the dataset from its config reference.
    """
    from .graph import Graph
    from .train import MetricsRow, TrainConfig, TrainState, initialize

    with open(os.path.join(run_dir, MANIFEST)) as fh:
        manifest = RunManifest.from_json(fh.read())
    cfg = TrainConfig.from_dict(manifest.config)
    ckpt = os.path.join(run_dir, CHECKPOINT)
    stored_hash = manifest.input_hashes.get("checkpoint")
    if stored_hash is not None and content_hash64(ckpt) != stored_hash:
        raise DataError(f"{ckpt}: content hash mismatch (checkpoint tampered "
                        "or dataset drifted)")
    if data is None:
        data = parse_dataset_reference(cfg.dataset)
    state = initialize(cfg, data)
    stored = read_parameter_file(ckpt)
    for p in state.parameters():
        p.value[:] = stored[p.name]
    for tag, opt in (("repr", state.opt_repr), ("struct", state.opt_struct),
                     ("joint", state.opt_joint)):
        opt.t = int(stored[f"opt.{tag}.t"][0, 0])
        for k, p in enumerate(opt.params):
            opt.m[k][:] = stored[f"opt.{tag}.m.{p.name}"]
            opt.v[k][:] = stored[f"opt.{tag}.v.{p.name}"]
    state.epoch = int(stored["state.epoch"][0, 0])
    state.best_val = float(stored["state.best_val"][0, 0])
    state.best_epoch = int(stored["state.best_epoch"][0, 0])
    state.stale = int(stored["state.stale"][0, 0])
    state.last_structure_loss = float(stored["state.last_structure_loss"][0, 0])
    state.a_star = build_graph(_array_to_edges(stored["state.a_star"]),
                               state.original.node_count)
    state.kappa = stored["state.kappa"][:, 0].copy()
    state.metrics = [MetricsRow(epoch=int(r[0]), prediction=r[1], compression=r[2],
                                structure=r[3], ibcurv=r[4], total=r[5],
                                accuracy_val=r[6], macro_f1_val=r[7], wall_time=r[8])
                     for r in stored["state.metrics"]]
    if "best.a_star" in stored:
        state.best_params = {p.name: stored[f"best.{p.name}"].copy()
                             for p in state.parameters()
                             if f"best.{p.name}" in stored}
        state.best_a_star = build_graph(_array_to_edges(stored["best.a_star"]),
                                        state.original.node_count)
        state.best_kappa = stored["best.kappa"][:, 0].copy()
    return state, manifest, data
