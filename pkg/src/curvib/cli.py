"""Command-line entry point.

Subcommands: curvature, train, rewire, denoise-bench, gradcheck, report.
Every run writes a manifest.json echoing its configuration. Exit codes:
0 ok, 2 usage error, 3 data error, 4 numeric abort.

Config files are flat "key = value" text; command-line overrides win.
The default output directory can be set via CURVIB_OUT_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .autodiff import NonFiniteError, Tape
from .baselines import evaluate_plain_gcn, train_plain_gcn
from .curvature import ollivier_ricci
from .data import (DataError, DatasetBundle, RunManifest, content_hash64,
                   load_artifacts, parse_dataset_reference, read_edge_list,
                   read_features, read_metrics_csv, save_artifacts,
                   write_curvature_csv, write_edge_list, write_histogram_csv,
                   write_metrics_csv, write_probabilities_csv)
from .graph import build_graph, inject_noise, mass_matrix
from .ibcurv import ib_curvature
from .refine import EdgeProbabilities, ricci_flow_step
from .train import (MetricsRow, TrainConfig, TrainingAbort, evaluate,
                    run_single, summarize, train)

USAGE_ERROR = 2
DATA_ERROR = 3
NUMERIC_ERROR = 4


class UsageError(ValueError):
    pass


def _out_dir(args) -> str:
    out = args.out or os.environ.get("CURVIB_OUT_DIR")
    if not out:
        raise UsageError("no output directory: pass --out or set CURVIB_OUT_DIR")
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir: str, manifest: RunManifest) -> None:
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())


def parse_config_file(path) -> dict:
    """Flat key = value lines, '#' comments, typed against TrainConfig."""
    fields = TrainConfig.__dataclass_fields__
    raw: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in fields:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            raw[key] = _coerce(key, value, fields[key].type)
    return raw


def _coerce(key: str, value: str, type_name: str):
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    if type_name == "bool":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {value!r}")
    return value


def build_train_config(args) -> TrainConfig:
    raw = parse_config_file(args.config) if args.config else {}
    for key in TrainConfig.__dataclass_fields__:
        override = getattr(args, f"cfg_{key}", None)
        if override is not None:
            raw[key] = override
    if "dataset" not in raw:
        raise UsageError("config is missing required key: dataset")
    try:
        return TrainConfig.from_dict(raw)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc))


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    types = {"int": int, "float": float, "str": str, "bool": lambda s: s.lower() in ("true", "1", "yes")}
    for key, field in TrainConfig.__dataclass_fields__.items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{key}",
                            type=types.get(field.type, str), default=None,
                            help=f"override config key {key}")


# -- curvature ---------------------------------------------------------------


def cmd_curvature(args) -> int:
    out = _out_dir(args)
    edges = read_edge_list(args.edges)
    if args.features:
        node_count = read_features(args.features).shape[0]
    else:
        node_count = max((max(i, j) for i, j in edges), default=-1) + 1
    g = build_graph(edges, node_count)
    if g.edge_count() == 0:
        raise DataError("graph has no edges; nothing to report")

    if args.method == "exact":
        result = ollivier_ricci(g, alpha=args.alpha, radius_cap=args.radius_cap,
                                jobs=args.jobs)
        values = result.values
    else:
        if not (args.features and args.checkpoint):
            raise UsageError("surrogate curvature needs --features and --checkpoint")
        state, _, _ = load_artifacts(args.checkpoint)
        features = read_features(args.features)
        if features.shape[0] != g.node_count:
            raise DataError("feature rows do not match the edge list's node count")
        if features.shape[1] != state.model.w_in.shape[0]:
            raise DataError("feature width does not match the checkpointed encoder")
        tape = Tape()
        uniform = tape.constant(np.ones((g.edge_count(), 1)))
        enc = state.model.forward(tape, features, uniform, g, state.transform,
                                  training=False)
        kappa = ib_curvature(mass_matrix(g, args.alpha), enc.mu, state.head,
                             state.metric_cfg, g.edges)
        values = kappa.as_dict()
        with open(os.path.join(out, "metadata.json"), "w") as fh:
            json.dump({"method": "surrogate", "alpha": args.alpha,
                       "checkpoint": os.path.abspath(args.checkpoint)}, fh, indent=2)

    write_curvature_csv(values, os.path.join(out, "curvature.csv"))
    write_histogram_csv(np.array(list(values.values())),
                        os.path.join(out, "histogram.csv"))
    manifest = RunManifest.fresh(
        {"command": "curvature", "edges": os.path.abspath(args.edges),
         "alpha": args.alpha, "method": args.method,
         "radius_cap": args.radius_cap},
        {"edges": content_hash64(args.edges)})
    manifest.outputs = {"curvature": "curvature.csv", "histogram": "histogram.csv"}
    manifest.status = "complete"
    _write_manifest(out, manifest)
    return 0


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = build_train_config(args)
    data = parse_dataset_reference(cfg.dataset)
    manifest = RunManifest.fresh(cfg.to_dict(), dict(data.provenance))
    _write_manifest(out, manifest)  # status: running

    if args.seeds > 1:
        seeds = [cfg.seed + k for k in range(args.seeds)]
        per_seed = []
        for seed in seeds:
            result = run_single(cfg, data, seed)
            write_metrics_csv(result["state"].metrics,
                              os.path.join(out, f"metrics_seed{seed}.csv"))
            per_seed.append({k: v for k, v in result.items() if k != "state"})
        summary = summarize(per_seed)
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump({"summary": summary,
                       "per_seed": [{k: v for k, v in r.items() if k != "metrics"}
                                    for r in per_seed]}, fh, indent=2)
        manifest.outputs = {"summary": "summary.json",
                            "metrics": [f"metrics_seed{s}.csv" for s in seeds]}
        manifest.status = "complete"
        _write_manifest(out, manifest)
        return 0

    state = train(cfg, data)
    test_acc, test_f1 = evaluate(state, data, "test")
    manifest.status = "complete"
    save_artifacts(state, manifest, out)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump({"test_accuracy": test_acc, "test_macro_f1": test_f1,
                   "best_epoch": state.best_epoch,
                   "epochs_run": len(state.metrics)}, fh, indent=2)
    return 0


# -- rewire ------------------------------------------------------------------


def cmd_rewire(args) -> int:
    out = _out_dir(args)
    state, run_manifest, data = load_artifacts(args.run)
    tape = Tape()
    enc = state.model.forward(tape, data.features,
                              tape.constant(state.kappa_for(state.a_star)),
                              state.a_star, state.transform, training=False)
    kappa = ib_curvature(mass_matrix(state.a_star, state.cfg.alpha), enc.mu,
                         state.head, state.metric_cfg, state.candidates)
    flow = ricci_flow_step(kappa, enc.mu, state.metric_cfg, state.candidates)
    pi = EdgeProbabilities.from_flow(flow)
    write_edge_list(state.a_star.edges, os.path.join(out, "refined_edges.txt"))
    write_probabilities_csv(state.candidates, pi.values.data,
                            state.a_star.edges,
                            os.path.join(out, "probabilities.csv"))
    manifest = RunManifest.fresh({"command": "rewire",
                                  "run": os.path.abspath(args.run),
                                  "train_config": run_manifest.config})
    manifest.outputs = {"edges": "refined_edges.txt",
                        "probabilities": "probabilities.csv"}
    manifest.status = "complete"
    _write_manifest(out, manifest)
    return 0


# -- denoise bench -------------------------------------------------------------


def _replicate_dataset(reference: str, seed: int) -> DatasetBundle:
    """Fresh replicate per seed for unseeded sbm references; otherwise fixed."""
    if reference.startswith("sbm:") and len(reference.split(":")) == 6:
        return parse_dataset_reference(f"{reference}:{seed}")
    return parse_dataset_reference(reference)


def cmd_denoise_bench(args) -> int:
    out = _out_dir(args)
    cfg = build_train_config(args)
    ratios = [float(r) for r in args.ratios.split(",")]
    modes = args.modes.split(",")
    for mode in modes:
        if mode not in ("add", "remove", "mixed"):
            raise UsageError(f"unknown noise mode {mode!r}")
    if args.seeds < 1:
        raise UsageError("need at least one seed")
    seeds = [cfg.seed + k for k in range(args.seeds)]

    bundles = {seed: _replicate_dataset(cfg.dataset, seed) for seed in seeds}
    rows = []
    for ratio in ratios:
        for mode in modes:
            cell = {"curvib": [], args.baseline: []}
            for seed in seeds:
                base = bundles[seed]
                noisy_graph = inject_noise(base.graph, ratio, mode, seed=seed)
                data = DatasetBundle(graph=noisy_graph, features=base.features,
                                     labels=base.labels, name=base.name)
                cell["curvib"].append(
                    run_single(cfg, data, seed)["test_accuracy"])
                model, _ = train_plain_gcn(
                    data.graph, data.features, data.labels,
                    hidden_dim=cfg.hidden_dim, depth=cfg.depth,
                    dropout_rate=cfg.dropout_rate,
                    epochs=6 * cfg.outer_epochs, lr=cfg.learning_rate,
                    patience=2 * cfg.patience, seed=seed)
                acc, _ = evaluate_plain_gcn(model, data.graph, data.features,
                                            data.labels, data.labels.test_mask)
                cell[args.baseline].append(acc)
            for method, accs in cell.items():
                accs = np.array(accs)
                rows.append((ratio, mode, method, float(accs.mean()),
                             float(accs.std(ddof=1)) if len(accs) > 1 else 0.0))

    path = os.path.join(out, "denoise_bench.csv")
    with open(path, "w") as fh:
        fh.write("ratio,mode,method,mean_accuracy,std_accuracy\n")
        for ratio, mode, method, mean, std in rows:
            fh.write(f"{ratio:g},{mode},{method},%.12g,%.12g\n" % (mean, std))
    manifest = RunManifest.fresh({"command": "denoise-bench", **cfg.to_dict(),
                                  "ratios": ratios, "modes": modes,
                                  "replicates": args.seeds,
                                  "baseline": args.baseline})
    manifest.outputs = {"bench": "denoise_bench.csv"}
    manifest.status = "complete"
    _write_manifest(out, manifest)
    return 0


# -- gradcheck -----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    from .gradchecks import run_all

    out = _out_dir(args)
    results = run_all(seeds=range(args.seeds), step=args.step)
    failed = {k: v for k, v in results.items() if v > args.tolerance}
    for name, err in results.items():
        status = "ok" if err <= args.tolerance else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
    manifest = RunManifest.fresh({"command": "gradcheck", "seeds": args.seeds,
                                  "step": args.step, "tolerance": args.tolerance})
    manifest.outputs = {"results": "gradcheck.json"}
    manifest.status = "complete" if not failed else "failed"
    with open(os.path.join(out, "gradcheck.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    _write_manifest(out, manifest)
    return 0 if not failed else NUMERIC_ERROR


# -- report --------------------------------------------------------------------


def cmd_report(args) -> int:
    out = _out_dir(args)
    run = args.run
    manifest_path = os.path.join(run, "manifest.json")
    status = "missing-manifest"
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            status = RunManifest.from_json(fh.read()).status
    seed_files = sorted(f for f in os.listdir(run)
                        if f.startswith("metrics_seed") and f.endswith(".csv"))
    single = os.path.join(run, "metrics.csv")
    sources = ([os.path.join(run, f) for f in seed_files]
               if seed_files else ([single] if os.path.exists(single) else []))
    if not sources:
        raise DataError(f"{run}: no metrics CSVs found")
    series = [read_metrics_csv(path) for path in sources]

    curve_path = os.path.join(out, "learning_curve.csv")
    with open(curve_path, "w") as fh:
        names = [os.path.splitext(os.path.basename(p))[0] for p in sources]
        fh.write("epoch,total_mean," + ",".join(f"total_{n}" for n in names) + "\n")
        depth = max(len(s) for s in series)
        for k in range(depth):
            totals = [s[k]["total"] for s in series if len(s) > k]
            row = [str(k), "%.12g" % float(np.mean(totals))]
            for s in series:
                row.append("%.12g" % s[k]["total"] if len(s) > k else "")
            fh.write(",".join(row) + "\n")

    final_acc = [s[-1]["accuracy_val"] for s in series]
    final_total = [s[-1]["total"] for s in series]
    summary_lines = [
        f"run: {os.path.abspath(run)}",
        f"status: {status}" + ("" if status == "complete" else "  [INCOMPLETE RUN]"),
        f"series: {len(series)}",
        f"epochs: {[len(s) for s in series]}",
        "final_total_mean: %.12g" % float(np.mean(final_total)),
        "final_val_accuracy_mean: %.12g" % float(np.mean(final_acc)),
        "final_val_accuracy_std: %.12g" % (float(np.std(final_acc, ddof=1))
                                           if len(final_acc) > 1 else 0.0),
    ]
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary_lines) + "\n")
    print("\n".join(summary_lines))
    manifest = RunManifest.fresh({"command": "report", "run": os.path.abspath(run)})
    manifest.outputs = {"curve": "learning_curve.csv", "summary": "summary.txt"}
    manifest.status = "complete"
    _write_manifest(out, manifest)
    return 0


# -- parser --------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvib",
        description="Curvature-guided graph learning with a variational "
                    "information bottleneck.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curvature", help="per-edge curvature CSV + histogram")
    p.add_argument("--edges", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--method", choices=("exact", "surrogate"), default="exact")
    p.add_argument("--features")
    p.add_argument("--checkpoint", help="training run directory (surrogate)")
    p.add_argument("--radius-cap", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_curvature)

    p = sub.add_parser("train", help="full bi-level training run")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seeds", type=int, default=1,
                   help="replicate seeds (seed, seed+1, ...)")
    p.add_argument("--out")
    _add_config_overrides(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rewire", help="export the refined structure of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_rewire)

    p = sub.add_parser("denoise-bench", help="noise-robustness comparison grid")
    p.add_argument("--config")
    p.add_argument("--ratios", default="0,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--modes", default="add,remove")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--baseline", choices=("gcn",), default="gcn")
    p.add_argument("--out")
    _add_config_overrides(p)
    p.set_defaults(fn=cmd_denoise_bench)

    p = sub.add_parser("gradcheck", help="gradient integrity checks")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("report", help="plot-ready learning curves + summary")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (TrainingAbort, NonFiniteError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
