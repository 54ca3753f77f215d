"""Command-line entry point: gen, train, eval, ablate, sweep, gradcheck, features.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .data import (DataError, PdaDataset, generate_synthetic_pda, load_dataset, save_dataset,
                   standardize, write_feature_csv, write_manifest)
from .gradcheck import TERMS, grad_check_suite
from .networks import features, load_checkpoint, save_checkpoint
from .schedules import estimate_class_weights, write_weight_trace
from .trainer import (ABLATION_ROWS, SWEEP_AXES, TrainConfig, TrainingDiverged, ablation_suite,
                      aggregate, confusion_matrix, evaluate, sweep, train, weight_alignment)

log = logging.getLogger("partialda")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(out: Path, command: str, config: dict, artifacts: dict, started: float,
              dataset: Optional[PdaDataset] = None) -> Path:
    artifacts = {k: str(v) for k, v in artifacts.items()}
    for k, v in artifacts.items():
        if not Path(v).exists():
            raise RuntimeError(f"manifest artifact {k} missing: {v}")
    payload = {
        "command": command,
        "config": config,
        "artifacts": artifacts,
        "hashes": {k: _sha256(Path(v)) for k, v in artifacts.items() if Path(v).is_file()},
        "versions": {"partialda": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "timings": {"wall_seconds": round(time.time() - started, 3)},
    }
    if dataset is not None:
        payload["dataset_fingerprint"] = dataset.fingerprint()
    path = out / "manifest.json"
    write_manifest(path, payload)
    return path


# -- argument plumbing -----------------------------------------------------------

_TRAIN_FLAGS = {
    # flag: (config field, type)
    "mode": ("mode", str), "iters": ("n_iters", int), "interval": ("interval", int),
    "batch": ("batch_size", int), "rho0": ("rho0", float), "xi": ("xi", float),
    "alpha": ("alpha", float), "beta": ("beta", float), "seed": ("seed", int),
    "gamma": ("gamma", float), "lr0": ("lr0", float),
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of TrainConfig fields; flags override it")
    p.add_argument("--mode", choices=("edann", "baa", "full"))
    p.add_argument("--iters", type=int, help="total iterations N (default 2000)")
    p.add_argument("--interval", type=int, help="weight-update interval N_u (default 200)")
    p.add_argument("--batch", type=int, help="batch size B_s (default 36)")
    p.add_argument("--rho0", type=float, help="initial augmentation ratio (default 0.25)")
    p.add_argument("--xi", type=float, help="confidence exponent (default 1)")
    p.add_argument("--alpha", type=float, help="target entropy weight (default 0.1)")
    p.add_argument("--beta", type=float,
                   help="complement entropy weight (default 5 when C <= 31, else 1)")
    p.add_argument("--gamma", type=float, help="lambda ramp rate (default 10)")
    p.add_argument("--lr0", type=float, help="base learning rate (default 0.01)")
    p.add_argument("--seed", type=int)
    p.add_argument("--literal-rho", action="store_true", default=None,
                   help="hold rho at rho0*(1 - N_u/N) after the first update")
    p.add_argument("--no-standardize", action="store_true", default=None)


def _train_config(args) -> TrainConfig:
    """Defaults < JSON config file < command-line flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    for flag, (name, _) in _TRAIN_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "literal_rho", None):
        values["literal_rho"] = True
    if getattr(args, "no_standardize", None):
        values["standardize"] = False
    try:
        return TrainConfig(**values).validate()
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _add_data_flags(p: argparse.ArgumentParser, eval_labels: bool = True) -> None:
    p.add_argument("--data", type=Path, help="directory holding source.csv and target.csv")
    p.add_argument("--source", type=Path)
    p.add_argument("--target", type=Path)
    if eval_labels:
        p.add_argument("--eval-labels", type=Path,
                       help="index,label file; only read for evaluation")


def _load_data(args, want_labels: bool) -> PdaDataset:
    src, tgt = args.source, args.target
    labels = getattr(args, "eval_labels", None)
    if args.data is not None:
        src = src or args.data / "source.csv"
        tgt = tgt or args.data / "target.csv"
        if want_labels and labels is None and (args.data / "eval-labels.csv").exists():
            labels = args.data / "eval-labels.csv"
    if src is None or tgt is None:
        raise UsageError("give --data DIR or both --source and --target")
    for path in (src, tgt) + ((labels,) if labels else ()):
        if not Path(path).exists():
            raise UsageError(f"missing file: {path}")
    return load_dataset(src, tgt, labels if want_labels else None)


def _write_csv(path: Path, rows: List[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow(r)


# -- commands ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    started = time.time()
    try:
        ds = generate_synthetic_pda(args.classes, args.shared, args.dim, args.n, args.shift,
                                    args.rotation, args.seed, args.separation, args.layout)
    except DataError as e:
        raise UsageError(str(e)) from None
    out = args.out
    try:
        paths = save_dataset(ds, out)
    except OSError as e:
        raise UsageError(f"cannot write to {out}: {e}") from None
    _manifest(out, "gen", ds.meta, paths, started, ds)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _interval_accuracies(result, ds: PdaDataset, standardized: bool) -> List[float]:
    return [evaluate(ck, ds, standardized) for ck in result.checkpoints]


def cmd_train(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    ds = _load_data(args, want_labels=True)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        # the trainer only ever sees the label-free view
        view = (standardize(ds) if cfg.standardize else ds).training_view()
        result = train(view, cfg)
    except TrainingDiverged as e:
        (out / "diverged.json").write_text(json.dumps(e.snapshot, indent=2))
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    ck_dir = out / "checkpoints"
    ck_dir.mkdir(exist_ok=True)
    extra = {"standardize": cfg.standardize, "config": result.config.to_dict()}
    artifacts = {"final": ck_dir / "final.json", "selected": ck_dir / "selected.json",
                 "intervals": out / "intervals.jsonl", "m_trace": out / "m-trace.csv",
                 "summary": out / "summary.json"}
    save_checkpoint(result.final, artifacts["final"], extra)
    save_checkpoint(result.selected, artifacts["selected"], extra)
    for k, ck in enumerate(result.checkpoints):
        save_checkpoint(ck, ck_dir / f"interval_{k:02d}.json", extra)
        artifacts[f"interval_{k:02d}"] = ck_dir / f"interval_{k:02d}.json"
    summary = {"config": result.config.to_dict(), "best_interval": result.record.best_interval,
               "best_L_ent": result.record.best["L_ent"],
               "final_m": result.weights[-1].weights.tolist()}
    if ds.has_eval_labels():
        accs = _interval_accuracies(result, ds, cfg.standardize)
        for entry, acc in zip(result.record.intervals, accs):
            entry["target_acc"] = acc
        summary["final_acc"] = evaluate(result.final, ds, cfg.standardize)
        summary["selected_acc"] = evaluate(result.selected, ds, cfg.standardize)
        summary["m_alignment"] = weight_alignment(result.weights[-1].weights, ds.shared_classes)
    result.record.write_jsonl(artifacts["intervals"])
    write_weight_trace(artifacts["m_trace"], result.weights)
    artifacts["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _manifest(out, "train", result.config.to_dict(), artifacts, started, ds)
    msg = f"selected interval {result.record.best_interval} (L_ent={result.record.best['L_ent']:.4f})"
    if "final_acc" in summary:
        msg += f"; final acc {summary['final_acc']:.4f}, selected acc {summary['selected_acc']:.4f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    if not args.checkpoint.exists():
        raise UsageError(f"missing file: {args.checkpoint}")
    ds = _load_data(args, want_labels=True)
    if not ds.has_eval_labels():
        raise UsageError("evaluation needs --eval-labels")
    doc = json.loads(args.checkpoint.read_text())
    std = doc.get("extra", {}).get("standardize", True)
    model = load_checkpoint(args.checkpoint)
    acc = evaluate(model, ds, std)
    conf = confusion_matrix(model, ds, std)
    x = standardize(ds).target_x if std else ds.target_x
    from .networks import classify
    m = estimate_class_weights(classify(model, x)).weights
    align = weight_alignment(m, ds.shared_classes)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"confusion": out / "confusion.csv", "report": out / "eval.json"}
    with open(artifacts["confusion"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + [str(c) for c in range(conf.shape[1])])
        for c, row in enumerate(conf):
            w.writerow([c] + row.tolist())
    report = {"accuracy": acc, "m": m.tolist(), "m_alignment": align,
              "per_class_counts": conf.sum(axis=1).tolist()}
    artifacts["report"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _manifest(out, "eval", {"checkpoint": str(args.checkpoint)}, artifacts, started, ds)
    print(f"accuracy {acc:.4f}")
    print(f"m shared mean {align['shared_mean']:.4f} / source-only mean {align['outlier_mean']:.4f}"
          f" = ratio {align['ratio']:.3f}")
    return EXIT_OK


def _seeds(args) -> List[int]:
    return list(args.seeds)


def cmd_ablate(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    ds = _load_data(args, want_labels=True)
    if not ds.has_eval_labels():
        raise UsageError("ablation needs evaluation labels")
    table = ablation_suite(ds, cfg, _seeds(args), rows=args.rows)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for row, res in table.items():
        for s, v in zip(_seeds(args), res["values"]):
            rows.append({"row": row, "seed": s, "accuracy": v})
    agg = [{"row": r, "mean": t["mean"], "std": t["std"]} for r, t in table.items()]
    artifacts = {"runs": out / "ablation.csv", "table": out / "ablation_summary.csv"}
    _write_csv(artifacts["runs"], rows)
    _write_csv(artifacts["table"], agg)
    _manifest(out, "ablate", cfg.to_dict(), artifacts, started, ds)
    for a in agg:
        print(f"{a['row']:>12s}  {100 * a['mean']:6.2f} +- {100 * a['std']:.2f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    gen = dict(n_classes=args.classes, dim=args.dim, n_per_class=args.n, shift=args.shift,
               rotation=args.rotation, seed=args.data_seed, separation=args.separation,
               layout=args.layout)
    ds = None
    if args.axis != "shared-classes":
        if args.data is None and args.source is None:
            ds = generate_synthetic_pda(shared=args.shared, **gen)
        else:
            ds = _load_data(args, want_labels=True)
    try:
        rows = sweep(args.axis, args.values, cfg, _seeds(args), ds, gen, args.modes)
    except DataError as e:
        raise UsageError(str(e)) from None
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"runs": out / "sweep.csv", "aggregate": out / "sweep_summary.csv"}
    _write_csv(artifacts["runs"], rows)
    agg = aggregate(rows)
    _write_csv(artifacts["aggregate"], agg)
    _manifest(out, "sweep", {"axis": args.axis, "values": args.values, "modes": args.modes,
                             "train": cfg.to_dict(), "generator": gen}, artifacts, started, ds)
    for a in agg:
        print(f"{args.axis}={a['value']:<6g} {a['mode']:>6s}  {100 * a['mean']:6.2f} +- {100 * a['std']:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = grad_check_suite(range(args.seeds), args.classes)
    worst = {t: 0.0 for t in TERMS}
    for r in reports:
        for t, e in r.errors.items():
            worst[t] = max(worst[t], e)
    for t in TERMS:
        status = "ok" if worst[t] < args.tolerance else "FAIL"
        print(f"{t:>14s}  max rel err {worst[t]:.3e}  {status}")
    bad = [t for t in TERMS if worst[t] >= args.tolerance]
    if bad:
        term = max(bad, key=worst.get)
        print(f"gradient check failed; worst term {term} ({worst[term]:.3e} >= {args.tolerance:g})",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_features(args) -> int:
    started = time.time()
    if not args.checkpoint.exists():
        raise UsageError(f"missing file: {args.checkpoint}")
    ds = _load_data(args, want_labels=False)
    doc = json.loads(args.checkpoint.read_text())
    model = load_checkpoint(args.checkpoint)
    if doc.get("extra", {}).get("standardize", True):
        ds = standardize(ds)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"source": out / "features_source.csv", "target": out / "features_target.csv"}
    fs, ft = features(model, ds.source_x), features(model, ds.target_x)
    write_feature_csv(artifacts["source"], fs, ds.source_y, ds.n_classes)
    write_feature_csv(artifacts["target"], ft, np.full(len(ft), -1), ds.n_classes)
    _manifest(out, "features", {"checkpoint": str(args.checkpoint)}, artifacts, started, ds)
    print(f"wrote {artifacts['source']} and {artifacts['target']}")
    return EXIT_OK


def _add_gen_flags(p: argparse.ArgumentParser, shared_default: Optional[int] = 5) -> None:
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--shared", type=int, default=shared_default)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--n", type=int, default=200, help="samples per class in each domain")
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--rotation", type=float, default=0.0, help="radians")
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--layout", choices=("simplex", "circle"), default="simplex")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partialda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic partial-DA dataset")
    _add_gen_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("data"))
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", type=Path, default=Path("run"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against evaluation labels")
    _add_data_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="source-only / edann / baa / full over several seeds")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rows", nargs="+", choices=ABLATION_ROWS, default=list(ABLATION_ROWS))
    p.add_argument("--out", type=Path, default=Path("ablation"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sensitivity sweep over xi, beta or the shared-class count")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--modes", nargs="+", choices=ABLATION_ROWS, default=["full"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    _add_data_flags(p)
    _add_gen_flags(p)
    p.add_argument("--data-seed", type=int, default=0, help="generator seed for synthetic data")
    _add_train_flags(p)
    p.add_argument("--out", type=Path, default=Path("sweep"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    p.add_argument("--seeds", type=int, default=20, help="number of random seeds")
    p.add_argument("--classes", type=int, nargs="+", default=[3, 6])
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("features", help="dump feature-extractor outputs for plotting")
    _add_data_flags(p, eval_labels=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("features"))
    p.set_defaults(func=cmd_features)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
