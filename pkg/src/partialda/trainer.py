"""Minimax training loop with interval-based class re-weighting and entropy model selection."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses
from .autodiff import Graph
from .data import BatchSampler, PdaDataset, TrainingView, generate_synthetic_pda, standardize
from .networks import MlpSpec, ModelState, classify, init_model, mlp, sgd_step
from .schedules import (ClassWeights, augment_count, estimate_class_weights, lambda_schedule,
                        lr_schedule, rho_schedule)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def default_beta(n_classes: int) -> float:
    """Complement-term weight: 5 for label spaces up to 31 classes, 1 for larger ones."""
    return 5.0 if n_classes <= 31 else 1.0


@dataclass
class TrainConfig:
    n_iters: int = 2000
    interval: int = 200
    batch_size: int = 36
    rho0: float = 0.25
    xi: float = 1.0
    alpha: float = 0.1
    beta: Optional[float] = None
    mode: str = "full"
    seed: int = 0
    gamma: float = 10.0
    lr0: float = 0.01
    alpha_hat: float = 10.0
    beta_hat: float = 0.75
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0
    literal_rho: bool = False
    # lambda is multiplied by this; 0 switches the adversarial pull on F off
    lam_scale: float = 1.0
    freeze_class_weights: bool = False
    feature_widths: Tuple[int, ...] = (64, 32)
    disc_hidden: int = 32
    activation: str = "relu"
    standardize: bool = True

    def __post_init__(self):
        self.feature_widths = tuple(int(w) for w in self.feature_widths)

    def validate(self, n_classes: Optional[int] = None) -> "TrainConfig":
        if self.n_iters < 1 or self.interval < 1:
            raise ValueError("n_iters and interval must be positive")
        if self.n_iters % self.interval:
            raise ValueError(f"n_iters ({self.n_iters}) must be divisible by interval ({self.interval})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.mode not in losses.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("rho0", "xi", "alpha", "lam_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be nonnegative")
        return self

    def resolved(self, n_classes: int) -> "TrainConfig":
        """Fill in beta and force it to 0 where the complement term is undefined (C < 3)."""
        beta = default_beta(n_classes) if self.beta is None else self.beta
        if n_classes < 3:
            beta = 0.0
        return replace(self, beta=beta).validate(n_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_widths"] = list(self.feature_widths)
        return d


def source_only_config(config: TrainConfig) -> TrainConfig:
    """Classification loss alone: no adversary pull, entropy, complement term, augmentation or re-weighting."""
    return replace(config, mode="edann", lam_scale=0.0, alpha=0.0, beta=0.0, rho0=0.0,
                   freeze_class_weights=True)


@dataclass
class RunRecord:
    intervals: List[dict] = field(default_factory=list)
    best_interval: int = -1

    def add(self, entry: dict) -> None:
        self.intervals.append(entry)
        ents = [e["L_ent"] for e in self.intervals]
        self.best_interval = int(np.argmin(ents))

    @property
    def best(self) -> dict:
        return self.intervals[self.best_interval]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.intervals:
                fh.write(json.dumps(e, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    final: ModelState
    selected: ModelState
    record: RunRecord
    weights: List[ClassWeights]
    config: TrainConfig
    checkpoints: List[ModelState] = field(default_factory=list, repr=False)


def model_specs(config: TrainConfig, dim: int, n_classes: int) -> Tuple[MlpSpec, MlpSpec, MlpSpec]:
    widths = (dim,) + tuple(config.feature_widths)
    feat = widths[-1]
    return (MlpSpec(widths, config.activation, "none"),
            MlpSpec((feat, n_classes), config.activation, "softmax"),
            MlpSpec((feat, config.disc_hidden, 1), config.activation, "sigmoid"))


def build_step_graph(model: ModelState, xs: np.ndarray, ys: np.ndarray, xt: np.ndarray,
                     xa: np.ndarray, ya: np.ndarray, m: np.ndarray, *, lam: float, rho: float,
                     alpha: float, beta: float, xi: float, mode: str, use_grl: bool = True):
    """Graph for one minimax step on a (source, target, augmented) batch.

    Returns (graph, terms) where ``terms`` maps cls / ent / wce / adv /
    scalar to nodes.  With ``use_grl`` false the adversarial branch sees
    plain features, which is what finite-difference checks of the objective
    need.
    """
    g = Graph()
    ns, nt, na = len(xs), len(xt), len(xa)
    parts = [g.input("xs", xs), g.input("xt", xt)]
    if na:
        parts.append(g.input("xa", xa))
    x = g.concat_rows(parts)
    z = mlp(g, x, "f", model.specs["f"], model.params)
    p = mlp(g, z, "g", model.specs["g"], model.params)
    z_adv = g.grad_reversal(z, lam) if use_grl else z
    dout = mlp(g, z_adv, "d", model.specs["d"], model.params)

    p_s, p_t = g.slice_rows(p, 0, ns), g.slice_rows(p, ns, ns + nt)
    d_s, d_t = g.slice_rows(dout, 0, ns), g.slice_rows(dout, ns, ns + nt)
    p_a = g.slice_rows(p, ns + nt, ns + nt + na) if na else None
    d_a = g.slice_rows(dout, ns + nt, ns + nt + na) if na else None

    use = losses.active_terms(mode, beta)
    # entropy-aware sample weights from the current (detached) predictions
    # every mode class-weights the source side, so edann is baa with rho = 0
    w_s = losses.sample_weights(p_s.value) * m[ys]
    w_t = losses.sample_weights(p_t.value)
    terms = {"cls": losses.weighted_cls_loss(p_s, ys, m), "ent": None, "wce": None}
    if alpha > 0:
        terms["ent"] = losses.conditional_entropy_loss(p_t)
    if use["wce"]:
        terms["wce"] = losses.complement_entropy_loss(p_s, ys, m, xi)
    aug_rho = rho if use["aug"] else 0.0
    w_a = losses.sample_weights(p_a.value) * m[ya] if na else None
    terms["adv"] = losses.balanced_adversarial_loss(d_s, d_t, d_a, w_s, w_t, w_a, aug_rho)
    terms["scalar"] = losses.backward_scalar(terms["cls"], terms["ent"], terms["wce"], terms["adv"],
                                             alpha, beta if use["wce"] else 0.0)
    g.root = terms["scalar"]
    return g, terms


def _breakdown(terms, alpha, beta, lam, mode) -> losses.LossBreakdown:
    val = lambda k: float(terms[k].value[0, 0]) if terms[k] is not None else 0.0
    bd = losses.LossBreakdown(val("cls"), val("ent"), val("wce"), val("adv"))
    bd.total_min_player = losses.total_objective(bd, alpha, beta, lam, mode)
    return bd


def _target_entropy(model: ModelState, target_x: np.ndarray) -> Tuple[np.ndarray, float]:
    preds = classify(model, target_x)
    return preds, float(losses.row_entropies(preds).mean())


def train(dataset, config: TrainConfig, keep_checkpoints: bool = True) -> TrainResult:
    """Run the full loop.  Accepts a :class:`PdaDataset` or its :class:`TrainingView`.

    Target labels are never read here.
    """
    if isinstance(dataset, PdaDataset):
        if config.standardize:
            dataset = standardize(dataset)
        view = dataset.training_view()
    elif isinstance(dataset, TrainingView):
        view = dataset
    else:
        raise TypeError(f"expected PdaDataset or TrainingView, got {type(dataset).__name__}")
    C = view.n_classes
    cfg = config.resolved(C)
    N, Nu, B = cfg.n_iters, cfg.interval, cfg.batch_size
    uses_aug = losses.active_terms(cfg.mode, cfg.beta)["aug"]

    model = init_model(*model_specs(cfg, view.dim, C), seed=cfg.seed)
    sampler = BatchSampler(len(view.source_x), len(view.target_x), B, cfg.seed)
    weights = ClassWeights.uniform(C)
    rho = cfg.rho0 if uses_aug else 0.0
    record = RunRecord()
    trace: List[ClassWeights] = []
    checkpoints: List[ModelState] = []
    running: List[losses.LossBreakdown] = []

    for i in range(1, N + 1):
        p = (i - 1) / N
        lr = lr_schedule(p, cfg.lr0, cfg.alpha_hat, cfg.beta_hat)
        lam = cfg.lam_scale * lambda_schedule(p, cfg.gamma)
        src, tgt, aug = sampler(i - 1, rho)
        m = weights.weights
        graph, terms = build_step_graph(
            model, view.source_x[src], view.source_y[src], view.target_x[tgt],
            view.source_x[aug], view.source_y[aug], m,
            lam=lam, rho=rho, alpha=cfg.alpha, beta=cfg.beta, xi=cfg.xi, mode=cfg.mode)
        bd = _breakdown(terms, cfg.alpha, cfg.beta, lam, cfg.mode)
        scalar = float(terms["scalar"].value[0, 0])
        if not math.isfinite(scalar) or not math.isfinite(bd.total_min_player):
            raise TrainingDiverged(f"non-finite loss at iteration {i}",
                                   {"iteration": i, "loss": bd.as_dict(), "lr": lr, "lambda": lam,
                                    "rho": rho, "m": m.tolist()})
        grads = graph.backward()
        if not all(np.all(np.isfinite(v)) for v in grads.values()):
            raise TrainingDiverged(f"non-finite gradient at iteration {i}",
                                   {"iteration": i, "loss": bd.as_dict()})
        model = sgd_step(model, grads, lr, cfg.momentum, cfg.head_lr_multiplier)
        running.append(bd)

        if i % Nu == 0:
            preds, l_ent = _target_entropy(model, view.target_x)
            if not cfg.freeze_class_weights:
                weights = estimate_class_weights(preds, i)
            else:
                weights = ClassWeights(weights.weights, i)
            trace.append(weights)
            mean_bd = {k: float(np.mean([getattr(b, k) for b in running]))
                       for k in ("cls_w", "ent", "wce", "adv", "total_min_player")}
            running = []
            record.add({"interval": len(record.intervals), "iteration": i, "L_ent": l_ent,
                        "loss": mean_bd, "m": weights.weights.tolist(), "rho": rho,
                        "lambda": lam, "lr": lr, "n_aug": int(len(aug))})
            checkpoints.append(model.copy())
            if uses_aug:
                rho = cfg.rho0 * (1.0 - Nu / N) if cfg.literal_rho else rho_schedule(i, N, cfg.rho0)
            log.debug("iter %d L_ent=%.4f rho=%.4f", i, l_ent, rho)

    selected = checkpoints[record.best_interval]
    return TrainResult(model, selected, record, trace, cfg, checkpoints if keep_checkpoints else [])


def predict(model: ModelState, x: np.ndarray) -> np.ndarray:
    """Argmax of the class probabilities; exact ties go to the lowest index."""
    return np.argmax(classify(model, x), axis=1)


def evaluate(model: ModelState, dataset: PdaDataset, standardized: bool = True) -> float:
    """Target accuracy against the sealed labels."""
    labels = dataset.eval_labels()
    x = standardize(dataset).target_x if standardized else dataset.target_x
    return float(np.mean(predict(model, x) == labels))


def confusion_matrix(model: ModelState, dataset: PdaDataset, standardized: bool = True) -> np.ndarray:
    labels = dataset.eval_labels()
    x = standardize(dataset).target_x if standardized else dataset.target_x
    pred = predict(model, x)
    C = dataset.n_classes
    out = np.zeros((C, C), dtype=np.int64)
    np.add.at(out, (labels, pred), 1)
    return out


def weight_alignment(m: np.ndarray, shared: Sequence[int]) -> dict:
    """Mean class weight over shared classes vs source-only classes."""
    m = np.asarray(m)
    mask = np.zeros(m.size, dtype=bool)
    mask[list(shared)] = True
    s = float(m[mask].mean()) if mask.any() else float("nan")
    o = float(m[~mask].mean()) if (~mask).any() else float("nan")
    return {"shared_mean": s, "outlier_mean": o, "ratio": s / o if o > 0 else float("inf")}


def run_and_score(dataset: PdaDataset, config: TrainConfig) -> dict:
    res = train(dataset, config, keep_checkpoints=False)
    out = {"final_acc": evaluate(res.final, dataset, config.standardize),
           "selected_acc": evaluate(res.selected, dataset, config.standardize),
           "best_interval": res.record.best_interval,
           "m": res.weights[-1].weights.tolist(),
           "record": res.record}
    if dataset.shared_classes:
        out["m_alignment"] = weight_alignment(res.weights[-1].weights, dataset.shared_classes)
    return out


ABLATION_ROWS = ("source-only", "edann", "baa", "full")


def config_for_row(row: str, base: TrainConfig) -> TrainConfig:
    if row == "source-only":
        return source_only_config(base)
    if row not in losses.MODES:
        raise ValueError(f"unknown ablation row {row!r}")
    return replace(base, mode=row)


def _summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "values": arr.tolist()}


def ablation_suite(dataset: PdaDataset, base: TrainConfig, seeds: Sequence[int] = (0, 1, 2),
                   rows: Sequence[str] = ABLATION_ROWS, metric: str = "selected_acc") -> dict:
    """Accuracy of each ablation row over ``seeds``: {row: {mean, std, values, runs}}."""
    table = {}
    for row in rows:
        runs = [run_and_score(dataset, replace(config_for_row(row, base), seed=s)) for s in seeds]
        table[row] = {**_summary([r[metric] for r in runs]), "runs": runs}
    return table


SWEEP_AXES = ("xi", "beta", "shared-classes")


def sweep(axis: str, values: Sequence[float], base: TrainConfig, seeds: Sequence[int],
          dataset: Optional[PdaDataset] = None, generator: Optional[dict] = None,
          modes: Sequence[str] = ("full",), metric: str = "selected_acc") -> List[dict]:
    """One row per (value, mode, seed).  ``shared-classes`` regenerates the target domain."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    rows = []
    for v in values:
        if axis == "shared-classes":
            ds = generate_synthetic_pda(**{**(generator or {}), "shared": int(v)})
            cfg = base
        else:
            if dataset is None:
                raise ValueError("xi/beta sweeps need a dataset")
            ds = dataset
            cfg = replace(base, **{axis: float(v)})
        for mode in modes:
            for s in seeds:
                r = run_and_score(ds, replace(config_for_row(mode, cfg), seed=s))
                rows.append({"axis": axis, "value": v, "mode": mode, "seed": s,
                             "accuracy": r[metric], "final_acc": r["final_acc"],
                             "selected_acc": r["selected_acc"]})
    return rows


def aggregate(rows: Sequence[dict]) -> List[dict]:
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["value"], r["mode"]), []).append(r["accuracy"])
    return [{"value": v, "mode": mo, **{k: s[k] for k in ("mean", "std")}, "n": len(a)}
            for (v, mo), a in groups.items() for s in [_summary(a)]]
