"""PDA datasets: synthetic Gaussian benchmark, CSV feature files, batch sampling.

Target labels live in a :class:`SealedLabels` box that only evaluation code
opens.  Training code receives a :class:`TrainingView`, which has no route to
them.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .schedules import augment_count

# RNG stream ids; each subsystem draws from its own SeedSequence branch.
STREAM_INIT = 0x1417
STREAM_GENERATE = 1
STREAM_SOURCE = 2
STREAM_TARGET = 3
STREAM_AUG = 4


def rng_for(seed: int, stream: int, *counters: int) -> np.random.Generator:
    """Counter-based generator: the same (seed, stream, counters) gives the same draws."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), *map(int, counters)])))


class DataError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class FeatureSample:
    features: np.ndarray
    label: Optional[int] = None


class SealedLabels:
    """Evaluation-only holder for target labels."""

    __slots__ = ("_labels",)

    def __init__(self, labels: np.ndarray):
        self._labels = np.asarray(labels, dtype=np.int64).copy()
        self._labels.setflags(write=False)

    def __len__(self) -> int:
        return self._labels.size

    def __repr__(self) -> str:
        return f"SealedLabels(n={self._labels.size})"

    def unseal(self) -> np.ndarray:
        return self._labels


@dataclass(frozen=True)
class TrainingView:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    n_classes: int

    @property
    def dim(self) -> int:
        return self.source_x.shape[1]


@dataclass(frozen=True)
class PdaDataset:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    n_classes: int
    shared_classes: Tuple[int, ...] = ()
    sealed: Optional[SealedLabels] = field(default=None, repr=False)
    meta: Dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source_x.ndim != 2 or self.target_x.ndim != 2:
            raise DataError("features must be 2-D arrays")
        if self.source_x.shape[1] != self.target_x.shape[1]:
            raise DataError(f"source dim {self.source_x.shape[1]} != target dim {self.target_x.shape[1]}")
        if self.source_y.shape != (self.source_x.shape[0],):
            raise DataError("one source label per source row required")
        if self.source_y.size and (self.source_y.min() < 0 or self.source_y.max() >= self.n_classes):
            raise DataError(f"source labels must lie in [0, {self.n_classes})")
        if len(self.shared_classes) > self.n_classes:
            raise DataError("more shared classes than source classes")
        if self.sealed is not None:
            lab = self.sealed.unseal()
            if lab.size != self.target_x.shape[0]:
                raise DataError("one sealed label per target row required")
            if self.shared_classes and not set(np.unique(lab).tolist()) <= set(self.shared_classes):
                raise DataError("sealed target labels outside the shared classes")
            if lab.size and (lab.min() < 0 or lab.max() >= self.n_classes):
                raise DataError(f"target labels must lie in [0, {self.n_classes})")

    @property
    def dim(self) -> int:
        return self.source_x.shape[1]

    def training_view(self) -> TrainingView:
        return TrainingView(self.source_x, self.source_y, self.target_x, self.n_classes)

    def has_eval_labels(self) -> bool:
        return self.sealed is not None

    def eval_labels(self) -> np.ndarray:
        if self.sealed is None:
            raise DataError("dataset has no evaluation labels")
        return self.sealed.unseal()

    def source_samples(self):
        return [FeatureSample(x, int(y)) for x, y in zip(self.source_x, self.source_y)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.source_x, self.source_y, self.target_x):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.n_classes).encode())
        return h.hexdigest()


# -- synthetic benchmark ------------------------------------------------------

def class_means(n_classes: int, dim: int, separation: float, layout: str = "simplex") -> np.ndarray:
    """Class centres.

    ``simplex``: separation * e_c (needs C <= d), every pair sqrt(2) * separation apart.
    ``circle``: evenly spaced on a circle in the first two coordinates with
    neighbouring centres ``separation`` apart; the other coordinates carry noise only.
    """
    means = np.zeros((n_classes, dim))
    if layout == "simplex":
        if n_classes > dim:
            raise DataError(f"simplex layout needs classes <= dim, got {n_classes} > {dim}")
        means[np.arange(n_classes), np.arange(n_classes)] = separation
    elif layout == "circle":
        ang = 2 * np.pi * np.arange(n_classes) / n_classes
        radius = separation / (2 * np.sin(np.pi / n_classes))
        means[:, 0] = radius * np.cos(ang)
        means[:, 1] = radius * np.sin(ang)
    else:
        raise DataError(f"unknown layout {layout!r}")
    return means


def domain_transform(x: np.ndarray, shift: float, rotation: float) -> np.ndarray:
    """Rotate the first two coordinates by ``rotation`` radians, then translate them by ``shift`` each."""
    x = x.copy()
    c, s = math.cos(rotation), math.sin(rotation)
    x0, x1 = x[:, 0].copy(), x[:, 1].copy()
    x[:, 0] = c * x0 - s * x1 + shift
    x[:, 1] = s * x0 + c * x1 + shift
    return x


def generate_synthetic_pda(n_classes: int = 10, shared: int = 5, dim: int = 16,
                           n_per_class: int = 200, shift: float = 2.0, rotation: float = 0.0,
                           seed: int = 0, separation: float = 3.0, layout: str = "simplex") -> PdaDataset:
    """Unit-covariance Gaussian classes; the target keeps only classes 0..shared-1."""
    if shared > n_classes:
        raise DataError("shared exceeds classes")
    if shared < 3:
        raise DataError("need at least 3 shared classes")
    if dim < 2:
        raise DataError("need at least 2 feature dimensions")
    if n_per_class < 1:
        raise DataError("need at least one sample per class")
    means = class_means(n_classes, dim, separation, layout)
    rng_s = rng_for(seed, STREAM_GENERATE, 0)
    rng_t = rng_for(seed, STREAM_GENERATE, 1)
    src_y = np.repeat(np.arange(n_classes), n_per_class)
    src_x = means[src_y] + rng_s.standard_normal((src_y.size, dim))
    tgt_y = np.repeat(np.arange(shared), n_per_class)
    tgt_x = domain_transform(means[tgt_y] + rng_t.standard_normal((tgt_y.size, dim)), shift, rotation)
    meta = {"generator": "synthetic-gaussian", "classes": n_classes, "shared": shared, "dim": dim,
            "n_per_class": n_per_class, "shift": shift, "rotation": rotation, "seed": seed,
            "separation": separation, "layout": layout}
    return PdaDataset(src_x, src_y, tgt_x, n_classes, tuple(range(shared)), SealedLabels(tgt_y), meta)


def standardize(dataset: PdaDataset) -> PdaDataset:
    """z-score every dimension with source mean and std, applied to both domains."""
    mu = dataset.source_x.mean(axis=0)
    sd = dataset.source_x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return PdaDataset((dataset.source_x - mu) / sd, dataset.source_y, (dataset.target_x - mu) / sd,
                      dataset.n_classes, dataset.shared_classes, dataset.sealed,
                      {**dataset.meta, "standardized": True})


# -- CSV feature files ----------------------------------------------------------

def write_feature_csv(path, x: np.ndarray, labels: np.ndarray, n_classes: int) -> None:
    lines = [f"d={x.shape[1]},C={n_classes}"]
    for row, y in zip(x, labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(y)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_feature_csv(path, n_classes: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, int]:
    """Parse ``d=<int>,C=<int>`` then rows of d floats and one integer label.

    Returns (features, labels, C); label -1 marks an unlabeled sample.
    """
    text = Path(path).read_text().splitlines()
    if not text or not text[0].strip():
        raise DataError("no samples", 1)
    try:
        head = dict(part.split("=", 1) for part in text[0].strip().split(","))
        dim, C = int(head["d"]), int(head["C"])
    except (ValueError, KeyError):
        raise DataError(f"bad header {text[0]!r}, expected d=<int>,C=<int>", 1) from None
    if n_classes is not None and n_classes != C:
        raise DataError(f"header says C={C}, expected {n_classes}", 1)
    feats, labels = [], []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise DataError(f"expected {dim + 1} cells, got {len(cells)}", lineno)
        try:
            row = [float(c) for c in cells[:dim]]
            label = int(cells[dim])
        except ValueError:
            raise DataError("non-numeric cell", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise DataError("non-finite feature", lineno)
        if label >= C or label < -1:
            raise DataError(f"label {label} outside [-1, {C})", lineno)
        feats.append(row)
        labels.append(label)
    if not feats:
        raise DataError("no samples")
    return np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64), C


def write_eval_labels(path, labels: np.ndarray) -> None:
    Path(path).write_text("".join(f"{i},{int(y)}\n" for i, y in enumerate(labels)))


def load_eval_labels(path, n: Optional[int] = None) -> np.ndarray:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("index"):
            continue
        try:
            i, y = (int(v) for v in line.split(","))
        except ValueError:
            raise DataError(f"expected 'index,label', got {line!r}", lineno) from None
        pairs[i] = y
    if n is None:
        n = len(pairs)
    if sorted(pairs) != list(range(n)):
        raise DataError(f"eval labels must cover indices 0..{n - 1} exactly")
    return np.array([pairs[i] for i in range(n)], dtype=np.int64)


def save_dataset(dataset: PdaDataset, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"source": out / "source.csv", "target": out / "target.csv"}
    write_feature_csv(paths["source"], dataset.source_x, dataset.source_y, dataset.n_classes)
    write_feature_csv(paths["target"], dataset.target_x, np.full(dataset.target_x.shape[0], -1),
                      dataset.n_classes)
    if dataset.sealed is not None:
        paths["eval_labels"] = out / "eval-labels.csv"
        write_eval_labels(paths["eval_labels"], dataset.eval_labels())
    return paths


def load_dataset(source_path, target_path, eval_labels_path=None) -> PdaDataset:
    sx, sy, C = load_feature_csv(source_path)
    if np.any(sy < 0):
        raise DataError("source file contains unlabeled rows")
    tx, ty, Ct = load_feature_csv(target_path, C)
    if tx.shape[1] != sx.shape[1]:
        raise DataError(f"target dim {tx.shape[1]} != source dim {sx.shape[1]}")
    sealed, shared = None, ()
    if eval_labels_path is not None:
        labels = load_eval_labels(eval_labels_path, tx.shape[0])
        sealed = SealedLabels(labels)
        shared = tuple(sorted(set(labels.tolist())))
    elif np.all(ty >= 0):
        # labels carried inline in the target file are sealed on load
        sealed = SealedLabels(ty)
        shared = tuple(sorted(set(ty.tolist())))
    return PdaDataset(sx, sy, tx, C, shared, sealed, {"source": str(source_path), "target": str(target_path)})


# -- batch sampling -------------------------------------------------------------

class BatchSampler:
    """Epoch-cycling batches: each domain is walked through a fresh permutation per epoch.

    Index sets depend only on (seed, iteration); permutations are cached.
    """

    def __init__(self, n_source: int, n_target: int, batch_size: int, seed: int):
        if n_source == 0 or n_target == 0:
            raise DataError("empty domain")
        if batch_size < 1:
            raise DataError("batch size must be positive")
        self.n_source, self.n_target = n_source, n_target
        self.batch_size = batch_size
        self.seed = seed
        self._perms: Dict[Tuple[int, int], np.ndarray] = {}

    def _perm(self, stream: int, epoch: int, n: int) -> np.ndarray:
        key = (stream, epoch)
        if key not in self._perms:
            self._perms[key] = rng_for(self.seed, stream, epoch).permutation(n)
            # keep the cache bounded: only the two most recent epochs are ever read
            for old in [k for k in self._perms if k[0] == stream and k[1] < epoch - 1]:
                del self._perms[old]
        return self._perms[key]

    def _cycle(self, stream: int, n: int, iteration: int) -> np.ndarray:
        start = iteration * self.batch_size
        pos = np.arange(start, start + self.batch_size)
        epochs, offsets = pos // n, pos % n
        return np.array([self._perm(stream, e, n)[o] for e, o in zip(epochs, offsets)], dtype=np.int64)

    def __call__(self, iteration: int, rho: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = self._cycle(STREAM_SOURCE, self.n_source, iteration)
        tgt = self._cycle(STREAM_TARGET, self.n_target, iteration)
        k = augment_count(rho, self.batch_size)
        if k > 0:
            aug = rng_for(self.seed, STREAM_AUG, iteration).choice(
                self.n_source, size=k, replace=k > self.n_source)
        else:
            aug = np.zeros(0, dtype=np.int64)
        return src, tgt, aug


def batch_sampler(dataset, batch_size: int, rho: float, seed: int, iteration: int):
    view = dataset.training_view() if isinstance(dataset, PdaDataset) else dataset
    return BatchSampler(view.source_x.shape[0], view.target_x.shape[0], batch_size, seed)(iteration, rho)


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
