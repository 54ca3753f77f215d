"""Class-level weight estimation and the scalar training schedules."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray
    updated_at: int = 0

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassWeights":
        # 1/C everywhere, which max-normalises to all ones
        return cls(normalize_max(np.full(n_classes, 1.0 / n_classes)), 0)

    def __len__(self) -> int:
        return self.weights.size


def normalize_max(mass: np.ndarray) -> np.ndarray:
    mass = np.asarray(mass, dtype=np.float64)
    top = mass.max()
    if not top > 0:
        raise ValueError("class mass must have a positive maximum")
    return mass / top


def estimate_class_weights(target_preds: np.ndarray, iteration: int = 0) -> ClassWeights:
    """m_c = sum_j p_jc / max_c sum_j p_jc over every target prediction row."""
    target_preds = np.atleast_2d(np.asarray(target_preds, dtype=np.float64))
    if target_preds.shape[0] == 0:
        raise ValueError("cannot estimate class weights from an empty target set")
    # math.fsum keeps the column sums independent of row order
    mass = np.array([math.fsum(col) for col in target_preds.T])
    return ClassWeights(normalize_max(mass), iteration)


def _check_progress(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {p}")


def lr_schedule(p: float, lr0: float = 0.01, alpha_hat: float = 10.0, beta_hat: float = 0.75) -> float:
    """Annealed learning rate lr0 * (1 + alpha_hat * p) ** -beta_hat."""
    _check_progress(p)
    return lr0 * (1.0 + alpha_hat * p) ** (-beta_hat)


def lambda_schedule(p: float, gamma: float = 10.0) -> float:
    """Adversarial trade-off ramp 2 / (1 + exp(-gamma p)) - 1, from 0 towards 1."""
    _check_progress(p)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def rho_schedule(iteration: int, n_iters: int, rho0: float = 0.25) -> float:
    """Linear decay rho0 * (1 - iteration / N)."""
    if n_iters <= 0:
        raise ValueError("total iterations must be positive")
    if not 0 <= iteration <= n_iters:
        raise ValueError(f"iteration {iteration} outside [0, {n_iters}]")
    return rho0 * (1.0 - iteration / n_iters)


def augment_count(rho: float, batch_size: int) -> int:
    """floor(rho * B), tolerant to float round-off just below an integer."""
    return int(math.floor(rho * batch_size + 1e-9))


def write_weight_trace(path, rows: Sequence[ClassWeights]) -> None:
    rows = list(rows)
    n = len(rows[0]) if rows else 0
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"w_{c}" for c in range(n)])
        for cw in rows:
            w.writerow([cw.updated_at] + [repr(float(v)) for v in cw.weights])


def read_weight_trace(path) -> list:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [ClassWeights(np.array([float(v) for v in row[1:]]), int(row[0])) for row in reader]
