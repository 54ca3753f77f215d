"""Feature extractor, label classifier and domain discriminator as small MLPs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .autodiff import EPS, Graph, Node

CHECKPOINT_VERSION = 1
HEADS = ("f", "g", "d")


@dataclass(frozen=True)
class MlpSpec:
    widths: Tuple[int, ...]
    hidden: str = "relu"
    output: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an MLP needs an input width and at least one layer")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.hidden not in ("relu", "tanh"):
            raise ValueError(f"unknown hidden activation {self.hidden!r}")
        if self.output not in ("none", "softmax", "sigmoid"):
            raise ValueError(f"unknown output activation {self.output!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "hidden": self.hidden, "output": self.output}


def default_specs(d_in: int, n_classes: int) -> Tuple[MlpSpec, MlpSpec, MlpSpec]:
    """F = [d, 64, 32] relu, G = [32, C] softmax, D = [32, 32, 1] sigmoid."""
    return (
        MlpSpec((d_in, 64, 32), "relu", "none"),
        MlpSpec((32, n_classes), "relu", "softmax"),
        MlpSpec((32, 32, 1), "relu", "sigmoid"),
    )


def param_names(head: str, spec: MlpSpec) -> List[str]:
    names = []
    for i in range(spec.n_layers):
        names += [f"{head}.W{i}", f"{head}.b{i}"]
    return names


@dataclass
class ModelState:
    specs: Dict[str, MlpSpec]
    params: Dict[str, np.ndarray]
    momentum: Dict[str, np.ndarray]
    step: int = 0

    @property
    def n_classes(self) -> int:
        return self.specs["g"].widths[-1]

    @property
    def d_in(self) -> int:
        return self.specs["f"].widths[0]

    def copy(self) -> "ModelState":
        return ModelState(
            dict(self.specs),
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.momentum.items()},
            self.step,
        )

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def _check_compatible(spec_f: MlpSpec, spec_g: MlpSpec, spec_d: MlpSpec) -> None:
    feat = spec_f.widths[-1]
    if spec_g.widths[0] != feat:
        raise ValueError(f"G input width {spec_g.widths[0]} != F output width {feat}")
    if spec_d.widths[0] != feat:
        raise ValueError(f"D input width {spec_d.widths[0]} != F output width {feat}")
    if spec_d.widths[-1] != 1:
        raise ValueError(f"D must end in a single unit, got {spec_d.widths[-1]}")


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_model(spec_f: MlpSpec, spec_g: MlpSpec, spec_d: MlpSpec, seed: int) -> ModelState:
    _check_compatible(spec_f, spec_g, spec_d)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    specs = {"f": spec_f, "g": spec_g, "d": spec_d}
    params = {}
    for head in HEADS:
        widths = specs[head].widths
        for i in range(specs[head].n_layers):
            bound = xavier_bound(widths[i], widths[i + 1])
            params[f"{head}.W{i}"] = rng.uniform(-bound, bound, size=(widths[i], widths[i + 1]))
            params[f"{head}.b{i}"] = np.zeros((1, widths[i + 1]))
    momentum = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(specs, params, momentum, 0)


def mlp(graph: Graph, x: Node, head: str, spec: MlpSpec, params: Mapping[str, np.ndarray],
        apply_output: bool = True) -> Node:
    """Append an MLP to ``graph``; weights become graph parameters named ``head.Wi``."""
    if x.shape[1] != spec.widths[0]:
        raise ValueError(f"{head}: input has {x.shape[1]} columns, expected {spec.widths[0]}")
    h = x
    for i in range(spec.n_layers):
        W = graph.parameter(f"{head}.W{i}", params[f"{head}.W{i}"])
        b = graph.parameter(f"{head}.b{i}", params[f"{head}.b{i}"])
        h = graph.add(graph.matmul(h, W), b)
        if i < spec.n_layers - 1:
            h = graph.relu(h) if spec.hidden == "relu" else graph.tanh(h)
    if apply_output:
        if spec.output == "softmax":
            h = graph.softmax_rows(h)
        elif spec.output == "sigmoid":
            h = graph.clamp(graph.sigmoid(h), EPS, 1.0 - EPS)
    return h


def features(model: ModelState, x: np.ndarray) -> np.ndarray:
    g = Graph()
    return mlp(g, g.input("x", _check_input(model, x)), "f", model.specs["f"], model.params).value


def _check_input(model: ModelState, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.d_in:
        raise ValueError(f"input has {x.shape[1]} columns, model expects {model.d_in}")
    return x


def classify(model: ModelState, x: np.ndarray) -> np.ndarray:
    g = Graph()
    z = mlp(g, g.input("x", _check_input(model, x)), "f", model.specs["f"], model.params)
    return mlp(g, z, "g", model.specs["g"], model.params).value


def discriminate(model: ModelState, x: np.ndarray) -> np.ndarray:
    g = Graph()
    z = mlp(g, g.input("x", _check_input(model, x)), "f", model.specs["f"], model.params)
    return mlp(g, z, "d", model.specs["d"], model.params).value


def sgd_step(model: ModelState, grads: Mapping[str, np.ndarray], lr: float,
             momentum: float = 0.9, classifier_lr_multiplier: float = 10.0) -> ModelState:
    """Heavy-ball SGD: v <- mu*v + g; theta <- theta - lr_eff*v.

    F uses ``lr``; G and D use ``lr * classifier_lr_multiplier``.  Returns a
    new state and leaves ``model`` untouched.
    """
    missing = set(model.params) - set(grads)
    if missing:
        raise KeyError(f"missing gradients for {sorted(missing)}")
    params, buffers = {}, {}
    for name, theta in model.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        v = momentum * model.momentum[name] + g
        lr_eff = lr if name.startswith("f.") else lr * classifier_lr_multiplier
        params[name] = theta - lr_eff * v
        buffers[name] = v
    return ModelState(dict(model.specs), params, buffers, model.step + 1)


def save_checkpoint(model: ModelState, path, extra: Optional[dict] = None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "step": model.step,
        "specs": {k: s.to_dict() for k, s in model.specs.items()},
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.params.items()},
        "momentum": {k: v.ravel().tolist() for k, v in model.momentum.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelState:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    specs = {k: MlpSpec(tuple(s["widths"]), s["hidden"], s["output"]) for k, s in doc["specs"].items()}
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    momentum = {k: np.array(doc["momentum"][k], dtype=np.float64).reshape(params[k].shape) for k in params}
    return ModelState(specs, params, momentum, int(doc["step"]))
