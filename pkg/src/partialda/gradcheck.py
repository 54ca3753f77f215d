"""Finite-difference verification of every loss term on small random networks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .autodiff import relative_error
from .data import rng_for
from .networks import MlpSpec, init_model
from .trainer import build_step_graph

TERMS = ("cls", "ent", "adv_entropy", "adv_balanced", "wce", "objective", "minimax_step")
STREAM_GRADCHECK = 9


@dataclass
class GradCheckConfig:
    n_classes: int = 3
    dim: int = 5
    width: int = 8
    batch: int = 6
    n_aug: int = 2
    rho: float = 0.25
    alpha: float = 0.1
    beta: float = 1.0
    xi: float = 1.0
    lam: float = 0.7
    step: float = 1e-5

    def __post_init__(self):
        if self.batch > 8 or self.n_classes > 6 or self.width > 8:
            raise ValueError("grad checks run on batch <= 8, C <= 6, widths <= 8")


@dataclass
class GradCheckReport:
    seed: int
    errors: Dict[str, float] = field(default_factory=dict)

    def worst(self):
        term = max(self.errors, key=self.errors.get)
        return term, self.errors[term]

    def passed(self, tolerance: float) -> bool:
        return all(e < tolerance for e in self.errors.values())


def _small_model(cfg: GradCheckConfig, seed: int):
    # tanh keeps the networks smooth so central differences never straddle a kink
    f = MlpSpec((cfg.dim, cfg.width, cfg.width), "tanh")
    g = MlpSpec((cfg.width, cfg.n_classes), "tanh", "softmax")
    d = MlpSpec((cfg.width, cfg.width, 1), "tanh", "sigmoid")
    model = init_model(f, g, d, seed)
    rng = rng_for(seed, STREAM_GRADCHECK, 0)
    # nonzero biases so every parameter carries a generic gradient
    for k in model.params:
        if ".b" in k:
            model.params[k] = 0.1 * rng.standard_normal(model.params[k].shape)
    return model, rng


def _graphs(cfg: GradCheckConfig, seed: int):
    model, rng = _small_model(cfg, seed)
    C = cfg.n_classes
    xs = rng.standard_normal((cfg.batch, cfg.dim))
    ys = rng.integers(0, C, cfg.batch)
    xt = rng.standard_normal((cfg.batch, cfg.dim)) + 0.5
    xa = rng.standard_normal((cfg.n_aug, cfg.dim))
    ya = rng.integers(0, C, cfg.n_aug)
    m = rng.uniform(0.2, 1.0, C)
    m[0] = 1.0
    common = dict(alpha=cfg.alpha, beta=cfg.beta, xi=cfg.xi, mode="full")
    # plain graph: every term is an honest function of the parameters
    plain, terms = build_step_graph(model, xs, ys, xt, xa, ya, m, lam=cfg.lam, rho=cfg.rho,
                                    use_grl=False, **common)
    # entropy-aware adversarial loss alone: unit class weights, no augmentation
    eq2_graph, eq2 = build_step_graph(model, xs, ys, xt, xa[:0], ya[:0], np.ones(C), lam=cfg.lam,
                                      rho=0.0, use_grl=False, **common)
    grl_graph, grl_terms = build_step_graph(model, xs, ys, xt, xa, ya, m, lam=cfg.lam, rho=cfg.rho,
                                            use_grl=True, **common)
    return model, (plain, terms), (eq2_graph, eq2), (grl_graph, grl_terms)


def _fd(graph, root_nodes: Sequence, params: Dict[str, np.ndarray], step: float):
    """Central differences of several roots of one graph, one replay per perturbation."""
    out = [{k: np.zeros_like(v) for k, v in params.items()} for _ in root_nodes]
    for name, base in params.items():
        work = base.copy()
        for idx in np.ndindex(base.shape):
            orig = work[idx]
            work[idx] = orig + step
            graph.forward({name: work})
            up = [r.value[0, 0] for r in root_nodes]
            work[idx] = orig - step
            graph.forward({name: work})
            down = [r.value[0, 0] for r in root_nodes]
            work[idx] = orig
            for k, (u, d) in enumerate(zip(up, down)):
                out[k][name][idx] = (u - d) / (2.0 * step)
        graph.forward({name: base})
    return out


def _flat(grads: Dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in names])


def grad_check(cfg: GradCheckConfig = None, seed: int = 0) -> GradCheckReport:
    """Max relative error (over the whole parameter vector) per loss term.

    ``objective`` is cls + alpha*ent + beta*wce + lambda*adv.  ``minimax_step``
    compares the gradient-reversal graph's backward pass with what it should
    equal: descent on the objective for F and G, ascent on adv for D.
    """
    cfg = cfg or GradCheckConfig()
    model, (plain, t), (eq2g, eq2), (grlg, tg) = _graphs(cfg, seed)
    names = list(model.params)
    g = plain
    objective = g.add(g.add(g.add(t["cls"], g.scale(t["ent"], cfg.alpha)), g.scale(t["wce"], cfg.beta)),
                      g.scale(t["adv"], cfg.lam))
    roots = {"cls": t["cls"], "ent": t["ent"], "adv_balanced": t["adv"], "wce": t["wce"],
             "objective": objective}
    fd = dict(zip(roots, _fd(plain, list(roots.values()), model.params, cfg.step)))
    fd["adv_entropy"] = _fd(eq2g, [eq2["adv"]], model.params, cfg.step)[0]
    analytic = {k: plain.backward(r) for k, r in roots.items()}
    analytic["adv_entropy"] = eq2g.backward(eq2["adv"])

    report = GradCheckReport(seed)
    for term in ("cls", "ent", "adv_entropy", "adv_balanced", "wce", "objective"):
        report.errors[term] = relative_error(_flat(analytic[term], names), _flat(fd[term], names))

    # expected minimax gradient assembled from the finite differences
    expected = {}
    for k in names:
        base = fd["cls"][k] + cfg.alpha * fd["ent"][k] + cfg.beta * fd["wce"][k]
        expected[k] = base - fd["adv_balanced"][k] if k.startswith("d.") else base + cfg.lam * fd["adv_balanced"][k]
    got = grlg.backward(tg["scalar"])
    report.errors["minimax_step"] = relative_error(_flat(got, names), _flat(expected, names))
    return report


def grad_check_suite(seeds: Sequence[int] = range(20), class_counts: Sequence[int] = (3, 6),
                     **overrides) -> List[GradCheckReport]:
    reports = []
    for C in class_counts:
        for s in seeds:
            reports.append(grad_check(GradCheckConfig(n_classes=C, **overrides), seed=int(s)))
    return reports
