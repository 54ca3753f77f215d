"""Loss terms of the balanced / uncertainty-aware adversarial objective.

Every batch loss accepts either graph nodes (and then returns a scalar node
that can be back-propagated) or plain arrays (and then returns a float).
Per-sample weights ``w(x)`` and class weights ``m`` are always constants: no
gradient flows through them.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import EPS, Graph, Node

MODES = ("edann", "baa", "full")
NORM_TOL = 1e-9


def _check_simplex(p: np.ndarray, what: str = "probabilities") -> None:
    p = np.atleast_2d(p)
    if np.any(p < -NORM_TOL):
        raise ValueError(f"{what} contain negative entries")
    err = np.max(np.abs(p.sum(axis=1) - 1.0))
    if err > NORM_TOL:
        raise ValueError(f"{what} rows do not sum to 1 (max deviation {err:.3g})")


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        labels = labels.reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _graph_aware(n_tensor_args: int, columns: bool = False):
    """Lift the first ``n_tensor_args`` array arguments onto a fresh graph.

    If they already are nodes the wrapped function's node result is
    returned unchanged; otherwise the scalar value is returned as a float.
    With ``columns`` set, 1-D arrays are read as column vectors.
    """
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            tensors = args[:n_tensor_args]
            if all(isinstance(t, Node) or t is None for t in tensors):
                return fn(*args, **kwargs)
            g = Graph()
            lifted = []
            for t in tensors:
                if t is not None and not isinstance(t, Node):
                    t = np.asarray(t, dtype=np.float64)
                    t = g.constant(t.reshape(-1, 1) if columns and t.ndim == 1 else t)
                lifted.append(t)
            out = fn(*lifted, *args[n_tensor_args:], **kwargs)
            return float(out.value[0, 0])
        return wrapper
    return deco


# -- per-sample quantities (plain numpy, detached) ---------------------------

def entropy(h) -> float:
    """Shannon entropy (natural log) of one probability vector; 0 log 0 = 0."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    _check_simplex(h)
    return float(-np.sum(h * np.log(np.clip(h, EPS, 1.0))))


def row_entropies(probs: np.ndarray) -> np.ndarray:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    return -np.sum(probs * np.log(np.clip(probs, EPS, 1.0)), axis=1)


def sample_weight(h) -> float:
    """Entropy-aware weight 1 + exp(-H(h)); confident predictions weigh up to 2."""
    return 1.0 + float(np.exp(-entropy(h)))


def sample_weights(probs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`sample_weight` for a batch of rows, shape (n,)."""
    return 1.0 + np.exp(-row_entropies(probs))


# -- differentiable batch losses ----------------------------------------------

def row_entropy(p: Node) -> Node:
    g = p.graph
    return -g.row_sum(g.mul(p, g.log(p)))


@_graph_aware(1)
def weighted_cls_loss(preds, labels, m) -> Node:
    """mean_i m[y_i] * (-log p_i[y_i])."""
    g = preds.graph
    n, C = preds.shape
    labels = _check_labels(labels, C)
    m = np.asarray(m, dtype=np.float64).reshape(-1)
    picked = g.row_sum(g.mul(preds, g.constant(_onehot(labels, C))))
    nll = -g.log(picked)
    return g.mean(g.mul(nll, g.constant(m[labels].reshape(n, 1))))


@_graph_aware(1)
def conditional_entropy_loss(target_preds) -> Node:
    """Mean row entropy of the target predictions (no class weighting)."""
    _check_simplex(target_preds.value, "target predictions")
    return target_preds.graph.mean(row_entropy(target_preds))


@_graph_aware(1)
def complement_entropy_loss(preds, labels, m, xi: float = 1.0, detach_confidence: bool = True) -> Node:
    """Confidence-weighted complement entropy, normalised by n*log(C-1).

    Per sample: (1 - p_a)^xi * sum_{j != a} q_j log q_j with
    q_j = p_j / (1 - p_a).  A sample predicted with certainty contributes 0.

    By default the factor (1 - p_a)^xi is a constant weight, like ``m``, so
    the term only flattens the incorrect-class scores.  Letting gradient flow
    through it also rewards lowering p_a, which fights the cross-entropy.
    """
    g = preds.graph
    n, C = preds.shape
    if C < 3:
        raise ValueError(f"complement entropy needs at least 3 classes, got {C}")
    labels = _check_labels(labels, C)
    m = np.asarray(m, dtype=np.float64).reshape(-1)
    onehot = _onehot(labels, C)
    rest = g.sub(g.constant(np.ones((1, 1))), g.row_sum(g.mul(preds, g.constant(onehot))))
    rest = g.clamp(rest, EPS, None)
    q = g.div(g.mul(preds, g.constant(1.0 - onehot)), rest)
    neg_ent = g.row_sum(g.mul(q, g.log(q)))
    if detach_confidence:
        conf = g.constant(np.maximum(rest.value, EPS) ** xi)
    else:
        conf = g.pow(rest, xi) if xi != 0 else g.constant(np.ones((n, 1)))
    per_sample = g.mul(g.mul(conf, neg_ent), g.constant(m[labels].reshape(n, 1)))
    return g.scale(g.mean(per_sample), 1.0 / np.log(C - 1))


def complement_entropy_per_sample(preds: np.ndarray, labels, xi: float = 1.0) -> np.ndarray:
    """Unweighted per-sample l_wce / log(C-1) in plain numpy; shape (n,)."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    n, C = preds.shape
    if C < 3:
        raise ValueError(f"complement entropy needs at least 3 classes, got {C}")
    labels = _check_labels(labels, C)
    rest = np.maximum(1.0 - preds[np.arange(n), labels], EPS)
    q = preds / rest[:, None]
    q[np.arange(n), labels] = 0.0
    neg_ent = np.sum(q * np.log(np.clip(q, EPS, None)), axis=1)
    return rest ** xi * neg_ent / np.log(C - 1)


@_graph_aware(3, columns=True)
def balanced_adversarial_loss(src_scores, tgt_scores, aug_scores, src_weights, tgt_weights,
                              aug_weights=None, rho: float = 0.0) -> Node:
    """Value maximised by the discriminator.

    mean(w_s log D_s) + mean(w_t log(1 - D_t)) + rho * mean(w_a log(1 - D_a)).
    Source scores are labelled 1, target and augmented scores 0.  Means are
    over the realised batch sizes; an empty augmented batch drops the third
    term.
    """
    if src_scores is None or src_scores.shape[0] == 0:
        raise ValueError("empty source batch")
    if tgt_scores is None or tgt_scores.shape[0] == 0:
        raise ValueError("empty target batch")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    g = src_scores.graph
    one = g.constant(np.ones((1, 1)))

    def wcol(w, n):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if w.size != n:
            raise ValueError(f"expected {n} weights, got {w.size}")
        return g.constant(w.reshape(n, 1))

    ns, nt = src_scores.shape[0], tgt_scores.shape[0]
    value = g.add(
        g.mean(g.mul(wcol(src_weights, ns), g.log(src_scores))),
        g.mean(g.mul(wcol(tgt_weights, nt), g.log(g.sub(one, tgt_scores)))),
    )
    if aug_scores is not None and aug_scores.shape[0] > 0 and rho > 0:
        na = aug_scores.shape[0]
        aug = g.mean(g.mul(wcol(aug_weights, na), g.log(g.sub(one, aug_scores))))
        value = g.add(value, g.scale(aug, rho))
    return value


# -- composition ----------------------------------------------------------------

@dataclass
class LossBreakdown:
    cls_w: float
    ent: float
    wce: float
    adv: float
    total_min_player: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def active_terms(mode: str, beta: float) -> dict:
    """Which optional terms a mode switches on.  Zero coefficients drop the term."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return {"wce": mode == "full" and beta > 0, "aug": mode in ("baa", "full")}


def _check_coeffs(alpha, beta, lam):
    for name, v in (("alpha", alpha), ("beta", beta), ("lambda", lam)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")


def total_objective(components: LossBreakdown, alpha: float, beta: float, lam: float,
                    mode: str = "full") -> float:
    """cls_w + alpha*ent + beta*wce + lam*adv, with terms the mode disables left out."""
    _check_coeffs(alpha, beta, lam)
    use = active_terms(mode, beta)
    total = components.cls_w
    if alpha > 0:
        total = total + alpha * components.ent
    if use["wce"]:
        total = total + beta * components.wce
    if lam > 0:
        total = total + lam * components.adv
    return total


def backward_scalar(cls_w: Node, ent: Optional[Node], wce: Optional[Node], adv: Node,
                    alpha: float, beta: float) -> Node:
    """The single scalar back-propagated in one training step.

    ``adv`` must be computed from features routed through a gradient-reversal
    node with coefficient lambda.  Its negation here lets D ascend the
    adversarial value while the reversal hands F a descent direction on
    ``lambda * adv``.
    """
    _check_coeffs(alpha, beta, 0.0)
    g = cls_w.graph
    total = cls_w
    if ent is not None and alpha > 0:
        total = g.add(total, g.scale(ent, alpha))
    if wce is not None and beta > 0:
        total = g.add(total, g.scale(wce, beta))
    return g.sub(total, adv)
