"""Tape-based reverse-mode autodiff over dense 2-D float64 arrays.

Every value is a 2-D ``np.ndarray``.  Ops evaluate eagerly when a node is
created (define-by-run), and the tape can also be replayed with new input or
parameter bindings via :meth:`Graph.forward`, which is what the
finite-difference checks rely on.

Broadcasting is restricted to the shapes the networks need: an operand of
shape ``(1, k)``, ``(n, 1)`` or ``(1, 1)`` may be stretched to ``(n, k)``.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

EPS = 1e-12


class GraphError(RuntimeError):
    pass


class ShapeError(GraphError, ValueError):
    def __init__(self, node: str, message: str):
        super().__init__(f"node {node!r}: {message}")
        self.node = node


def _as2d(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"expected at most 2 dims, got shape {arr.shape}")
    return arr


def _broadcast_shape(name: str, a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(name, f"cannot broadcast {a} with {b}")
    return tuple(out)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


# Each op kind maps to (forward, backward).  forward(parent_values, attr) -> value.
# backward(parent_values, value, adjoint, attr) -> tuple of parent adjoints.
_Fwd = Callable[[Sequence[np.ndarray], dict], np.ndarray]
_Bwd = Callable[[Sequence[np.ndarray], np.ndarray, np.ndarray, dict], Tuple[np.ndarray, ...]]


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _clamp_mask(x: np.ndarray, lo: Optional[float], hi: Optional[float]) -> np.ndarray:
    mask = np.ones_like(x)
    if lo is not None:
        mask[x < lo] = 0.0
    if hi is not None:
        mask[x > hi] = 0.0
    return mask


def _concat_bwd(ps, v, g, a):
    out, start = [], 0
    for p in ps:
        out.append(g[start:start + p.shape[0]])
        start += p.shape[0]
    return tuple(out)


def _slice_bwd(ps, v, g, a):
    full = np.zeros_like(ps[0])
    full[a["start"]:a["stop"]] = g
    return (full,)


_OPS: Dict[str, Tuple[_Fwd, _Bwd]] = {
    "matmul": (
        lambda ps, a: ps[0] @ ps[1],
        lambda ps, v, g, a: (g @ ps[1].T, ps[0].T @ g),
    ),
    "add": (
        lambda ps, a: ps[0] + ps[1],
        lambda ps, v, g, a: (_unbroadcast(g, ps[0].shape), _unbroadcast(g, ps[1].shape)),
    ),
    "sub": (
        lambda ps, a: ps[0] - ps[1],
        lambda ps, v, g, a: (_unbroadcast(g, ps[0].shape), -_unbroadcast(g, ps[1].shape)),
    ),
    "mul": (
        lambda ps, a: ps[0] * ps[1],
        lambda ps, v, g, a: (
            _unbroadcast(g * ps[1], ps[0].shape),
            _unbroadcast(g * ps[0], ps[1].shape),
        ),
    ),
    "div": (
        lambda ps, a: ps[0] / ps[1],
        lambda ps, v, g, a: (
            _unbroadcast(g / ps[1], ps[0].shape),
            _unbroadcast(-g * ps[0] / ps[1] ** 2, ps[1].shape),
        ),
    ),
    "scale": (
        lambda ps, a: a["c"] * ps[0],
        lambda ps, v, g, a: (a["c"] * g,),
    ),
    "relu": (
        lambda ps, a: np.maximum(ps[0], 0.0),
        lambda ps, v, g, a: (g * (ps[0] > 0.0),),
    ),
    "tanh": (
        lambda ps, a: np.tanh(ps[0]),
        lambda ps, v, g, a: (g * (1.0 - v * v),),
    ),
    "sigmoid": (
        lambda ps, a: 0.5 * (1.0 + np.tanh(0.5 * ps[0])),
        lambda ps, v, g, a: (g * v * (1.0 - v),),
    ),
    "softmax-rows": (
        lambda ps, a: _softmax_rows(ps[0]),
        lambda ps, v, g, a: (v * (g - (g * v).sum(axis=1, keepdims=True)),),
    ),
    # log and pow clamp their argument from below; the clamped region has zero slope.
    "log": (
        lambda ps, a: np.log(np.maximum(ps[0], a["floor"])),
        lambda ps, v, g, a: (g * (ps[0] >= a["floor"]) / np.maximum(ps[0], a["floor"]),),
    ),
    "pow": (
        lambda ps, a: np.maximum(ps[0], a["floor"]) ** a["p"],
        lambda ps, v, g, a: (
            g * (ps[0] >= a["floor"]) * a["p"] * np.maximum(ps[0], a["floor"]) ** (a["p"] - 1.0),
        ),
    ),
    "exp": (
        lambda ps, a: np.exp(ps[0]),
        lambda ps, v, g, a: (g * v,),
    ),
    "clamp": (
        lambda ps, a: np.clip(ps[0], a["lo"], a["hi"]),
        lambda ps, v, g, a: (g * _clamp_mask(ps[0], a["lo"], a["hi"]),),
    ),
    "row-sum": (
        lambda ps, a: ps[0].sum(axis=1, keepdims=True),
        lambda ps, v, g, a: (np.broadcast_to(g, ps[0].shape).copy(),),
    ),
    "sum": (
        lambda ps, a: ps[0].sum().reshape(1, 1),
        lambda ps, v, g, a: (np.full(ps[0].shape, g[0, 0]),),
    ),
    "mean": (
        lambda ps, a: ps[0].mean().reshape(1, 1),
        lambda ps, v, g, a: (np.full(ps[0].shape, g[0, 0] / ps[0].size),),
    ),
    "concat-rows": (
        lambda ps, a: np.concatenate(ps, axis=0),
        _concat_bwd,
    ),
    "slice-rows": (
        lambda ps, a: ps[0][a["start"]:a["stop"]],
        _slice_bwd,
    ),
    "grad-reversal": (
        lambda ps, a: ps[0],
        lambda ps, v, g, a: (-a["lam"] * g,),
    ),
}

OP_KINDS = tuple(_OPS) + ("constant", "parameter", "input")


class Node:
    """One vertex of the tape.  Arithmetic operators build new nodes."""

    __slots__ = ("graph", "op", "parents", "attr", "name", "value", "adjoint")

    def __init__(self, graph: "Graph", op: str, parents: Tuple["Node", ...], attr: dict,
                 name: str, value: np.ndarray):
        self.graph = graph
        self.op = op
        self.parents = parents
        self.attr = attr
        self.name = name
        self.value = value
        self.adjoint: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node({self.name}, op={self.op}, shape={self.shape})"

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    def __radd__(self, other):
        return self.graph.add(self._lift(other), self)

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.scale(self, float(other))
        return self.graph.mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.scale(self, 1.0 / float(other))
        return self.graph.div(self, self._lift(other))

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._lift(other))


class Graph:
    """A recording of nodes in creation (hence topological) order.

    With ``eager=False`` values are still propagated at build time (to fix
    shapes) but :meth:`backward` refuses to run until :meth:`forward` has.
    """

    def __init__(self, eager: bool = True):
        self.eager = eager
        self.nodes: List[Node] = []
        self.params: Dict[str, Node] = {}
        self.inputs: Dict[str, Node] = {}
        self.root: Optional[Node] = None
        self._evaluated = False
        self._index: Optional[Dict[int, int]] = None

    # -- leaves ---------------------------------------------------------
    def _leaf(self, op: str, value, name: Optional[str]) -> Node:
        node = Node(self, op, (), {}, name or f"{op}{len(self.nodes)}", _as2d(value))
        self.nodes.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._leaf("constant", value, name)

    def parameter(self, name: str, value) -> Node:
        if name in self.params:
            return self.params[name]
        node = self._leaf("parameter", value, name)
        self.params[name] = node
        return node

    def input(self, name: str, value) -> Node:
        """Declare a named input; its shape is fixed by the first value."""
        if name in self.inputs:
            raise GraphError(f"duplicate input {name!r}")
        node = self._leaf("input", value, name)
        self.inputs[name] = node
        return node

    # -- ops ------------------------------------------------------------
    def _apply(self, op: str, parents: Sequence[Node], attr: Optional[dict] = None,
               name: Optional[str] = None) -> Node:
        attr = attr or {}
        for p in parents:
            if p.graph is not self:
                raise GraphError(f"{op}: operand {p.name!r} belongs to another graph")
        name = name or f"{op}{len(self.nodes)}"
        values = [p.value for p in parents]
        self._check(op, name, values, attr)
        value = _OPS[op][0](values, attr)
        node = Node(self, op, tuple(parents), attr, name, value)
        self.nodes.append(node)
        self._evaluated = self.eager
        return node

    @staticmethod
    def _check(op: str, name: str, values: Sequence[np.ndarray], attr: dict) -> None:
        if op == "matmul":
            (r0, c0), (r1, c1) = values[0].shape, values[1].shape
            if c0 != r1:
                raise ShapeError(name, f"matmul inner dims differ: {values[0].shape} @ {values[1].shape}")
        elif op in ("add", "sub", "mul", "div"):
            _broadcast_shape(name, values[0].shape, values[1].shape)
        elif op == "concat-rows":
            cols = {v.shape[1] for v in values}
            if len(cols) != 1:
                raise ShapeError(name, f"concat-rows needs equal column counts, got {sorted(cols)}")
        elif op == "slice-rows":
            if not 0 <= attr["start"] <= attr["stop"] <= values[0].shape[0]:
                raise ShapeError(name, f"row slice {attr['start']}:{attr['stop']} out of range")

    def matmul(self, a, b, name=None):
        return self._apply("matmul", (a, b), name=name)

    def add(self, a, b, name=None):
        return self._apply("add", (a, b), name=name)

    def sub(self, a, b, name=None):
        return self._apply("sub", (a, b), name=name)

    def mul(self, a, b, name=None):
        return self._apply("mul", (a, b), name=name)

    def div(self, a, b, name=None):
        return self._apply("div", (a, b), name=name)

    def scale(self, a, c: float, name=None):
        return self._apply("scale", (a,), {"c": float(c)}, name)

    def relu(self, a, name=None):
        return self._apply("relu", (a,), name=name)

    def tanh(self, a, name=None):
        return self._apply("tanh", (a,), name=name)

    def sigmoid(self, a, name=None):
        return self._apply("sigmoid", (a,), name=name)

    def softmax_rows(self, a, name=None):
        return self._apply("softmax-rows", (a,), name=name)

    def log(self, a, floor: float = EPS, name=None):
        return self._apply("log", (a,), {"floor": float(floor)}, name)

    def pow(self, a, p: float, floor: float = EPS, name=None):
        return self._apply("pow", (a,), {"p": float(p), "floor": float(floor)}, name)

    def exp(self, a, name=None):
        return self._apply("exp", (a,), name=name)

    def clamp(self, a, lo: Optional[float] = None, hi: Optional[float] = None, name=None):
        return self._apply("clamp", (a,), {"lo": lo, "hi": hi}, name)

    def row_sum(self, a, name=None):
        return self._apply("row-sum", (a,), name=name)

    def sum(self, a, name=None):
        return self._apply("sum", (a,), name=name)

    def mean(self, a, name=None):
        return self._apply("mean", (a,), name=name)

    def concat_rows(self, parts: Sequence[Node], name=None):
        if not parts:
            raise GraphError("concat-rows of nothing")
        return self._apply("concat-rows", tuple(parts), name=name)

    def slice_rows(self, a, start: int, stop: int, name=None):
        return self._apply("slice-rows", (a,), {"start": int(start), "stop": int(stop)}, name)

    def grad_reversal(self, a, lam: float, name=None):
        return self._apply("grad-reversal", (a,), {"lam": float(lam)}, name)

    # -- evaluation -----------------------------------------------------
    def forward(self, bindings: Optional[Mapping[str, np.ndarray]] = None,
                root: Optional[Node] = None) -> np.ndarray:
        """Re-evaluate the tape.  ``bindings`` may rebind inputs and parameters."""
        bindings = dict(bindings or {})
        start = 0 if not self._evaluated or not bindings else len(self.nodes)
        for key, val in bindings.items():
            node = self.inputs.get(key) or self.params.get(key)
            if node is None:
                raise GraphError(f"unknown binding {key!r}")
            val = _as2d(val)
            if val.shape != node.value.shape:
                raise ShapeError(key, f"bound shape {val.shape} != declared {node.value.shape}")
            node.value = val
            start = min(start, self._position(node))
        # nodes created before every rebound leaf cannot depend on it
        for node in self.nodes[start:]:
            if node.op in ("constant", "parameter", "input"):
                continue
            values = [p.value for p in node.parents]
            self._check(node.op, node.name, values, node.attr)
            node.value = _OPS[node.op][0](values, node.attr)
        self._evaluated = True
        root = root or self.root or self.nodes[-1]
        return root.value

    def _position(self, node: Node) -> int:
        if self._index is None or len(self._index) != len(self.nodes):
            self._index = {id(n): k for k, n in enumerate(self.nodes)}
        return self._index[id(node)]

    def backward(self, root: Optional[Node] = None) -> Dict[str, np.ndarray]:
        """Accumulate d(root)/d(node) into every node; return parameter gradients."""
        if not self._evaluated:
            raise GraphError("backward called before forward")
        root = root or self.root or self.nodes[-1]
        if root.shape != (1, 1):
            raise GraphError(f"backward needs a scalar root, {root.name!r} has shape {root.shape}")
        for node in self.nodes:
            node.adjoint = None
        root.adjoint = np.ones((1, 1))
        upto = self.nodes.index(root)
        for node in reversed(self.nodes[: upto + 1]):
            if node.adjoint is None or not node.parents:
                continue
            values = [p.value for p in node.parents]
            grads = _OPS[node.op][1](values, node.value, node.adjoint, node.attr)
            for parent, g in zip(node.parents, grads):
                parent.adjoint = g if parent.adjoint is None else parent.adjoint + g
        out = {}
        for name, node in self.params.items():
            out[name] = node.adjoint if node.adjoint is not None else np.zeros_like(node.value)
        return out


def forward(graph: Graph, inputs: Optional[Mapping[str, np.ndarray]] = None) -> np.ndarray:
    return graph.forward(inputs)


def backward(graph: Graph) -> Dict[str, np.ndarray]:
    return graph.backward()


def numeric_gradient(fn: Callable[[], float], arrays: Iterable[np.ndarray],
                     step: float = 1e-5) -> List[np.ndarray]:
    """Central differences of ``fn`` w.r.t. each array, perturbed in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up = fn()
            arr[idx] = orig - step
            down = fn()
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """||a - n|| / max(||a||, ||n||, floor), Frobenius norms."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)
