"""Reverse-mode automatic differentiation over dense float64 arrays.

Every gradient in the library (scores of energy models, generator
parameter gradients, kernel gradients through an encoder) flows through
this tape. A ``Tape`` records primitives in execution order, so parents
always precede children; ``Tape.backward`` walks the records once, in
reverse.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. External
input passes through ``as_tensor`` which rejects float32 and non-finite
values.
"""
from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import ContractError, DimensionError, NonFiniteError

ArrayLike = Union[np.ndarray, float, int, Sequence]
Vjp = Callable[[np.ndarray], np.ndarray]


def as_tensor(data: ArrayLike, name: str = "input") -> np.ndarray:
    """Validate external input and return a float64 copy."""
    arr = np.asarray(data)
    if arr.dtype in (np.float16, np.float32):
        raise ContractError(f"{name}: {arr.dtype} rejected, tensors are float64")
    arr = np.array(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a cotangent down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One recorded value on a tape."""

    __slots__ = ("tape", "index", "value", "parents", "requires_grad")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray,
                 parents: List[Tuple["Node", Vjp]], requires_grad: bool):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def __repr__(self) -> str:
        return f"Node(index={self.index}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._grads: Optional[List[Optional[np.ndarray]]] = None

    def variable(self, value: ArrayLike) -> Node:
        """Leaf that gradients are accumulated for."""
        return self._push(np.array(value, dtype=np.float64), [], True)

    def constant(self, value: ArrayLike) -> Node:
        """Leaf treated as fixed; no gradient flows into it."""
        return self._push(np.asarray(value, dtype=np.float64), [], False)

    def record(self, value: np.ndarray, parents: Sequence[Tuple[Node, Vjp]]) -> Node:
        live = [(p, fn) for p, fn in parents if p.requires_grad]
        return self._push(value, live, bool(live))

    def _push(self, value: np.ndarray, parents, requires_grad: bool) -> Node:
        node = Node(self, len(self.nodes), value, parents, requires_grad)
        self.nodes.append(node)
        return node

    def lift(self, value: Union[Node, ArrayLike]) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise ContractError("cannot mix nodes from different tapes")
            return value
        return self.constant(value)

    def backward(self, head: Node, cotangent: Optional[np.ndarray] = None) -> None:
        """Propagate cotangents from ``head`` to every node before it.

        Without an explicit cotangent the head must hold a single value.
        """
        if cotangent is None:
            if head.value.size != 1:
                raise ContractError(
                    f"backward needs a scalar head, got shape {head.shape}; reduce the output first")
            cotangent = np.ones_like(head.value)
        else:
            cotangent = np.asarray(cotangent, dtype=np.float64)
            if cotangent.shape != head.shape:
                raise DimensionError(f"cotangent shape {cotangent.shape} != output shape {head.shape}")

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[head.index] = cotangent
        for node in reversed(self.nodes[: head.index + 1]):
            g = grads[node.index]
            if g is None or not node.parents:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = grads[parent.index]
                grads[parent.index] = contrib if prev is None else prev + contrib
        self._grads = grads

    def grad(self, node: Node) -> np.ndarray:
        """Gradient of the last backward head with respect to ``node``."""
        if self._grads is None:
            raise ContractError("backward has not been run on this tape")
        g = self._grads[node.index] if node.index < len(self._grads) else None
        return np.zeros_like(node.value) if g is None else np.array(g, dtype=np.float64)


def _pair(a, b) -> Tuple[Node, Node]:
    tape = a.tape if isinstance(a, Node) else b.tape
    return tape.lift(a), tape.lift(b)


# ----------------------------
# Arithmetic
# ----------------------------

def add(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.record(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.record(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ])


def mul(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.record(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def div(a, b) -> Node:
    a, b = _pair(a, b)
    return a.tape.record(a.value / b.value, [
        (a, lambda g: _unbroadcast(g / b.value, a.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value ** 2), b.shape)),
    ])


def neg(a: Node) -> Node:
    return a.tape.record(-a.value, [(a, lambda g: -g)])


def matmul(a, b) -> Node:
    a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not chain")
    return a.tape.record(a.value @ b.value, [
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ])


# ----------------------------
# Elementwise
# ----------------------------

def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape.record(out, [(a, lambda g: g * (1.0 - out ** 2))])


def relu(a: Node) -> Node:
    mask = a.value > 0.0
    return a.tape.record(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid(a: Node) -> Node:
    out = _np_sigmoid(a.value)
    return a.tape.record(out, [(a, lambda g: g * out * (1.0 - out))])


def identity(a: Node) -> Node:
    return a


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape.record(out, [(a, lambda g: g * out)])


def log(a: Node) -> Node:
    return a.tape.record(np.log(a.value), [(a, lambda g: g / a.value)])


def square(a: Node) -> Node:
    return a.tape.record(a.value ** 2, [(a, lambda g: 2.0 * g * a.value)])


def maximum(a: Node, floor: float) -> Node:
    """Elementwise max(a, floor); ties send no gradient to ``a``."""
    mask = a.value > floor
    return a.tape.record(np.where(mask, a.value, floor), [(a, lambda g: g * mask)])


# ----------------------------
# Reductions and indexing
# ----------------------------

def sum(a: Node, axis: Optional[int] = None) -> Node:  # noqa: A001
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.full(a.shape, float(g))
        return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

    return a.tape.record(np.asarray(out, dtype=np.float64), [(a, vjp)])


def mean(a: Node, axis: Optional[int] = None) -> Node:
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / count)


def take(a: Node, index) -> Node:
    """Basic or integer-array indexing; the VJP scatters back."""

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, index, g)
        return out

    return a.tape.record(np.array(a.value[index], dtype=np.float64), [(a, vjp)])


def row_norm(a: Node, tiny: float = 1e-12) -> Node:
    """Euclidean norm of every row of a 2-D node.

    Rows with norm below ``tiny`` get a zero subgradient.
    """
    norms = np.sqrt(np.sum(a.value ** 2, axis=1))
    safe = np.where(norms > tiny, norms, 1.0)

    def vjp(g):
        scale = np.where(norms > tiny, g / safe, 0.0)
        return a.value * scale[:, None]

    return a.tape.record(norms, [(a, vjp)])


def log_softmax(a: Node) -> Node:
    """Row-wise log-softmax of a 2-D node."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return a.tape.record(out, [(a, lambda g: g - probs * g.sum(axis=1, keepdims=True))])


# ----------------------------
# Activation registry
# ----------------------------

def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "identity": identity,
}

NUMPY_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda x: np.where(x > 0.0, x, 0.0),
    "sigmoid": _np_sigmoid,
    "identity": lambda x: x,
}


def transpose(a: Node) -> Node:
    return a.tape.record(a.value.T.copy(), [(a, lambda g: g.T)])
