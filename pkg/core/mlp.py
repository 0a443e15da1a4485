"""Feed-forward networks on top of the reverse-mode tape.

Parameter flattening order is fixed: layers in order, each layer's weight
matrix (shape ``out x in``) row-major, then its bias. Optimizer state,
``vjp_params`` and checkpoints all use this order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core import adcore
from core.adcore import Node, Tape, as_tensor
from core.exceptions import ContractError, DimensionError

Head = Callable[[Node], Node]


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "tanh"


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def spec(self) -> LayerSpec:
        return LayerSpec(self.weight.shape[1], self.weight.shape[0], self.activation)


def layer_specs(in_dim: int, hidden: Sequence[int], out_dim: int,
                activation: str = "tanh", out_activation: str = "identity") -> List[LayerSpec]:
    """Chain of layer specs for ``in_dim -> hidden... -> out_dim``."""
    dims = [in_dim, *hidden, out_dim]
    specs = []
    for k in range(len(dims) - 1):
        act = out_activation if k == len(dims) - 2 else activation
        specs.append(LayerSpec(dims[k], dims[k + 1], act))
    return specs


class Mlp:
    """Multi-layer perceptron ``y = act(x W^T + b)`` applied layer by layer."""

    def __init__(self, layers: List[Layer]):
        if not layers:
            raise ContractError("an Mlp needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in adcore.ACTIVATIONS:
                raise ContractError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                raise DimensionError(f"layer {k}: weight {layer.weight.shape} / bias {layer.bias.shape}")
            if k > 0 and layers[k - 1].weight.shape[0] != layer.weight.shape[1]:
                raise DimensionError(
                    f"layer {k - 1} outputs {layers[k - 1].weight.shape[0]} but layer {k} expects {layer.weight.shape[1]}")
        self.layers = layers

    @classmethod
    def zeros(cls, specs: Sequence[LayerSpec]) -> "Mlp":
        return cls([Layer(np.zeros((s.out_dim, s.in_dim)), np.zeros(s.out_dim), s.activation) for s in specs])

    @classmethod
    def from_flat(cls, specs: Sequence[LayerSpec], flat: np.ndarray) -> "Mlp":
        net = cls.zeros(specs)
        net.set_flat_params(flat)
        return net

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def flat_params(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            parts.append(layer.weight.ravel())
            parts.append(layer.bias)
        return np.concatenate(parts).astype(np.float64)

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} parameters, got shape {flat.shape}")
        offset = 0
        for layer in self.layers:
            n_w = layer.weight.size
            layer.weight = flat[offset:offset + n_w].reshape(layer.weight.shape).copy()
            offset += n_w
            layer.bias = flat[offset:offset + layer.bias.size].copy()
            offset += layer.bias.size

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat_params())))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def build(self, tape: Tape, x: Node, trainable: bool = False) -> Tuple[Node, List[Tuple[Node, Node]]]:
        """Record the forward pass on ``tape``; returns output and (W, b) nodes."""
        make = tape.variable if trainable else tape.constant
        params = []
        h = x
        for layer in self.layers:
            w = make(layer.weight)
            b = make(layer.bias)
            params.append((w, b))
            h = adcore.ACTIVATIONS[layer.activation](h @ adcore.transpose(w) + b)
        return h, params


def _check_input(net: Mlp, input: np.ndarray) -> np.ndarray:
    x = as_tensor(input)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionError(f"input shape {x.shape} incompatible with in_dim {net.in_dim}")
    return x


def forward(net: Mlp, input: np.ndarray) -> np.ndarray:
    """Batch forward pass without recording a tape."""
    h = _check_input(net, input)
    for layer in net.layers:
        h = adcore.NUMPY_ACTIVATIONS[layer.activation](h @ layer.weight.T + layer.bias)
    return h


def flatten_grads(tape: Tape, params: List[Tuple[Node, Node]]) -> np.ndarray:
    parts = []
    for w, b in params:
        parts.append(tape.grad(w).ravel())
        parts.append(tape.grad(b))
    return np.concatenate(parts)


def grad_wrt_input(net: Mlp, input: np.ndarray, head: Optional[Head] = None) -> np.ndarray:
    """Gradient of a scalar head of the network output w.r.t. the input batch."""
    x_arr = _check_input(net, input)
    tape = Tape()
    x = tape.variable(x_arr)
    out, _ = net.build(tape, x)
    scalar = head(out) if head is not None else out
    tape.backward(scalar)
    grad = tape.grad(x)
    return grad.reshape(np.shape(input)) if np.ndim(input) == 1 else grad


def grad_wrt_params(net: Mlp, input: np.ndarray, head: Optional[Head] = None) -> np.ndarray:
    """Flat gradient of a scalar head w.r.t. every weight and bias."""
    x_arr = _check_input(net, input)
    tape = Tape()
    out, params = net.build(tape, tape.constant(x_arr), trainable=True)
    scalar = head(out) if head is not None else out
    tape.backward(scalar)
    return flatten_grads(tape, params)


def vjp_params(net: Mlp, input: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """``J^T v`` with ``J = d output / d params``, summed over the batch."""
    x_arr = _check_input(net, input)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.ndim == 1:
        cot = cot[None, :]
    tape = Tape()
    out, params = net.build(tape, tape.constant(x_arr), trainable=True)
    if cot.shape != out.shape:
        raise DimensionError(f"cotangent shape {cot.shape} != output shape {out.shape}")
    tape.backward(out, cot)
    return flatten_grads(tape, params)


def jacobian_params(net: Mlp, input: np.ndarray) -> np.ndarray:
    """Stacked Jacobian of shape ``(batch * out_dim, num_params)``.

    Row ``i * out_dim + k`` is the gradient of output coordinate ``k`` of
    sample ``i``.
    """
    x_arr = _check_input(net, input)
    rows = []
    for i in range(x_arr.shape[0]):
        tape = Tape()
        out, params = net.build(tape, tape.constant(x_arr[i:i + 1]), trainable=True)
        for k in range(net.out_dim):
            cot = np.zeros(out.shape)
            cot[0, k] = 1.0
            tape.backward(out, cot)
            rows.append(flatten_grads(tape, params))
    return np.vstack(rows)


def jacobian_input(net: Mlp, input: np.ndarray) -> np.ndarray:
    """Per-sample input Jacobians, shape ``(batch, out_dim, in_dim)``.

    Rows of a batch do not interact, so one backward pass per output
    coordinate yields that coordinate's gradient for every sample.
    """
    x_arr = _check_input(net, input)
    tape = Tape()
    x = tape.variable(x_arr)
    out, _ = net.build(tape, x)
    jac = np.empty((x_arr.shape[0], net.out_dim, net.in_dim))
    for k in range(net.out_dim):
        cot = np.zeros(out.shape)
        cot[:, k] = 1.0
        tape.backward(out, cot)
        jac[:, k, :] = tape.grad(x)
    return jac


def init_gaussian(specs: Sequence[LayerSpec], stddev: float, rng: np.random.Generator) -> Mlp:
    """Weights i.i.d. N(0, stddev^2), biases zero."""
    if not stddev > 0.0:
        raise ContractError(f"stddev must be positive, got {stddev}")
    layers = []
    for s in specs:
        weight = rng.normal(0.0, stddev, size=(s.out_dim, s.in_dim))
        layers.append(Layer(weight, np.zeros(s.out_dim), s.activation))
    return Mlp(layers)
