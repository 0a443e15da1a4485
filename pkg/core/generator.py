"""Neural samplers ``x = f(eta; xi)`` and their noise sources."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from core.exceptions import ContractError, DimensionError
from core.mlp import Mlp, forward

NOISE_LAWS = ("uniform", "normal")


class NoiseSource:
    """I.i.d. noise ``xi`` drawn from Uniform([-1, 1]) or N(0, 1)."""

    def __init__(self, dim: int, law: str, rng: np.random.Generator):
        if dim < 1:
            raise ContractError(f"noise dimension must be positive, got {dim}")
        if law not in NOISE_LAWS:
            raise ContractError(f"unknown noise law {law!r}; choose from {NOISE_LAWS}")
        self.dim = dim
        self.law = law
        self.rng = rng

    def draw(self, m: int) -> np.ndarray:
        if self.law == "uniform":
            return self.rng.uniform(-1.0, 1.0, size=(m, self.dim))
        return self.rng.standard_normal((m, self.dim))


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"label out of range [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return out


class Generator:
    """A network fed with noise and, when conditional, a one-hot label.

    The network input is ``[xi, one_hot(y)]`` so ``net.in_dim`` must equal
    ``noise_dim + num_classes``.
    """

    def __init__(self, net: Mlp, noise_dim: int, noise_law: str = "uniform", num_classes: int = 0):
        if net.in_dim != noise_dim + num_classes:
            raise DimensionError(
                f"generator input {net.in_dim} != noise {noise_dim} + classes {num_classes}")
        if noise_law not in NOISE_LAWS:
            raise ContractError(f"unknown noise law {noise_law!r}")
        self.net = net
        self.noise_dim = noise_dim
        self.noise_law = noise_law
        self.num_classes = num_classes

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    @property
    def out_dim(self) -> int:
        return self.net.out_dim

    def noise_source(self, rng: np.random.Generator) -> NoiseSource:
        return NoiseSource(self.noise_dim, self.noise_law, rng)

    def inputs(self, xi: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        if self.conditional:
            if labels is None:
                raise ContractError("a label-conditional generator needs labels")
            labels = np.asarray(labels).reshape(-1)
            if labels.shape[0] != xi.shape[0]:
                raise DimensionError(f"{labels.shape[0]} labels for {xi.shape[0]} noise draws")
            return np.hstack([xi, one_hot(labels, self.num_classes)])
        if labels is not None:
            raise ContractError("labels given to an unconditional generator")
        return xi

    def __call__(self, xi: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return forward(self.net, self.inputs(xi, labels))

    def draw(self, noise: NoiseSource, m: int,
             labels: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Fresh batch; returns (network inputs, outputs)."""
        inputs = self.inputs(noise.draw(m), labels)
        return inputs, forward(self.net, inputs)
