"""Positive-definite kernels for SVGD and their spatial gradients.

The exponent convention is ``k(x, x') = exp(-||e(x) - e(x')||^2 / h^2)``
where ``e`` is the identity (``RbfKernel``) or an encoder network
(``FeatureKernel``). Bandwidths follow the median heuristic
``h = scale * median pairwise distance`` with a floor of 1e-6.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from core import adcore
from core.adcore import Tape, as_tensor
from core.exceptions import ContractError, DimensionError, NonFiniteError
from core.mlp import Mlp, forward, jacobian_input

BANDWIDTH_FLOOR = 1e-6


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(a), len(b))``."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_bandwidth(points: np.ndarray, scale: float = 0.5, embed: Optional[Mlp] = None) -> float:
    """``scale`` times the lower median of all n(n-1)/2 pairwise distances."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise ContractError(f"median bandwidth needs at least 2 points, got {pts.shape[0]}")
    if embed is not None:
        pts = forward(embed, pts)
    iu = np.triu_indices(pts.shape[0], k=1)
    dists = np.sort(np.sqrt(pairwise_sq_dists(pts, pts)[iu]))
    if not np.all(np.isfinite(dists)):
        raise NonFiniteError("pairwise distances are not finite")
    med = dists[(dists.size - 1) // 2]
    return max(scale * float(med), BANDWIDTH_FLOOR)


@dataclass(frozen=True)
class BandwidthPolicy:
    """How a kernel's bandwidth is chosen before each direction evaluation."""
    mode: str = "median"
    scale: float = 0.5
    fixed: float = 1.0

    def __post_init__(self):
        if self.mode not in ("median", "fixed"):
            raise ContractError(f"unknown bandwidth mode {self.mode!r}")
        if self.mode == "fixed" and not self.fixed > 0.0:
            raise ContractError("fixed bandwidth must be positive")


@dataclass(frozen=True)
class RbfKernel:
    bandwidth: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0.0:
            raise ContractError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def embedder(self) -> Optional[Mlp]:
        return None

    def with_bandwidth(self, h: float) -> "RbfKernel":
        return replace(self, bandwidth=h)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return x

    def eval(self, x: np.ndarray, x2: np.ndarray) -> float:
        x, x2 = _pair(x, x2)
        return float(np.exp(-np.sum((x - x2) ** 2) / self.bandwidth ** 2))

    def grad_x(self, x: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Gradient of ``k(x, x2)`` w.r.t. its first argument."""
        x, x2 = _pair(x, x2)
        k = np.exp(-np.sum((x - x2) ** 2) / self.bandwidth ** 2)
        return -(2.0 / self.bandwidth ** 2) * (x - x2) * k

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.exp(-pairwise_sq_dists(a, b) / self.bandwidth ** 2)

    def cross(self, particles: np.ndarray, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Kernel matrix ``K[j, q] = k(x_j, q)`` and the summed repulsion.

        The repulsion row for query ``q`` is ``sum_j grad_{x_j} k(x_j, q)``.
        """
        K = self.gram(particles, queries)
        c = 2.0 / self.bandwidth ** 2
        repulsion = c * (queries * K.sum(axis=0)[:, None] - K.T @ particles)
        return K, repulsion

    def refresh(self, points: np.ndarray, policy: BandwidthPolicy) -> "RbfKernel":
        if policy.mode == "fixed":
            return self.with_bandwidth(policy.fixed)
        return self.with_bandwidth(median_bandwidth(points, policy.scale))


@dataclass(frozen=True)
class FeatureKernel:
    """RBF kernel on encoder features ``E(x)``.

    ``embedder`` is held by reference, so energy-model updates to the encoder
    are seen by the kernel.
    """
    base: RbfKernel
    embedder: Optional[Mlp] = None

    @property
    def bandwidth(self) -> float:
        return self.base.bandwidth

    def with_bandwidth(self, h: float) -> "FeatureKernel":
        return replace(self, base=self.base.with_bandwidth(h))

    def embed(self, x: np.ndarray) -> np.ndarray:
        if self.embedder is None:
            return x
        return forward(self.embedder, x)

    def eval(self, x: np.ndarray, x2: np.ndarray) -> float:
        x, x2 = _pair(x, x2)
        e = self.embed(x[None, :])[0]
        e2 = self.embed(x2[None, :])[0]
        return self.base.eval(e, e2)

    def grad_x(self, x: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Gradient of ``k(x, x2)`` w.r.t. ``x``, chained through the encoder."""
        x, x2 = _pair(x, x2)
        if self.embedder is None:
            return self.base.grad_x(x, x2)
        tape = Tape()
        xn = tape.variable(x[None, :])
        e, _ = self.embedder.build(tape, xn)
        e2 = self.embed(x2[None, :])
        sq = adcore.sum(adcore.square(e - e2))
        k = adcore.exp(sq * (-1.0 / self.bandwidth ** 2))
        tape.backward(k)
        return tape.grad(xn)[0]

    def gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.base.gram(self.embed(a), self.embed(b))

    def cross(self, particles: np.ndarray, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.embedder is None:
            return self.base.cross(particles, queries)
        e_p = self.embed(particles)
        e_q = self.embed(queries)
        K = self.base.gram(e_p, e_q)
        c = 2.0 / self.bandwidth ** 2
        # grad_{x_j} k(x_j, q) = J_E(x_j)^T [-c (e_j - e_q) k_jq]
        code_grad = -c * (e_p[:, None, :] - e_q[None, :, :]) * K[:, :, None]
        jac = jacobian_input(self.embedder, particles)
        repulsion = np.einsum("jkd,jqk->qd", jac, code_grad)
        return K, repulsion

    def refresh(self, points: np.ndarray, policy: BandwidthPolicy) -> "FeatureKernel":
        if policy.mode == "fixed":
            return self.with_bandwidth(policy.fixed)
        return self.with_bandwidth(median_bandwidth(points, policy.scale, embed=self.embedder))


Kernel = Union[RbfKernel, FeatureKernel]


def _pair(x, x2) -> Tuple[np.ndarray, np.ndarray]:
    x = as_tensor(x, "x").reshape(-1)
    x2 = as_tensor(x2, "x2").reshape(-1)
    if x.shape != x2.shape:
        raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {x2.shape}")
    return x, x2
