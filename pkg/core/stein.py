"""Stein operator, Stein identity residuals and kernelized Stein discrepancy."""
from __future__ import annotations

from typing import Protocol, Tuple

import numpy as np

from core.adcore import as_tensor
from core.exceptions import ContractError, DimensionError, NonFiniteError
from core.kernels import FeatureKernel, Kernel, RbfKernel, pairwise_sq_dists
from core.mlp import Mlp, forward, jacobian_input
from core.targets import TargetDensity, as_batch


class VectorField(Protocol):
    """Smooth field ``f: R^d -> R^d`` with its divergence."""

    def value(self, x: np.ndarray) -> np.ndarray:
        ...

    def divergence(self, x: np.ndarray) -> np.ndarray:
        ...


class ZeroField:
    def value(self, x):
        return np.zeros_like(x)

    def divergence(self, x):
        return np.zeros(x.shape[0])


class ConstantField:
    def __init__(self, c: np.ndarray):
        self.c = np.atleast_1d(np.asarray(c, dtype=np.float64))

    def value(self, x):
        return np.broadcast_to(self.c, x.shape).copy()

    def divergence(self, x):
        return np.zeros(x.shape[0])


class LinearField:
    """``f(x) = A x + b``; divergence is ``trace(A)``."""

    def __init__(self, a: np.ndarray, b: np.ndarray = None):
        self.a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if self.a.shape[0] != self.a.shape[1]:
            raise DimensionError(f"linear field needs a square matrix, got {self.a.shape}")
        self.b = np.zeros(self.a.shape[0]) if b is None else np.asarray(b, dtype=np.float64)

    def value(self, x):
        return x @ self.a.T + self.b

    def divergence(self, x):
        return np.full(x.shape[0], float(np.trace(self.a)))


class MlpField:
    """Network-valued field; divergence is the trace of the input Jacobian."""

    def __init__(self, net: Mlp):
        if net.in_dim != net.out_dim:
            raise DimensionError(f"vector field must map R^d to R^d, got {net.in_dim}->{net.out_dim}")
        self.net = net

    def value(self, x):
        return forward(self.net, x)

    def divergence(self, x):
        jac = jacobian_input(self.net, x)
        return np.trace(jac, axis1=1, axis2=2)


def stein_op_values(p: TargetDensity, f: VectorField, x: np.ndarray) -> np.ndarray:
    """``grad log p(x)^T f(x) + div f(x)`` for every row of ``x``."""
    x = as_batch(x, p.dim)
    vals = np.sum(p.score(x) * f.value(x), axis=1) + f.divergence(x)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError("Stein operator produced a non-finite value")
    return vals


def stein_op_apply(p: TargetDensity, f: VectorField, x: np.ndarray) -> float:
    """Stein operator applied to ``f`` at a single point."""
    x = as_tensor(x).reshape(1, -1)
    return float(stein_op_values(p, f, x)[0])


def stein_identity_stats(p: TargetDensity, f: VectorField, samples: np.ndarray) -> Tuple[float, float]:
    """Absolute mean and sample standard deviation of the Stein operator."""
    samples = as_batch(samples, p.dim)
    if samples.shape[0] == 0:
        raise ContractError("Stein identity residual needs at least one sample")
    vals = stein_op_values(p, f, samples)
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return abs(float(np.mean(vals))), std


def stein_identity_residual(p: TargetDensity, f: VectorField, samples: np.ndarray) -> float:
    """``|mean of A_p f|`` over samples that were drawn from ``p``."""
    return stein_identity_stats(p, f, samples)[0]


def ksd_estimate(particles: np.ndarray, p: TargetDensity, kernel: Kernel) -> float:
    """V-statistic of the Stein kernel induced by ``p`` and an RBF kernel.

    With ``r = x - y`` and ``k = exp(-|r|^2 / h^2)``::

        u(x, y) = k * (s_x.s_y + (2/h^2)(s_x - s_y).r + 2d/h^2 - 4|r|^2/h^4)

    The diagonal is included, so the estimate is nonnegative up to roundoff.
    """
    if isinstance(kernel, FeatureKernel):
        if kernel.embedder is not None:
            raise ContractError("KSD monitoring supports the identity embedding only")
        kernel = kernel.base
    if not isinstance(kernel, RbfKernel):
        raise ContractError(f"unsupported kernel {type(kernel).__name__}")
    x = as_batch(particles, p.dim)
    n, d = x.shape
    if n < 2:
        raise ContractError(f"KSD needs at least 2 particles, got {n}")
    h2 = kernel.bandwidth ** 2
    s = p.score(x)
    sq = pairwise_sq_dists(x, x)
    K = np.exp(-sq / h2)
    ss = s @ s.T
    # (s_i - s_j) . (x_i - x_j)
    sx = np.sum(s * x, axis=1)
    cross = sx[:, None] - s @ x.T - x @ s.T + sx[None, :]
    u = K * (ss + (2.0 / h2) * cross + 2.0 * d / h2 - 4.0 * sq / h2 ** 2)
    return float(u.mean())
