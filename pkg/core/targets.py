"""Analytic target densities and the target-density capability.

Anything exposing ``dim``, ``log_prob(x)`` and ``score(x)`` on a batch
``x`` of shape ``(n, d)`` can be sampled with SVGD: the analytic families
here, the energy models in ``core.energy`` and their labelled views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from core.adcore import as_tensor
from core.exceptions import ContractError, DimensionError
from core.utils import central_difference, relative_error

_LOG_2PI = float(np.log(2.0 * np.pi))


@runtime_checkable
class TargetDensity(Protocol):
    dim: int

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized log density per row."""
        ...

    def score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the log density per row."""
        ...


def as_batch(x: np.ndarray, dim: int) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(-1, dim)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


@dataclass
class GaussianTarget:
    """Diagonal Gaussian ``N(mean, diag(var))``."""
    mean: np.ndarray
    var: np.ndarray
    family: str = field(default="gaussian", init=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.var = np.broadcast_to(np.asarray(self.var, dtype=np.float64), self.mean.shape).copy()
        if np.any(self.var <= 0.0):
            raise ContractError("Gaussian variances must be positive")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x, self.dim)
        return -0.5 * np.sum((x - self.mean) ** 2 / self.var + np.log(self.var) + _LOG_2PI, axis=1)

    def score(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x, self.dim)
        return (self.mean - x) / self.var

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.dim))


@dataclass
class GmmTarget:
    """Mixture of diagonal Gaussians."""
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray
    family: str = field(default="gmm", init=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        vars_ = np.asarray(self.vars, dtype=np.float64)
        if vars_.ndim == 1:
            vars_ = vars_[:, None]
        self.vars = np.broadcast_to(vars_, self.means.shape).copy()
        if self.weights.shape != (self.means.shape[0],):
            raise DimensionError(f"{self.weights.shape[0]} weights for {self.means.shape[0]} components")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ContractError("mixture weights must be nonnegative and sum to 1")
        if np.any(self.vars <= 0.0):
            raise ContractError("component variances must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_log_probs(self, x: np.ndarray) -> np.ndarray:
        diff = x[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff ** 2 / self.vars[None], axis=2)
        norm = np.sum(np.log(self.vars) + _LOG_2PI, axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w[None, :] - 0.5 * (quad + norm[None, :])

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x, self.dim)
        comp = self._component_log_probs(x)
        top = comp.max(axis=1, keepdims=True)
        return top[:, 0] + np.log(np.exp(comp - top).sum(axis=1))

    def score(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x, self.dim)
        comp = self._component_log_probs(x)
        resp = np.exp(comp - comp.max(axis=1, keepdims=True))
        resp /= resp.sum(axis=1, keepdims=True)
        comp_scores = (self.means[None, :, :] - x[:, None, :]) / self.vars[None]
        return np.einsum("nk,nkd->nd", resp, comp_scores)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.weights.shape[0], size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.sqrt(self.vars[idx]) * noise


AnalyticTarget = GaussianTarget | GmmTarget


def sample_analytic(target: AnalyticTarget, n: int, seed: int) -> np.ndarray:
    """Exact i.i.d. samples from an analytic target."""
    if n < 1:
        raise ContractError(f"sample count must be positive, got {n}")
    return target.sample(n, np.random.default_rng(seed))


def check_score(target: TargetDensity, points: np.ndarray, step: float = 1e-5) -> float:
    """Largest relative error between ``score`` and finite differences of ``log_prob``."""
    pts = as_batch(points, target.dim)
    scores = target.score(pts)
    worst = 0.0
    for i in range(pts.shape[0]):
        fd = central_difference(lambda z: float(target.log_prob(z[None, :])[0]), pts[i], step)
        worst = max(worst, relative_error(scores[i], fd))
    return worst
