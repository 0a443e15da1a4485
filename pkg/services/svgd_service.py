"""SVGD particle engine.

Each iteration moves every particle along

    delta(x_i) = 1/n sum_j [score(x_j) k(x_j, x_i) + grad_{x_j} k(x_j, x_i)]

with the self-term j = i included. The bandwidth is refreshed from the
current particles according to the configured policy.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.exceptions import ContractError, DivergenceError
from core.kernels import BandwidthPolicy, Kernel, RbfKernel
from core.logging_config import get_logger
from core.metrics import MetricsCollector, get_metrics
from core.optim import AdaGrad
from core.stein import LinearField, ksd_estimate, stein_identity_residual
from core.targets import TargetDensity, as_batch
from models.config_models import SvgdSettings
from models.trace_models import MetricTrace, moment_columns

logger = get_logger(__name__)


def svgd_direction_at(queries: np.ndarray, particles: np.ndarray,
                      p: TargetDensity, kernel: Kernel) -> np.ndarray:
    """SVGD direction field evaluated at ``queries`` using ``particles``."""
    particles = as_batch(particles, p.dim)
    queries = as_batch(queries, p.dim)
    n = particles.shape[0]
    if n < 1:
        raise ContractError("SVGD needs at least one particle")
    if not kernel.bandwidth > 0.0:
        raise ContractError(f"bandwidth must be positive, got {kernel.bandwidth}")
    scores = p.score(particles)
    K, repulsion = kernel.cross(particles, queries)
    return (K.T @ scores + repulsion) / n


def svgd_direction(particles: np.ndarray, p: TargetDensity, kernel: Kernel) -> np.ndarray:
    """SVGD direction for every particle of the set."""
    return svgd_direction_at(particles, particles, p, kernel)


def check_divergence(x: np.ndarray, threshold: float, iteration: int, what: str = "particle") -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what} coordinate at iteration {iteration}", iteration)
    worst = float(np.max(np.abs(x))) if x.size else 0.0
    if worst > threshold:
        raise DivergenceError(
            f"{what} coordinate {worst:.3g} exceeds {threshold:.3g} at iteration {iteration}; "
            f"reduce the step size", iteration)


@dataclass
class SvgdResult:
    particles: np.ndarray
    trace: MetricTrace
    bandwidth: float


class SvgdService:
    """Runs SVGD on a target density for a fixed number of iterations."""

    def __init__(self, settings: SvgdSettings, kernel: Optional[Kernel] = None,
                 metrics: Optional[MetricsCollector] = None):
        self.settings = settings
        self.kernel = kernel if kernel is not None else RbfKernel(settings.fixed_bandwidth)
        self.policy = BandwidthPolicy(settings.bandwidth, settings.bandwidth_scale, settings.fixed_bandwidth)
        self.metrics = metrics or get_metrics()

    def initial_particles(self, dim: int, rng: np.random.Generator) -> np.ndarray:
        init = self.settings.init
        mean = np.broadcast_to(np.asarray(init.mean, dtype=np.float64), (dim,))
        return mean + init.std * rng.standard_normal((self.settings.num_particles, dim))

    def _record(self, trace: MetricTrace, it: int, x: np.ndarray, p: TargetDensity, kernel: Kernel) -> None:
        d = x.shape[1]
        row = {"iteration": it}
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        row.update({f"mean_{k}": float(mean[k]) for k in range(d)})
        row.update({f"var_{k}": float(var[k]) for k in range(d)})
        row["ksd"] = ksd_estimate(x, p, RbfKernel(kernel.bandwidth)) if x.shape[0] >= 2 else float("nan")
        row["stein_residual"] = stein_identity_residual(p, LinearField(np.eye(d)), x)
        trace.append(**row)

    def run(self, particles: np.ndarray, p: TargetDensity) -> SvgdResult:
        """Apply the configured number of SVGD updates to ``particles``."""
        s = self.settings
        x = as_batch(particles, p.dim).copy()
        if x.shape[0] < 1:
            raise ContractError("SVGD needs at least one particle")
        d = x.shape[1]
        trace = MetricTrace(columns=["iteration", *moment_columns("mean", d), *moment_columns("var", d),
                                     "ksd", "stein_residual"])
        kernel = self._refresh(self.kernel, x)
        adagrad = AdaGrad(s.step) if s.step_rule == "adagrad" and s.step > 0.0 else None
        self._record(trace, 0, x, p, kernel)

        logger.info("svgd_started n=%d d=%d iterations=%d step=%g rule=%s",
                    x.shape[0], d, s.iterations, s.step, s.step_rule)
        for it in range(1, s.iterations + 1):
            started = time.perf_counter()
            kernel = self._refresh(kernel, x)
            direction = svgd_direction(x, p, kernel)
            if adagrad is not None:
                x = adagrad.step(x.ravel(), direction.ravel(), "ascent").reshape(x.shape)
            else:
                x = x + s.step * direction
            check_divergence(x, s.divergence_threshold, it)
            self.metrics.increment_svgd_iteration()
            self.metrics.record_step_duration(time.perf_counter() - started)
            if it % s.trace_every == 0 or it == s.iterations:
                self._record(trace, it, x, p, kernel)
                logger.debug("svgd_iteration it=%d h=%.4g ksd=%.4g", it, kernel.bandwidth, trace.last()["ksd"])

        self.metrics.set_bandwidth(kernel.bandwidth)
        logger.info("svgd_finished iterations=%d ksd=%.4g", s.iterations, trace.last()["ksd"])
        return SvgdResult(particles=x, trace=trace, bandwidth=kernel.bandwidth)

    def _refresh(self, kernel: Kernel, x: np.ndarray) -> Kernel:
        if self.policy.mode == "median" and x.shape[0] < 2:
            return kernel.with_bandwidth(self.policy.fixed)
        return kernel.refresh(x, self.policy)


def svgd_run(particles: np.ndarray, p: TargetDensity, settings: SvgdSettings,
             kernel: Optional[Kernel] = None) -> SvgdResult:
    return SvgdService(settings, kernel).run(particles, p)

