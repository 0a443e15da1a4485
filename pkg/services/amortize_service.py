"""Amortized SVGD: train a generator so its outputs follow SVGD dynamics.

Each step draws a noise batch, treats the generator outputs as the SVGD
particle set and moves the generator parameters ``eta`` with one of three
rules:

- ``fit``: regress the network onto ``x + eps * delta`` with a few
  backtracking gradient steps on the mean squared error.
- ``least_squares``: solve ``(J^T J + ridge I) d = J^T delta`` and set
  ``eta += eps * d``.
- ``chain_rule``: feed ``sum_i J_i^T delta_i`` to the optimizer as an
  ascent direction.

``reparam_kl_step`` is the reparameterized KL gradient for location-scale
generators and only serves as a reference for the rules above.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from core.exceptions import ContractError, DimensionError, SolverError
from core.generator import Generator, NoiseSource
from core.kernels import BandwidthPolicy, Kernel, RbfKernel
from core.logging_config import get_logger
from core.metrics import MetricsCollector, get_metrics
from core.mlp import forward, jacobian_params, vjp_params
from core.optim import Optimizer, make_optimizer
from core.stein import ksd_estimate
from core.targets import TargetDensity
from models.config_models import AmortizeSettings
from models.trace_models import MetricTrace, moment_columns
from services.svgd_service import check_divergence, svgd_direction

logger = get_logger(__name__)

MAX_BACKTRACKS = 40
CONDITION_LIMIT = 1e12


def least_squares_direction(jacobian: np.ndarray, delta: np.ndarray, ridge: float) -> np.ndarray:
    """Solve the ridge normal equations ``(J^T J + ridge I) d = J^T delta``."""
    jacobian = np.atleast_2d(np.asarray(jacobian, dtype=np.float64))
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if jacobian.shape[0] != delta.shape[0]:
        raise DimensionError(f"jacobian has {jacobian.shape[0]} rows, delta has {delta.shape[0]}")
    if ridge < 0.0:
        raise ContractError(f"ridge must be nonnegative, got {ridge}")
    gram = jacobian.T @ jacobian + ridge * np.eye(jacobian.shape[1])
    rhs = jacobian.T @ delta
    if ridge == 0.0 and np.linalg.cond(gram) > CONDITION_LIMIT:
        raise SolverError("normal equations are singular with ridge=0; set ridge > 0")
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"normal equations could not be solved ({e}); increase ridge") from e


def chain_rule_direction(gen: Generator, inputs: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``sum_i d f(eta; xi_i)/d eta ^T delta_i`` as a flat vector."""
    return vjp_params(gen.net, inputs, delta)


def location_scale_parts(gen: Generator):
    """``(W, b)`` of a generator of the form ``x = W xi + b`` with normal noise."""
    net = gen.net
    layer = net.layers[0]
    if (len(net.layers) != 1 or layer.activation != "identity" or gen.conditional
            or gen.noise_law != "normal" or layer.weight.shape[0] != layer.weight.shape[1]):
        raise ContractError(
            "reparameterized KL needs a single identity layer x = W xi + b with square W and normal noise")
    return layer.weight, layer.bias


def location_scale_score(gen: Generator, x: np.ndarray) -> np.ndarray:
    """Score of ``q = N(b, W W^T)``, the law of a location-scale generator."""
    w, b = location_scale_parts(gen)
    cov = w @ w.T
    try:
        return -np.linalg.solve(cov, (x - b).T).T
    except np.linalg.LinAlgError as e:
        raise SolverError(f"generator covariance is singular: {e}") from e


def kernel_smoothed_direction(queries: np.ndarray, samples: np.ndarray, p: TargetDensity,
                              score_q, kernel: Kernel) -> np.ndarray:
    """Monte Carlo ``E_q[(score_p(x) - score_q(x)) k(x, query)]`` for each query.

    For samples drawn from ``q`` this matches the SVGD direction at the
    queries, since ``E_q[score_q k] = -E_q[grad_x k]``.
    """
    diff = p.score(samples) - score_q(samples)
    K = kernel.gram(samples, np.atleast_2d(queries))
    return K.T @ diff / samples.shape[0]


@dataclass
class StepReport:
    rule: str
    update_norm: float
    bandwidth: float
    outputs: np.ndarray
    fit_objective: float = float("nan")
    fit_objectives: List[float] = field(default_factory=list)


@dataclass
class AmortizeResult:
    generator: Generator
    trace: MetricTrace


class AmortizeService:
    """Owns one generator and updates it against a target density."""

    def __init__(self, generator: Generator, settings: AmortizeSettings, noise: NoiseSource,
                 kernel: Optional[Kernel] = None, optimizer: Optional[Optimizer] = None,
                 metrics: Optional[MetricsCollector] = None):
        self.generator = generator
        self.settings = settings
        self.noise = noise
        self.kernel = kernel if kernel is not None else RbfKernel(1.0)
        self.policy = BandwidthPolicy("median", settings.bandwidth_scale)
        self.optimizer = optimizer or make_optimizer(settings.optimizer, settings.lr)
        self.metrics = metrics or get_metrics()

    # ----------------------------
    # Batch helpers
    # ----------------------------

    def _batch(self, labels: Optional[np.ndarray]):
        m = self.settings.batch_size if labels is None else len(labels)
        inputs, outputs = self.generator.draw(self.noise, m, labels)
        return inputs, outputs

    def _direction(self, outputs: np.ndarray, target: TargetDensity):
        if outputs.shape[0] >= 2:
            self.kernel = self.kernel.refresh(outputs, self.policy)
        self.metrics.set_bandwidth(self.kernel.bandwidth)
        return svgd_direction(outputs, target, self.kernel)

    def _apply(self, params: np.ndarray) -> float:
        old = self.generator.net.flat_params()
        self.generator.net.set_flat_params(params)
        return float(np.linalg.norm(params - old))

    # ----------------------------
    # Update rules
    # ----------------------------

    def step_fit(self, target: TargetDensity, labels: Optional[np.ndarray] = None) -> StepReport:
        """Regress the generator onto one SVGD step of its own outputs."""
        s = self.settings
        net = self.generator.net
        inputs, outputs = self._batch(labels)
        delta = self._direction(outputs, target)
        goal = outputs + s.step * delta
        m = inputs.shape[0]

        def objective(params):
            trial = net.copy()
            trial.set_flat_params(params)
            resid = forward(trial, inputs) - goal
            return float(np.sum(resid ** 2)) / m, resid

        params = net.flat_params()
        value, resid = objective(params)
        history = [value]
        for _ in range(s.inner_fit_steps):
            trial = net.copy()
            trial.set_flat_params(params)
            grad = vjp_params(trial, inputs, 2.0 * resid / m)
            lr = s.inner_lr
            for _ in range(MAX_BACKTRACKS):
                cand = params - lr * grad
                cand_value, cand_resid = objective(cand)
                if cand_value <= value:
                    params, value, resid = cand, cand_value, cand_resid
                    break
                lr *= 0.5
            if value > history[-1]:
                raise SolverError("fit objective increased during inner steps")
            history.append(value)
        norm = self._apply(params)
        return StepReport("fit", norm, self.kernel.bandwidth, outputs, value, history)

    def step_least_squares(self, target: TargetDensity, labels: Optional[np.ndarray] = None) -> StepReport:
        """Ridge least-squares step on the stacked parameter Jacobian."""
        s = self.settings
        net = self.generator.net
        if net.num_params > s.max_params:
            raise ContractError(
                f"least_squares needs a {net.num_params}x{net.num_params} solve; limit is {s.max_params}")
        inputs, outputs = self._batch(labels)
        delta = self._direction(outputs, target)
        jac = jacobian_params(net, inputs)
        direction = least_squares_direction(jac, delta.reshape(-1), s.ridge)
        norm = self._apply(net.flat_params() + s.step * direction)
        return StepReport("least_squares", norm, self.kernel.bandwidth, outputs)

    def step_chain_rule(self, target: TargetDensity, labels: Optional[np.ndarray] = None) -> StepReport:
        """Back-propagate the SVGD direction through the generator."""
        inputs, outputs = self._batch(labels)
        delta = self._direction(outputs, target)
        pseudo_grad = chain_rule_direction(self.generator, inputs, delta)
        params = self.optimizer.step(self.generator.net.flat_params(), pseudo_grad, "ascent")
        norm = self._apply(params)
        return StepReport("chain_rule", norm, self.kernel.bandwidth, outputs)

    def step_reparam_kl(self, target: TargetDensity) -> StepReport:
        """Reparameterized KL step with ``score_p - score_q`` in place of delta."""
        location_scale_parts(self.generator)
        inputs, outputs = self._batch(None)
        delta = target.score(outputs) - location_scale_score(self.generator, outputs)
        pseudo_grad = chain_rule_direction(self.generator, inputs, delta)
        params = self.optimizer.step(self.generator.net.flat_params(), pseudo_grad, "ascent")
        norm = self._apply(params)
        return StepReport("reparam_kl", norm, self.kernel.bandwidth, outputs)

    def step(self, target: TargetDensity, rule: Optional[str] = None,
             labels: Optional[np.ndarray] = None) -> StepReport:
        rule = rule or self.settings.rule
        started = time.perf_counter()
        if rule == "fit":
            report = self.step_fit(target, labels)
        elif rule == "least_squares":
            report = self.step_least_squares(target, labels)
        elif rule == "chain_rule":
            report = self.step_chain_rule(target, labels)
        elif rule == "reparam_kl":
            report = self.step_reparam_kl(target)
        else:
            raise ContractError(f"unknown update rule {rule!r}")
        self.metrics.increment_amortize_step(rule)
        self.metrics.record_step_duration(time.perf_counter() - started)
        return report

    # ----------------------------
    # Training loop
    # ----------------------------

    def train(self, target: TargetDensity, iterations: Optional[int] = None,
              rule: Optional[str] = None) -> AmortizeResult:
        """Run ``iterations`` amortized steps and trace batch statistics."""
        s = self.settings
        iterations = s.iterations if iterations is None else iterations
        rule = rule or s.rule
        d = self.generator.out_dim
        trace = MetricTrace(columns=["step", "fit_objective", "update_norm", "batch_ksd",
                                     *moment_columns("mean", d), *moment_columns("var", d)])
        logger.info("amortize_started rule=%s iterations=%d batch=%d params=%d",
                    rule, iterations, s.batch_size, self.generator.net.num_params)
        for it in range(1, iterations + 1):
            report = self.step(target, rule)
            check_divergence(report.outputs, s.divergence_threshold, it, what="generator output")
            if not self.generator.net.is_finite():
                check_divergence(self.generator.net.flat_params(), s.divergence_threshold, it,
                                 what="generator parameter")
            if it % s.trace_every == 0 or it == iterations:
                trace.append(**self._row(it, report, target))
                logger.debug("amortize_step it=%d update_norm=%.4g", it, report.update_norm)
        logger.info("amortize_finished rule=%s iterations=%d", rule, iterations)
        return AmortizeResult(self.generator, trace)

    def _row(self, it: int, report: StepReport, target: TargetDensity) -> Dict[str, float]:
        x = report.outputs
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        row = {"step": it, "fit_objective": report.fit_objective, "update_norm": report.update_norm,
               "batch_ksd": ksd_estimate(x, target, RbfKernel(report.bandwidth)) if x.shape[0] >= 2
               else float("nan")}
        row.update({f"mean_{k}": float(mean[k]) for k in range(x.shape[1])})
        row.update({f"var_{k}": float(var[k]) for k in range(x.shape[1])})
        return row
