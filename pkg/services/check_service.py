"""Built-in self-checks run by ``check`` mode.

Each check records a measured value against a threshold; the overall
status is ``passed`` only when every check passes.
"""
import time
from typing import Any, Callable, Dict, Tuple

import numpy as np

from core import adcore
from core.energy import AutoencoderEnergy, JointEnergy, LabeledTarget
from core.kernels import FeatureKernel, RbfKernel
from core.logging_config import get_logger
from core.mlp import grad_wrt_input, grad_wrt_params, init_gaussian, layer_specs
from core.stein import MlpField, stein_identity_stats
from core.targets import GaussianTarget, GmmTarget, check_score
from core.utils import central_difference, relative_error, substream
from services.steingan_service import (
    PacingMode,
    PacingState,
    mle_theta_gradient,
    mle_theta_gradient_discounted,
    pacing_update,
)
from services.svgd_service import svgd_direction

logger = get_logger(__name__)

CheckFn = Callable[[np.random.Generator], Tuple[float, float]]


def _check_mlp_param_gradient(rng):
    net = init_gaussian(layer_specs(3, [5], 2), 0.5, rng)
    x = rng.uniform(-3.0, 3.0, size=(4, 3))
    ad = grad_wrt_params(net, x, head=adcore.sum)

    def loss(flat):
        trial = net.copy()
        trial.set_flat_params(flat)
        return float(trial(x).sum())

    fd = central_difference(loss, net.flat_params())
    return relative_error(ad, fd), 1e-6


def _check_mlp_input_gradient(rng):
    net = init_gaussian(layer_specs(3, [5], 1), 0.5, rng)
    x = rng.uniform(-3.0, 3.0, size=(1, 3))
    ad = grad_wrt_input(net, x, head=adcore.sum)
    fd = central_difference(lambda z: float(net(z).sum()), x)
    return relative_error(ad, fd), 1e-6


def _check_gmm_score(rng):
    target = GmmTarget([0.3, 0.7], [[-2.0, 0.0], [2.0, 1.0]], [[1.0, 0.5], [0.7, 1.2]])
    return check_score(target, rng.uniform(-3.0, 3.0, size=(10, 2))), 1e-6


def _random_energy(rng, joint=False):
    enc = init_gaussian(layer_specs(3, [6], 2), 0.5, rng)
    dec = init_gaussian(layer_specs(2, [6], 3), 0.5, rng)
    if joint:
        head = init_gaussian(layer_specs(2, [], 3), 0.5, rng)
        return JointEnergy(enc, dec, head, margin=0.2)
    return AutoencoderEnergy(enc, dec)


def _check_energy_score(rng):
    energy = _random_energy(rng)
    return check_score(LabeledTarget(energy), rng.uniform(-3.0, 3.0, size=(10, 3))), 1e-5


def _check_energy_theta_gradient(rng):
    energy = _random_energy(rng, joint=True)
    x = rng.uniform(-3.0, 3.0, size=(5, 3))
    y = rng.integers(0, 3, size=5)
    ad = energy.grad_theta_phi(x, y)
    theta = energy.flat_params()

    def mean_phi(flat):
        energy.set_flat_params(flat)
        return energy.mean_energy(x, y)

    fd = central_difference(mean_phi, theta)
    energy.set_flat_params(theta)
    return relative_error(ad, fd), 1e-5


def _check_feature_kernel_gradient(rng):
    enc = init_gaussian(layer_specs(3, [6], 2), 0.5, rng)
    kernel = FeatureKernel(RbfKernel(1.5), enc)
    x = rng.uniform(-1.0, 1.0, size=3)
    x2 = rng.uniform(-1.0, 1.0, size=3)
    fd = central_difference(lambda z: kernel.eval(z, x2), x)
    return relative_error(kernel.grad_x(x, x2), fd), 1e-6


def _stein_ratio(target, rng, n=10_000):
    dim = target.dim
    field = MlpField(init_gaussian(layer_specs(dim, [4], dim), 0.5, rng))
    samples = target.sample(n, rng)
    residual, std = stein_identity_stats(target, field, samples)
    return residual / (4.0 * std / np.sqrt(n) + 1e-300)


def _check_stein_identity_gaussian(rng):
    return _stein_ratio(GaussianTarget([0.0], [1.0]), rng), 1.0


def _check_stein_identity_gmm(rng):
    return _stein_ratio(GmmTarget([0.5, 0.5], [-3.0, 3.0], [1.0, 1.0]), rng), 1.0


def _check_single_particle(rng):
    target = GmmTarget([0.4, 0.6], [[-1.0, 0.5], [2.0, -1.0]], [[1.0, 2.0], [0.5, 0.5]])
    x = rng.normal(size=(1, 2))
    delta = svgd_direction(x, target, RbfKernel(0.7))
    return float(np.max(np.abs(delta - target.score(x)))), 1e-12


def _check_pacing_table(rng):
    failures = 0
    state = PacingState()
    for real, fake in rng.uniform(-2.0, 2.0, size=(10_000, 2)):
        state = pacing_update(state, real, fake, 0.5)
        if abs(real - fake) > 0.5:
            expected = PacingMode.FROZEN
        elif real > fake:
            expected = PacingMode.FAST
        else:
            expected = PacingMode.NORMAL
        failures += state.mode is not expected
    return float(failures), 0.0


def _check_discount_consistency(rng):
    energy = _random_energy(rng)
    real = rng.normal(size=(6, 3))
    fake = rng.normal(size=(6, 3))
    plain = mle_theta_gradient(energy, real, fake)
    discounted = mle_theta_gradient_discounted(energy, real, fake, 0.0)
    return float(np.max(np.abs(plain - discounted))), 0.0


CHECKS: Dict[str, CheckFn] = {
    "mlp_param_gradient": _check_mlp_param_gradient,
    "mlp_input_gradient": _check_mlp_input_gradient,
    "gmm_score": _check_gmm_score,
    "energy_score": _check_energy_score,
    "energy_theta_gradient": _check_energy_theta_gradient,
    "feature_kernel_gradient": _check_feature_kernel_gradient,
    "stein_identity_gaussian": _check_stein_identity_gaussian,
    "stein_identity_gmm": _check_stein_identity_gmm,
    "svgd_single_particle": _check_single_particle,
    "pacing_rule_table": _check_pacing_table,
    "discount_consistency": _check_discount_consistency,
}


class CheckService:
    """Runs the self-check table."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def run_all(self) -> Dict[str, Any]:
        results: Dict[str, Any] = {
            "status": "passed",
            "checks": {},
            "warnings": [],
            "timestamp": time.time(),
        }
        for name, fn in CHECKS.items():
            rng = substream(self.seed, f"check.{name}")
            try:
                value, threshold = fn(rng)
                ok = bool(value <= threshold)
                results["checks"][name] = {"status": "ok" if ok else "failed",
                                           "value": value, "threshold": threshold}
                if not ok:
                    results["status"] = "failed"
                logger.info("check_done name=%s ok=%s value=%.3g threshold=%.3g", name, ok, value, threshold)
            except Exception as e:
                results["checks"][name] = {"status": "error", "error": str(e)}
                results["status"] = "failed"
                results["warnings"].append(f"{name}: {e}")
                logger.error("check_error name=%s error=%s", name, e)
        return results
