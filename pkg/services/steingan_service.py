"""Amortized MLE of energy models in an adversarial loop (SteinGAN).

Every outer iteration updates the generator ``eta`` against the current
energy model with amortized SVGD (feature kernel on the encoder, bandwidth
``0.5 * median`` of the fake-batch codes) and then takes one discounted
ascent step on the energy parameters ``theta``:

    theta <- theta + lr * ((1 - gamma) E_fake[d phi/d theta] - E_real[d phi/d theta])

The energy learning rate follows the pacing controller, which compares the
mean energies of the real and fake batches. Freezing is suspended for the
first ``pacing_warmup`` iterations: at initialization the generator sits
near the energy minimum and the gap alone would freeze theta for good.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from core.checkpoint import network_from_record, network_record, restore_rng, rng_state, save_checkpoint
from core.energy import AutoencoderEnergy, JointEnergy, LabeledTarget
from core.exceptions import ContractError, DimensionError, NonFiniteError
from core.generator import Generator
from core.kernels import FeatureKernel, RbfKernel
from core.logging_config import get_logger
from core.metrics import MetricsCollector, get_metrics
from core.optim import Adam, Optimizer
from core.utils import substream
from models.checkpoint_models import CheckpointDocument
from models.config_models import AmortizeSettings, SteinGanSettings
from models.trace_models import MetricTrace
from services.amortize_service import AmortizeService
from services.dataset_service import Dataset
from services.svgd_service import check_divergence

logger = get_logger(__name__)


# ----------------------------
# Energy-parameter gradients
# ----------------------------

def _check_batches(real: np.ndarray, fake: np.ndarray) -> None:
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ContractError("real and fake batches must be nonempty")
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise DimensionError(f"real {real.shape} and fake {fake.shape} batches differ in dimension")


def mle_theta_gradient(model: AutoencoderEnergy, real_batch: np.ndarray, fake_batch: np.ndarray,
                       real_labels: Optional[np.ndarray] = None,
                       fake_labels: Optional[np.ndarray] = None) -> np.ndarray:
    """``E_fake[d phi/d theta] - E_real[d phi/d theta]``, the likelihood ascent direction."""
    _check_batches(real_batch, fake_batch)
    return model.grad_theta_phi(fake_batch, fake_labels) - model.grad_theta_phi(real_batch, real_labels)


def mle_theta_gradient_discounted(model: AutoencoderEnergy, real_batch: np.ndarray, fake_batch: np.ndarray,
                                  gamma: float, real_labels: Optional[np.ndarray] = None,
                                  fake_labels: Optional[np.ndarray] = None) -> np.ndarray:
    """``(1 - gamma) E_fake[d phi/d theta] - E_real[d phi/d theta]``; gamma = 0 is the plain gradient."""
    if not 0.0 <= gamma <= 1.0:
        raise ContractError(f"gamma must lie in [0, 1], got {gamma}")
    _check_batches(real_batch, fake_batch)
    fake_term = model.grad_theta_phi(fake_batch, fake_labels)
    real_term = model.grad_theta_phi(real_batch, real_labels)
    return (1.0 - gamma) * fake_term - real_term


# ----------------------------
# Pacing
# ----------------------------

class PacingMode(str, Enum):
    NORMAL = "normal"
    FAST = "fast"
    FROZEN = "frozen"


@dataclass(frozen=True)
class PacingState:
    mode: PacingMode = PacingMode.NORMAL
    last_real: float = float("nan")
    last_fake: float = float("nan")


def pacing_update(state: PacingState, mean_real_energy: float, mean_fake_energy: float,
                  freeze_gap: float) -> PacingState:
    """Frozen when the energy gap exceeds ``freeze_gap``, fast when real > fake, else normal."""
    if not (np.isfinite(mean_real_energy) and np.isfinite(mean_fake_energy)):
        raise NonFiniteError(f"pacing got non-finite energies real={mean_real_energy} fake={mean_fake_energy}")
    if abs(mean_real_energy - mean_fake_energy) > freeze_gap:
        mode = PacingMode.FROZEN
    elif mean_real_energy > mean_fake_energy:
        mode = PacingMode.FAST
    else:
        mode = PacingMode.NORMAL
    return replace(state, mode=mode, last_real=float(mean_real_energy), last_fake=float(mean_fake_energy))


# ----------------------------
# Sampling
# ----------------------------

def _check_label(gen: Generator, label: Optional[int]) -> None:
    if gen.conditional and label is None:
        raise ContractError("this generator is label-conditional; pass a label")
    if not gen.conditional and label is not None:
        raise ContractError("this generator takes no label")
    if label is not None and not 0 <= label < gen.num_classes:
        raise ContractError(f"label {label} out of range [0, {gen.num_classes})")


def sample_generator(gen: Generator, n: int, seed: int, label: Optional[int] = None) -> np.ndarray:
    """``n`` generator outputs from a fresh noise stream."""
    if n < 1:
        raise ContractError(f"sample count must be positive, got {n}")
    _check_label(gen, label)
    noise = gen.noise_source(np.random.default_rng(seed))
    labels = None if label is None else np.full(n, label, dtype=np.int64)
    return gen(noise.draw(n), labels)


def random_walk(gen: Generator, steps: int, step_size: float = 0.01, seed: int = 0,
                label: Optional[int] = None) -> np.ndarray:
    """Outputs along ``xi <- xi + step_size * Uniform([-1, 1])``; returns ``steps + 1`` rows."""
    if steps < 0:
        raise ContractError(f"steps must be nonnegative, got {steps}")
    _check_label(gen, label)
    rng = np.random.default_rng(seed)
    xi = gen.noise_source(rng).draw(1)
    path = [xi]
    for _ in range(steps):
        xi = xi + step_size * rng.uniform(-1.0, 1.0, size=xi.shape)
        path.append(xi)
    noise = np.vstack(path)
    labels = None if label is None else np.full(noise.shape[0], label, dtype=np.int64)
    return gen(noise, labels)


# ----------------------------
# Training loop
# ----------------------------

@dataclass
class SteinGanResult:
    generator: Generator
    energy: AutoencoderEnergy
    trace: MetricTrace
    pacing: PacingState
    iterations: int


TRACE_COLUMNS = ["iter", "mean_real_energy", "mean_fake_energy", "pacing_mode", "bandwidth",
                 "gen_update_norm", "theta_update_norm"]


class SteinGanTrainer:
    """Alternates amortized generator updates and discounted energy updates."""

    def __init__(self, dataset: Dataset, generator: Generator, energy: AutoencoderEnergy,
                 settings: SteinGanSettings, seed: int = 0, checkpoint_dir: Optional[str] = None,
                 metrics: Optional[MetricsCollector] = None):
        if len(dataset) == 0:
            raise ContractError("SteinGAN needs a nonempty dataset")
        if dataset.dim != energy.dim or generator.out_dim != energy.dim:
            raise DimensionError(
                f"dataset dim {dataset.dim}, generator out {generator.out_dim} and energy dim {energy.dim} differ")
        if isinstance(energy, JointEnergy):
            if not dataset.labeled:
                raise ContractError("a joint energy needs a labeled dataset")
            if generator.num_classes != energy.num_classes:
                raise ContractError("generator and joint energy disagree on the number of classes")
        self.dataset = dataset
        self.generator = generator
        self.energy = energy
        self.settings = settings
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir
        self.metrics = metrics or get_metrics()
        self.rngs: Dict[str, np.random.Generator] = {
            name: substream(seed, name) for name in ("data", "noise", "labels")
        }
        self.gen_optimizer: Optimizer = Adam(settings.gen_lr)
        self.energy_optimizer: Optimizer = Adam(settings.energy_lr)
        self.kernel = FeatureKernel(RbfKernel(1.0), energy.encoder)
        self.amortizer = AmortizeService(
            generator,
            AmortizeSettings(rule=settings.rule, batch_size=settings.batch_size, step=settings.gen_lr,
                             bandwidth_scale=settings.bandwidth_scale, lr=settings.gen_lr,
                             noise_dim=settings.noise_dim, noise_law=settings.noise_law),
            generator.noise_source(self.rngs["noise"]),
            kernel=self.kernel,
            optimizer=self.gen_optimizer,
            metrics=self.metrics,
        )
        self.pacing = PacingState()
        self.iteration = 0
        self._label_probs = dataset.label_frequencies() if generator.conditional else None

    @property
    def joint(self) -> bool:
        return isinstance(self.energy, JointEnergy)

    def _fake_labels(self, m: int) -> Optional[np.ndarray]:
        if self._label_probs is None:
            return None
        return self.rngs["labels"].choice(self._label_probs.shape[0], size=m, p=self._label_probs)

    def _pacing_for(self, real_energy: float, fake_energy: float) -> PacingState:
        policy = self.settings.pacing
        if policy == "frozen":
            return PacingState(PacingMode.FROZEN, real_energy, fake_energy)
        if policy == "off":
            return PacingState(PacingMode.NORMAL, real_energy, fake_energy)
        # Fast or normal only for the first pacing_warmup iterations.
        gap = math.inf if self.iteration < self.settings.pacing_warmup else self.settings.freeze_gap
        return pacing_update(self.pacing, real_energy, fake_energy, gap)

    def train_step(self) -> Dict[str, object]:
        """One outer iteration; returns the trace row."""
        s = self.settings
        it = self.iteration + 1
        m = s.batch_size

        # Updating eta
        gen_norm = 0.0
        for _ in range(s.eta_steps_per_theta):
            fake_labels = self._fake_labels(m)
            target = LabeledTarget(self.energy, fake_labels if self.joint else None)
            report = self.amortizer.step(target, s.rule, labels=fake_labels)
            gen_norm += report.update_norm
            check_divergence(report.outputs, s.divergence_threshold, it, what="generator output")

        # Updating theta
        real, real_labels = self.dataset.batch(m, self.rngs["data"])
        fake_labels = self._fake_labels(m)
        _, fake = self.generator.draw(self.amortizer.noise, m, fake_labels)
        check_divergence(fake, s.divergence_threshold, it, what="generator output")
        if not self.joint:
            real_labels = fake_labels = None
        real_energy = self.energy.mean_energy(real, real_labels)
        fake_energy = self.energy.mean_energy(fake, fake_labels)
        self.pacing = self._pacing_for(real_energy, fake_energy)

        theta_norm = 0.0
        if self.pacing.mode is PacingMode.FROZEN:
            self.metrics.increment_theta_skipped()
        else:
            lr = s.energy_lr_fast if self.pacing.mode is PacingMode.FAST else s.energy_lr
            self.energy_optimizer.set_lr(lr)
            grad = mle_theta_gradient_discounted(self.energy, real, fake, s.gamma, real_labels, fake_labels)
            theta = self.energy.flat_params()
            new_theta = self.energy_optimizer.step(theta, grad, "ascent")
            self.energy.set_flat_params(new_theta)
            theta_norm = float(np.linalg.norm(new_theta - theta))

        if not (self.generator.net.is_finite() and self.energy.is_finite()):
            raise NonFiniteError(f"NaN or Inf in network parameters at iteration {it}")

        self.iteration = it
        self.metrics.increment_steingan_iteration(self.pacing.mode.value)
        return {
            "iter": it,
            "mean_real_energy": real_energy,
            "mean_fake_energy": fake_energy,
            "pacing_mode": self.pacing.mode.value,
            "bandwidth": self.amortizer.kernel.bandwidth,
            "gen_update_norm": gen_norm,
            "theta_update_norm": theta_norm,
        }

    def train(self, iterations: Optional[int] = None) -> SteinGanResult:
        """Run ``iterations`` more outer steps; NaN aborts after dumping a checkpoint."""
        s = self.settings
        total = s.iterations if iterations is None else iterations
        end = self.iteration + total
        trace = MetricTrace(columns=list(TRACE_COLUMNS))
        logger.info("steingan_started start=%d iterations=%d batch=%d gamma=%g joint=%s conditional=%s",
                    self.iteration, total, s.batch_size, s.gamma, self.joint, self.generator.conditional)
        for _ in range(total):
            started = time.perf_counter()
            try:
                row = self.train_step()
            except NonFiniteError:
                path = self.dump_checkpoint("abort")
                logger.error("steingan_aborted iteration=%d checkpoint=%s", self.iteration + 1, path)
                raise
            self.metrics.record_step_duration(time.perf_counter() - started)
            it = row["iter"]
            if it % s.trace_every == 0 or it == end:
                trace.append(**row)
            if it % 100 == 0:
                logger.info("steingan_progress it=%d real=%.4f fake=%.4f mode=%s h=%.4g",
                            it, row["mean_real_energy"], row["mean_fake_energy"], row["pacing_mode"],
                            row["bandwidth"])
            if self.checkpoint_dir and it % s.checkpoint_every == 0:
                self.dump_checkpoint(f"iter{it:06d}")
        logger.info("steingan_finished iterations=%d pacing=%s", self.iteration, self.pacing.mode.value)
        return SteinGanResult(self.generator, self.energy, trace, self.pacing, self.iteration)

    # ----------------------------
    # Checkpoints
    # ----------------------------

    def checkpoint(self) -> CheckpointDocument:
        networks = {"generator": network_record(self.generator.net),
                    "encoder": network_record(self.energy.encoder),
                    "decoder": network_record(self.energy.decoder)}
        if self.joint:
            networks["head"] = network_record(self.energy.head)
        return CheckpointDocument(
            kind="steingan",
            iteration=self.iteration,
            networks=networks,
            optimizers={"generator": self.gen_optimizer.state_dict(),
                        "energy": self.energy_optimizer.state_dict()},
            rng_states={name: rng_state(rng) for name, rng in self.rngs.items()},
            metadata={
                "seed": self.seed,
                "noise_dim": self.generator.noise_dim,
                "noise_law": self.generator.noise_law,
                "num_classes": self.generator.num_classes,
                "energy_kind": "joint" if self.joint else "autoencoder",
                "margin": getattr(self.energy, "margin", None),
                "image_shape": list(self.dataset.image_shape) if self.dataset.image_shape else None,
                "pacing_mode": self.pacing.mode.value,
                "pacing_last_real": self.pacing.last_real,
                "pacing_last_fake": self.pacing.last_fake,
                "bandwidth": self.amortizer.kernel.bandwidth,
            },
        )

    def dump_checkpoint(self, tag: str) -> Optional[str]:
        if not self.checkpoint_dir:
            return None
        path = Path(self.checkpoint_dir) / f"checkpoint_{tag}.json"
        return save_checkpoint(path, self.checkpoint())

    def resume(self, doc: CheckpointDocument) -> None:
        """Restore parameters, optimizer moments, pacing and RNG streams from ``doc``."""
        if doc.kind != "steingan":
            raise ContractError(f"cannot resume SteinGAN from a {doc.kind} checkpoint")
        self.generator.net.set_flat_params(network_from_record(doc.networks["generator"]).flat_params())
        parts = [network_from_record(doc.networks[name]).flat_params() for name in
                 (["encoder", "decoder", "head"] if self.joint else ["encoder", "decoder"])]
        self.energy.set_flat_params(np.concatenate(parts))
        self.gen_optimizer.load_state_dict(doc.optimizers["generator"])
        self.energy_optimizer.load_state_dict(doc.optimizers["energy"])
        for name, state in doc.rng_states.items():
            if name in self.rngs:
                restore_rng(self.rngs[name], state)
        meta = doc.metadata
        self.pacing = PacingState(PacingMode(meta.get("pacing_mode", "normal")),
                                  float(meta.get("pacing_last_real", float("nan"))),
                                  float(meta.get("pacing_last_fake", float("nan"))))
        self.amortizer.kernel = self.kernel.with_bandwidth(float(meta.get("bandwidth", 1.0)))
        self.iteration = doc.iteration
        logger.info("steingan_resumed iteration=%d", self.iteration)
