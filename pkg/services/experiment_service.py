"""Experiment orchestration: config in, artifacts on disk.

All randomness flows from the config's root seed through named substreams
(``data``, ``init``, ``noise``, ``labels``, ``eval``).
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from config import settings
from core.checkpoint import load_checkpoint, network_from_record, network_record, save_checkpoint
from core.energy import AutoencoderEnergy, JointEnergy
from core.exceptions import ContractError
from core.generator import Generator
from core.logging_config import get_logger, run_log
from core.metrics import MetricsCollector, reset_metrics
from core.mlp import init_gaussian, layer_specs
from core.targets import GaussianTarget, GmmTarget
from core.utils import sanitize_filename, substream
from models.checkpoint_models import CheckpointDocument
from models.config_models import (
    EnergySpec,
    ExperimentConfig,
    GaussianTargetSpec,
    NetSpec,
    dump_config,
)
from services.amortize_service import AmortizeService
from services.check_service import CheckService
from services.dataset_service import Dataset, build_dataset
from services.output_service import OutputService
from services.steingan_service import SteinGanTrainer, random_walk, sample_generator
from services.svgd_service import SvgdService

logger = get_logger(__name__)


def build_target(spec):
    if isinstance(spec, GaussianTargetSpec):
        return GaussianTarget(spec.mean, spec.var)
    return GmmTarget(spec.weights, spec.means, spec.vars)


def build_generator(net: NetSpec, noise_dim: int, noise_law: str, out_dim: int,
                    rng: np.random.Generator, num_classes: int = 0) -> Generator:
    specs = layer_specs(noise_dim + num_classes, net.hidden, out_dim, net.activation, net.out_activation)
    return Generator(init_gaussian(specs, net.init_std, rng), noise_dim, noise_law, num_classes)


def build_energy(spec: EnergySpec, dim: int, rng: np.random.Generator, num_classes: int = 0) -> AutoencoderEnergy:
    encoder = init_gaussian(layer_specs(dim, spec.encoder_hidden, spec.code_dim, spec.activation, spec.activation),
                            spec.init_std, rng)
    decoder = init_gaussian(layer_specs(spec.code_dim, spec.decoder_hidden, dim, spec.activation,
                                        spec.decoder_out_activation), spec.init_std, rng)
    if spec.kind == "joint":
        if num_classes < 2:
            raise ContractError("a joint energy needs a labeled dataset with at least 2 classes")
        head = init_gaussian(layer_specs(spec.code_dim, [], num_classes), spec.init_std, rng)
        return JointEnergy(encoder, decoder, head, spec.margin)
    return AutoencoderEnergy(encoder, decoder)


def build_trainer(config: ExperimentConfig, checkpoint_dir: Optional[str] = None,
                  metrics: Optional[MetricsCollector] = None) -> SteinGanTrainer:
    """Dataset, generator and energy for a steingan config, seeded from its root seed."""
    s = config.steingan
    dataset: Dataset = build_dataset(config.dataset, substream(config.seed, "data"))
    init_rng = substream(config.seed, "init")
    num_classes = dataset.num_classes if s.energy.kind == "joint" else 0
    gen = build_generator(s.generator, s.noise_dim, s.noise_law, dataset.dim, init_rng, num_classes)
    energy = build_energy(s.energy, dataset.dim, init_rng, num_classes)
    return SteinGanTrainer(dataset, gen, energy, s, seed=config.seed, checkpoint_dir=checkpoint_dir,
                           metrics=metrics)


def generator_from_checkpoint(doc: CheckpointDocument) -> Generator:
    if "generator" not in doc.networks:
        raise ContractError(f"{doc.kind} checkpoint holds no generator")
    meta = doc.metadata
    return Generator(network_from_record(doc.networks["generator"]), int(meta["noise_dim"]),
                     meta.get("noise_law", "uniform"), int(meta.get("num_classes", 0)))


class ExperimentService:
    """Runs one configured experiment into a run directory."""

    def __init__(self, config: ExperimentConfig, out_dir: Optional[str] = None, overwrite: bool = False,
                 resume_from: Optional[str] = None):
        if resume_from is not None and config.mode != "steingan":
            raise ContractError(f"only steingan runs can resume from a checkpoint, not {config.mode}")
        self.config = config
        self.resume_doc: Optional[CheckpointDocument] = load_checkpoint(resume_from) if resume_from else None
        run_dir = out_dir or config.output_dir or str(Path(settings.OUTPUT_ROOT) / sanitize_filename(config.name))
        self.output = OutputService(run_dir, overwrite)
        self.metrics = reset_metrics()

    def run(self) -> Dict[str, Any]:
        cfg = self.config
        self.output.prepare()
        self.output.write_text("config.yaml", dump_config(cfg))
        runner = {"svgd": self._run_svgd, "amortize": self._run_amortize,
                  "steingan": self._run_steingan, "check": self._run_check}[cfg.mode]
        with run_log(self.output.run_dir):
            logger.info("experiment_started name=%s mode=%s seed=%d", cfg.name, cfg.mode, cfg.seed)
            summary = runner()
            summary.update(mode=cfg.mode, run_dir=str(self.output.run_dir))
            self.output.write_text("metrics.prom", self.metrics.to_prometheus_format())
            self.output.write_text("summary.json", json.dumps(summary, indent=2, sort_keys=True, default=str))
            logger.info("experiment_finished name=%s mode=%s", cfg.name, cfg.mode)
        return summary

    def _run_svgd(self) -> Dict[str, Any]:
        cfg = self.config
        target = build_target(cfg.target)
        service = SvgdService(cfg.svgd, metrics=self.metrics)
        init = service.initial_particles(target.dim, substream(cfg.seed, "init"))
        result = service.run(init, target)
        self.output.write_trace(result.trace)
        self.output.write_samples(result.particles, "particles")
        save_checkpoint(self.output.path("checkpoint.json"), CheckpointDocument(
            kind="svgd", iteration=cfg.svgd.iterations, particles=result.particles.tolist(),
            metadata={"seed": cfg.seed, "bandwidth": result.bandwidth}))
        return {"final": result.trace.last()}

    def _run_amortize(self) -> Dict[str, Any]:
        cfg = self.config
        s = cfg.amortize
        target = build_target(cfg.target)
        gen = build_generator(s.generator, s.noise_dim, s.noise_law, target.dim, substream(cfg.seed, "init"))
        service = AmortizeService(gen, s, gen.noise_source(substream(cfg.seed, "noise")), metrics=self.metrics)
        result = service.train(target)
        self.output.write_trace(result.trace)
        samples = sample_generator(gen, s.eval_samples, int(substream(cfg.seed, "eval").integers(2**31)))
        self.output.write_samples(samples, "samples")
        save_checkpoint(self.output.path("checkpoint.json"), CheckpointDocument(
            kind="amortize", iteration=s.iterations,
            networks={"generator": network_record(gen.net)},
            optimizers={"generator": service.optimizer.state_dict()},
            metadata={"seed": cfg.seed, "noise_dim": gen.noise_dim, "noise_law": gen.noise_law,
                      "num_classes": 0, "image_shape": None}))
        return {"final": result.trace.last(),
                "sample_mean": samples.mean(axis=0).tolist(), "sample_var": samples.var(axis=0).tolist()}

    def _run_steingan(self) -> Dict[str, Any]:
        cfg = self.config
        s = cfg.steingan
        trainer = build_trainer(cfg, str(self.output.run_dir), self.metrics)
        dataset, gen = trainer.dataset, trainer.generator
        if self.resume_doc is not None:
            trainer.resume(self.resume_doc)
            if trainer.iteration > s.iterations:
                raise ContractError(
                    f"checkpoint is at iteration {trainer.iteration}, past the configured {s.iterations}")
            logger.info("experiment_resumed iteration=%d", trainer.iteration)
        result = trainer.train(s.iterations - trainer.iteration)
        self.output.write_trace(result.trace)
        trainer.dump_checkpoint("final")
        eval_seed = int(substream(cfg.seed, "eval").integers(2**31))
        if trainer.joint:
            for label in range(gen.num_classes):
                samples = sample_generator(gen, s.num_samples, eval_seed, label)
                self.output.write_samples(samples, f"samples_label{label}", dataset.image_shape)
        else:
            samples = sample_generator(gen, s.num_samples, eval_seed)
            self.output.write_samples(samples, "samples", dataset.image_shape)
        summary = {"final": result.trace.last(), "pacing_mode": result.pacing.mode.value,
                   "iterations": result.iterations}
        if s.walk_steps > 0:
            summary["random_walk"] = self._write_walk(gen, eval_seed, dataset.image_shape)
        return summary

    def _write_walk(self, gen: Generator, seed: int, image_shape) -> str:
        """One strip per label (a single strip when unconditional) along a noise-space walk."""
        s = self.config.steingan
        labels = list(range(gen.num_classes)) if gen.conditional else [None]
        path = np.vstack([random_walk(gen, s.walk_steps, s.walk_step_size, seed, label) for label in labels])
        return self.output.write_samples(path, "random_walk", image_shape, cols=s.walk_steps + 1)

    def _run_check(self) -> Dict[str, Any]:
        results = CheckService(self.config.seed).run_all()
        self.output.write_text("checks.json", json.dumps(results, indent=2, sort_keys=True, default=str))
        return results


def sample_from_checkpoint(path: str, n: int, seed: int, label: Optional[int] = None):
    """Generator samples plus the image shape recorded in the checkpoint."""
    doc = load_checkpoint(path)
    gen = generator_from_checkpoint(doc)
    shape = doc.metadata.get("image_shape")
    return sample_generator(gen, n, seed, label), (tuple(shape) if shape else None)
