"""
Experiment configuration schema.

A config is a single YAML document validated by these models before any
compute starts. Unknown keys are rejected everywhere.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Annotated

from core.exceptions import ConfigValidationError

Activation = Literal["tanh", "relu", "sigmoid", "identity"]
UpdateRule = Literal["fit", "least_squares", "chain_rule"]
OptimizerName = Literal["sgd", "adagrad", "adam"]
NoiseLaw = Literal["uniform", "normal"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NetSpec(StrictModel):
    """Hidden widths and activations of a tanh/relu MLP."""
    hidden: List[int] = Field(default_factory=lambda: [16])
    activation: Activation = "tanh"
    out_activation: Activation = "identity"
    init_std: float = Field(0.02, gt=0.0, description="Weight init stddev")


class GaussianTargetSpec(StrictModel):
    family: Literal["gaussian"] = "gaussian"
    mean: List[float] = Field(..., min_length=1)
    var: Union[float, List[float]] = 1.0


class GmmTargetSpec(StrictModel):
    family: Literal["gmm"] = "gmm"
    weights: List[float] = Field(..., min_length=1)
    means: List[List[float]] = Field(..., min_length=1)
    vars: Union[List[float], List[List[float]]]

    @model_validator(mode="after")
    def _check_components(self):
        if len(self.means) != len(self.weights) or len(self.vars) != len(self.weights):
            raise ValueError("weights, means and vars need one entry per component")
        if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0.0:
            raise ValueError("weights must be nonnegative and sum to 1")
        return self


TargetSpec = Annotated[Union[GaussianTargetSpec, GmmTargetSpec], Field(discriminator="family")]


class InitSpec(StrictModel):
    """Initial particle law N(mean, std^2) per coordinate."""
    mean: Union[float, List[float]] = 0.0
    std: float = Field(1.0, gt=0.0)


class SvgdSettings(StrictModel):
    num_particles: int = Field(100, ge=1)
    step: float = Field(0.05, ge=0.0, description="Step size epsilon; 0 leaves particles fixed")
    iterations: int = Field(1000, ge=0)
    bandwidth: Literal["median", "fixed"] = "median"
    bandwidth_scale: float = Field(0.5, gt=0.0)
    fixed_bandwidth: float = Field(1.0, gt=0.0)
    step_rule: Literal["constant", "adagrad"] = "constant"
    init: InitSpec = Field(default_factory=InitSpec)
    trace_every: int = Field(10, ge=1)
    divergence_threshold: float = Field(1e8, gt=0.0)


class AmortizeSettings(StrictModel):
    rule: UpdateRule = "chain_rule"
    batch_size: int = Field(100, ge=1)
    step: float = Field(1e-3, ge=0.0, description="Epsilon of the fit and least-squares rules")
    inner_fit_steps: int = Field(5, ge=1)
    inner_lr: float = Field(0.1, gt=0.0)
    ridge: float = Field(1e-6, ge=0.0)
    max_params: int = Field(5000, ge=1)
    bandwidth_scale: float = Field(0.5, gt=0.0)
    iterations: int = Field(3000, ge=0)
    optimizer: OptimizerName = "adam"
    lr: float = Field(1e-3, gt=0.0)
    noise_dim: int = Field(100, ge=1)
    noise_law: NoiseLaw = "uniform"
    generator: NetSpec = Field(default_factory=NetSpec)
    eval_samples: int = Field(10000, ge=2)
    trace_every: int = Field(10, ge=1)
    divergence_threshold: float = Field(1e8, gt=0.0)


class DatasetSpec(StrictModel):
    kind: Literal["clusters", "two_moons", "glyphs", "idx"]
    n: int = Field(2000, ge=0)
    centers: List[List[float]] = Field(default_factory=lambda: [[-2.0, 0.0], [2.0, 0.0]])
    std: float = Field(0.3, gt=0.0)
    noise: float = Field(0.1, ge=0.0, description="Two-moons jitter")
    num_classes: int = Field(10, ge=2, le=10, description="Glyph classes")
    class_weights: Optional[List[float]] = None
    flip_prob: float = Field(0.05, ge=0.0, le=0.5)
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    crop: Optional[int] = Field(None, ge=1)
    side: Optional[int] = Field(None, ge=1)
    limit: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "idx" and not self.images_path:
            raise ValueError("idx datasets need images_path")
        if self.class_weights is not None:
            if min(self.class_weights) < 0.0 or abs(sum(self.class_weights) - 1.0) > 1e-9:
                raise ValueError("class_weights must be nonnegative and sum to 1")
        return self


class EnergySpec(StrictModel):
    kind: Literal["autoencoder", "joint"] = "autoencoder"
    code_dim: int = Field(8, ge=1)
    encoder_hidden: List[int] = Field(default_factory=lambda: [32])
    decoder_hidden: List[int] = Field(default_factory=lambda: [32])
    activation: Activation = "tanh"
    decoder_out_activation: Activation = "identity"
    margin: float = Field(0.2, ge=0.0)
    init_std: float = Field(0.02, gt=0.0)


class SteinGanSettings(StrictModel):
    iterations: int = Field(5000, ge=0)
    batch_size: int = Field(100, ge=2)
    gamma: float = Field(0.7, ge=0.0, le=1.0)
    gen_lr: float = Field(1e-3, gt=0.0)
    energy_lr: float = Field(1e-4, gt=0.0)
    energy_lr_fast: float = Field(5e-4, gt=0.0)
    freeze_gap: float = Field(0.5, gt=0.0)
    pacing: Literal["adaptive", "off", "frozen"] = "adaptive"
    pacing_warmup: int = Field(500, ge=0)
    eta_steps_per_theta: int = Field(1, ge=1)
    rule: UpdateRule = "chain_rule"
    bandwidth_scale: float = Field(0.5, gt=0.0)
    noise_dim: int = Field(100, ge=1)
    noise_law: NoiseLaw = "uniform"
    generator: NetSpec = Field(default_factory=NetSpec)
    energy: EnergySpec = Field(default_factory=EnergySpec)
    trace_every: int = Field(1, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    num_samples: int = Field(64, ge=1)
    walk_steps: int = Field(32, ge=0)
    walk_step_size: float = Field(0.01, gt=0.0)
    divergence_threshold: float = Field(1e8, gt=0.0)


class ExperimentConfig(StrictModel):
    name: str = "experiment"
    mode: Literal["svgd", "amortize", "steingan", "check"]
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    target: Optional[TargetSpec] = None
    dataset: Optional[DatasetSpec] = None
    svgd: Optional[SvgdSettings] = None
    amortize: Optional[AmortizeSettings] = None
    steingan: Optional[SteinGanSettings] = None

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode in ("svgd", "amortize") and self.target is None:
            raise ValueError(f"mode {self.mode} needs a target")
        if self.mode == "svgd" and self.svgd is None:
            self.svgd = SvgdSettings()
        if self.mode == "amortize" and self.amortize is None:
            self.amortize = AmortizeSettings()
        if self.mode == "steingan":
            if self.dataset is None:
                raise ValueError("mode steingan needs a dataset")
            if self.steingan is None:
                self.steingan = SteinGanSettings()
            if (self.steingan.energy.kind == "joint" and self.dataset.kind == "idx"
                    and not self.dataset.labels_path):
                raise ValueError("a joint energy needs labels; set dataset.labels_path")
        return self


def _error_path(loc) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def parse_config(data) -> ExperimentConfig:
    """Validate an already-parsed document."""
    if not isinstance(data, dict):
        raise ConfigValidationError("config must be a mapping at the top level", offending=["<root>"])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        paths = [_error_path(err["loc"]) for err in errors]
        details = "; ".join(f"{_error_path(err['loc'])}: {err['msg']}" for err in errors)
        raise ConfigValidationError(f"invalid config: {details}", offending=paths) from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigValidationError(f"cannot read config {path}: {e}", offending=[str(path)]) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigValidationError(f"config {path} is not valid YAML: {e}", offending=[str(path)]) from None
    return parse_config(data)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json", exclude_none=True), sort_keys=False)
