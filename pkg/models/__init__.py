"""
Models package initialization.
Export all models for easy imports.
"""
from models.checkpoint_models import CheckpointDocument, LayerRecord, NetworkRecord
from models.config_models import (
    AmortizeSettings,
    DatasetSpec,
    EnergySpec,
    ExperimentConfig,
    GaussianTargetSpec,
    GmmTargetSpec,
    NetSpec,
    SteinGanSettings,
    SvgdSettings,
)
from models.trace_models import MetricTrace

__all__ = [
    "AmortizeSettings",
    "CheckpointDocument",
    "DatasetSpec",
    "EnergySpec",
    "ExperimentConfig",
    "GaussianTargetSpec",
    "GmmTargetSpec",
    "LayerRecord",
    "MetricTrace",
    "NetSpec",
    "NetworkRecord",
    "SteinGanSettings",
    "SvgdSettings",
]
