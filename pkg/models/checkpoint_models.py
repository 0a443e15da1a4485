"""
Checkpoint document models.

Network parameters are stored per layer as flat float lists in the fixed
flattening order (weight row-major, then bias).
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from core.utils import get_timestamp

CHECKPOINT_FORMAT = "steinforge-checkpoint"
CHECKPOINT_VERSION = 1


class LayerRecord(BaseModel):
    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)
    activation: str
    weight: List[float]
    bias: List[float]


class NetworkRecord(BaseModel):
    layers: List[LayerRecord] = Field(..., min_length=1)


class CheckpointDocument(BaseModel):
    """Everything needed to resume a run or sample from a trained generator."""
    format: Literal["steinforge-checkpoint"] = CHECKPOINT_FORMAT
    version: int = CHECKPOINT_VERSION
    kind: Literal["svgd", "amortize", "steingan"]
    iteration: int = Field(0, ge=0)
    created_at: str = Field(default_factory=get_timestamp)
    networks: Dict[str, NetworkRecord] = Field(default_factory=dict)
    optimizers: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    rng_states: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    particles: Optional[List[List[float]]] = None
    metadata: Dict[str, Any] = Field(default_factory=dict)
