"""Versioned JSON checkpoints for networks, optimizer state and RNG state."""
import json
import os
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from core.exceptions import OutputError
from core.logging_config import get_logger
from core.mlp import Layer, Mlp
from models.checkpoint_models import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    CheckpointDocument,
    LayerRecord,
    NetworkRecord,
)

logger = get_logger(__name__)

PathLike = Union[str, Path]


def network_record(net: Mlp) -> NetworkRecord:
    return NetworkRecord(layers=[
        LayerRecord(
            in_dim=layer.weight.shape[1],
            out_dim=layer.weight.shape[0],
            activation=layer.activation,
            weight=layer.weight.ravel().tolist(),
            bias=layer.bias.tolist(),
        )
        for layer in net.layers
    ])


def network_from_record(record: NetworkRecord) -> Mlp:
    layers = []
    for rec in record.layers:
        weight = np.asarray(rec.weight, dtype=np.float64)
        if weight.size != rec.in_dim * rec.out_dim or len(rec.bias) != rec.out_dim:
            raise OutputError(f"layer record sizes disagree with {rec.out_dim}x{rec.in_dim}")
        layers.append(Layer(weight.reshape(rec.out_dim, rec.in_dim),
                            np.asarray(rec.bias, dtype=np.float64), rec.activation))
    return Mlp(layers)


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def save_checkpoint(path: PathLike, doc: CheckpointDocument) -> str:
    """Write ``doc`` atomically; float values round-trip exactly."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(doc.model_dump()), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as e:
        raise OutputError(f"cannot write checkpoint {path}: {e}") from e
    logger.info("checkpoint_saved path=%s kind=%s iteration=%d", path, doc.kind, doc.iteration)
    return str(path)


def load_checkpoint(path: PathLike) -> CheckpointDocument:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise OutputError(f"cannot read checkpoint {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise OutputError(f"checkpoint {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict) or raw.get("format") != CHECKPOINT_FORMAT:
        raise OutputError(f"{path} is not a {CHECKPOINT_FORMAT} document")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise OutputError(f"unsupported checkpoint version {raw.get('version')} (expected {CHECKPOINT_VERSION})")
    try:
        return CheckpointDocument.model_validate(raw)
    except ValidationError as e:
        raise OutputError(f"malformed checkpoint {path}: {e}") from e
