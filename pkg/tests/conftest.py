# Shared fixtures for the SteinForge test suite
import os
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

os.environ.setdefault("STEINFORGE_LOG_LEVEL", "WARNING")

from core.energy import AutoencoderEnergy, JointEnergy  # noqa: E402
from core.mlp import init_gaussian, layer_specs  # noqa: E402

CONFIG_DIR = ROOT / "workspace" / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_energy(rng):
    """Autoencoder energy on R^3 with a 2-d code."""
    enc = init_gaussian(layer_specs(3, [6], 2), 0.5, rng)
    dec = init_gaussian(layer_specs(2, [6], 3), 0.5, rng)
    return AutoencoderEnergy(enc, dec)


@pytest.fixture
def tiny_joint_energy(rng):
    enc = init_gaussian(layer_specs(3, [6], 2), 0.5, rng)
    dec = init_gaussian(layer_specs(2, [6], 3), 0.5, rng)
    head = init_gaussian(layer_specs(2, [], 3), 0.5, rng)
    return JointEnergy(enc, dec, head, margin=0.2)


def write_idx_images(path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())
