"""
Common utility functions used across the library.
"""
import os
import zlib
from datetime import datetime
from typing import Callable

import numpy as np


def get_timestamp() -> str:
    """Get current timestamp in ISO format."""
    return datetime.now().isoformat()


def sanitize_filename(filename: str) -> str:
    """Sanitize filename for safe file system usage."""
    safe_name = ''.join(c if c.isalnum() or c in '._-' else '_' for c in filename)
    return safe_name


def ensure_directory(directory: str) -> None:
    """Ensure directory exists, create if it doesn't."""
    os.makedirs(directory, exist_ok=True)


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Named random substream of a root seed.

    The stream key is a CRC32 of the name so the mapping is stable across
    processes and Python versions (unlike ``hash``).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=(key,)))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1.0) -> float:
    """Norm-relative error between two arrays with a unit floor on the scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / scale


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn(x)
        flat[i] = orig - step
        f_minus = fn(x)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
