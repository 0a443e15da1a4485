"""Run directories and artifact writers (CSV traces, CSV/PGM samples)."""
from __future__ import annotations

import math
import os
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from core.exceptions import OutputError
from core.logging_config import get_logger
from core.utils import ensure_directory
from models.trace_models import MetricTrace, format_cell

logger = get_logger(__name__)

PROBE_NAME = ".write_probe"


class OutputService:
    """Append-only run directory; reuse requires ``overwrite=True``."""

    def __init__(self, run_dir, overwrite: bool = False):
        self.run_dir = Path(run_dir)
        self.overwrite = overwrite

    def prepare(self) -> Path:
        """Create the directory and prove it is writable before compute starts."""
        if self.run_dir.exists():
            if not self.run_dir.is_dir():
                raise OutputError(f"{self.run_dir} exists and is not a directory")
            if any(self.run_dir.iterdir()) and not self.overwrite:
                raise OutputError(f"{self.run_dir} already holds a run; pass --overwrite to reuse it")
        try:
            ensure_directory(str(self.run_dir))
            probe = self.run_dir / PROBE_NAME
            probe.write_text("ok", encoding="utf-8")
            probe.unlink()
        except OSError as e:
            raise OutputError(f"output directory {self.run_dir} is not writable: {e}") from e
        logger.info("run_dir_ready path=%s overwrite=%s", self.run_dir, self.overwrite)
        return self.run_dir

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def write_text(self, name: str, text: str) -> str:
        path = self.path(name)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e}") from e
        return str(path)

    def write_trace(self, trace: MetricTrace, name: str = "trace.csv") -> str:
        path = self.write_text(name, trace.to_csv())
        logger.info("trace_written path=%s rows=%d", path, len(trace))
        return path

    def write_samples(self, samples: np.ndarray, name: str,
                      image_shape: Optional[Tuple[int, int]] = None, cols: Optional[int] = None) -> str:
        return write_samples(samples, self.path(name), image_shape, cols)


def write_csv(samples: np.ndarray, path) -> str:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    header = ",".join(f"x{k}" for k in range(samples.shape[1]))
    lines = [header] + [",".join(format_cell(float(v)) for v in row) for row in samples]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return str(path)


def grid_layout(count: int, cols: Optional[int] = None) -> Tuple[int, int]:
    """(rows, cols) of a tile grid, near-square unless ``cols`` is given."""
    if cols is None:
        cols = math.ceil(math.sqrt(count))
    cols = max(1, min(cols, count))
    rows = max(1, math.ceil(count / cols))
    return rows, cols


def tile_grid(images: np.ndarray, image_shape: Tuple[int, int], cols: Optional[int] = None) -> np.ndarray:
    h, w = image_shape
    count = images.shape[0]
    rows, cols = grid_layout(count, cols)
    grid = np.zeros((rows * h, cols * w))
    for i in range(count):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = images[i].reshape(h, w)
    return grid


def write_pgm(samples: np.ndarray, path, image_shape: Tuple[int, int], cols: Optional[int] = None) -> str:
    """Binary PGM (P5, maxval 255) grid; values map from [0, 1] and are clamped.

    ``cols`` fixes the tiles per row, so ``cols=len(samples)`` gives a strip.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    h, w = image_shape
    if samples.shape[1] != h * w:
        raise OutputError(f"samples of dimension {samples.shape[1]} do not fit {h}x{w} images")
    grid = tile_grid(samples, image_shape, cols)
    scaled = np.round(grid * 255.0)
    clamped = int(np.count_nonzero((scaled < 0.0) | (scaled > 255.0)))
    if clamped:
        logger.warning("pgm_values_clamped count=%d path=%s", clamped, path)
    pixels = np.clip(scaled, 0.0, 255.0).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(pixels.tobytes())
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    return str(path)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise OutputError(f"{path} is not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


def write_samples(samples: np.ndarray, path, image_shape: Optional[Sequence[int]] = None,
                  cols: Optional[int] = None) -> str:
    """CSV for low-dimensional samples, PGM grid when an image shape is given."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    if image_shape is None:
        written = write_csv(samples, path.with_suffix(".csv"))
    else:
        written = write_pgm(samples, path.with_suffix(".pgm"), (int(image_shape[0]), int(image_shape[1])), cols)
    logger.info("samples_written path=%s n=%d", written, np.atleast_2d(samples).shape[0])
    return written
