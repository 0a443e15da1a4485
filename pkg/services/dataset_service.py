"""Datasets: synthetic desk-scale generators and an IDX (MNIST) loader."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from core.exceptions import ContractError, DatasetFormatError
from core.logging_config import get_logger
from models.config_models import DatasetSpec

logger = get_logger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GLYPH_SIDE = 8

# Seven-segment strokes on an 8x8 grid: (row slice, col slice)
_SEGMENTS = {
    "a": (slice(1, 2), slice(2, 6)),
    "b": (slice(1, 5), slice(5, 6)),
    "c": (slice(4, 8), slice(5, 6)),
    "d": (slice(7, 8), slice(2, 6)),
    "e": (slice(4, 8), slice(2, 3)),
    "f": (slice(1, 5), slice(2, 3)),
    "g": (slice(4, 5), slice(2, 6)),
}
_DIGIT_SEGMENTS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


@dataclass
class Dataset:
    samples: np.ndarray
    labels: Optional[np.ndarray]
    provenance: str
    num_classes: int = 0
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise DatasetFormatError(f"samples must be a matrix, got shape {self.samples.shape}")
        if self.labels is not None:
            if self.labels.shape != (self.samples.shape[0],):
                raise DatasetFormatError(f"{self.labels.shape[0]} labels for {self.samples.shape[0]} samples")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DatasetFormatError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def label_frequencies(self) -> np.ndarray:
        """Empirical class frequencies, used to draw labels for fake batches."""
        if self.labels is None:
            raise ContractError("dataset has no labels")
        counts = np.bincount(self.labels, minlength=self.num_classes).astype(np.float64)
        return counts / counts.sum()

    def batch(self, m: int, rng: np.random.Generator) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        idx = rng.integers(0, len(self), size=m)
        return self.samples[idx], None if self.labels is None else self.labels[idx]


def glyph_template(digit: int) -> np.ndarray:
    """Clean 8x8 seven-segment picture of ``digit`` with values in {0, 1}."""
    img = np.zeros((GLYPH_SIDE, GLYPH_SIDE))
    for seg in _DIGIT_SEGMENTS[digit]:
        rows, cols = _SEGMENTS[seg]
        img[rows, cols] = 1.0
    return img


def _class_labels(n: int, k: int, weights: Optional[list], rng: np.random.Generator) -> np.ndarray:
    probs = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if probs.shape != (k,):
        raise ContractError(f"class_weights needs {k} entries, got {probs.shape[0]}")
    return rng.choice(k, size=n, p=probs)


def gen_synthetic(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Build a synthetic dataset; deterministic given the generator state."""
    if spec.n == 0:
        raise DatasetFormatError("empty dataset: n must be positive")
    if spec.kind == "clusters":
        centers = np.asarray(spec.centers, dtype=np.float64)
        labels = _class_labels(spec.n, centers.shape[0], spec.class_weights, rng)
        samples = centers[labels] + spec.std * rng.standard_normal((spec.n, centers.shape[1]))
        ds = Dataset(samples, labels, f"clusters(k={centers.shape[0]},std={spec.std})", centers.shape[0])
    elif spec.kind == "two_moons":
        labels = _class_labels(spec.n, 2, spec.class_weights, rng)
        t = rng.uniform(0.0, np.pi, size=spec.n)
        upper = np.stack([np.cos(t), np.sin(t)], axis=1)
        lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        samples = np.where(labels[:, None] == 0, upper, lower)
        samples = samples + spec.noise * rng.standard_normal(samples.shape)
        ds = Dataset(samples, labels, f"two_moons(noise={spec.noise})", 2)
    elif spec.kind == "glyphs":
        k = spec.num_classes
        labels = _class_labels(spec.n, k, spec.class_weights, rng)
        templates = np.stack([glyph_template(c).ravel() for c in range(k)])
        flips = rng.random((spec.n, GLYPH_SIDE * GLYPH_SIDE)) < spec.flip_prob
        samples = np.abs(templates[labels] - flips.astype(np.float64))
        ds = Dataset(samples, labels, f"glyphs(k={k},flip={spec.flip_prob})", k, (GLYPH_SIDE, GLYPH_SIDE))
    else:
        raise ContractError(f"{spec.kind!r} is not a synthetic dataset kind")
    logger.info("dataset_generated kind=%s n=%d d=%d", spec.kind, len(ds), ds.dim)
    return ds


def _read_header(buf: bytes, count: int, path: Path) -> Tuple[int, ...]:
    need = 4 * count
    if len(buf) < need:
        raise DatasetFormatError(f"{path}: truncated IDX header", offset=len(buf))
    return tuple(int(v) for v in np.frombuffer(buf[:need], dtype=">u4"))


def _read_payload(buf: bytes, start: int, size: int, path: Path) -> np.ndarray:
    if len(buf) < start + size:
        raise DatasetFormatError(f"{path}: truncated IDX payload, expected {start + size} bytes", offset=len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=start)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}: {e}") from e


def center_crop(images: np.ndarray, crop: int) -> np.ndarray:
    rows, cols = images.shape[1:]
    if crop > min(rows, cols):
        raise ContractError(f"crop {crop} larger than images {rows}x{cols}")
    top = (rows - crop) // 2
    left = (cols - crop) // 2
    return images[:, top:top + crop, left:left + crop]


def downsample_nearest(images: np.ndarray, side: int) -> np.ndarray:
    rows, cols = images.shape[1:]
    r_idx = (np.arange(side) * rows) // side
    c_idx = (np.arange(side) * cols) // side
    return images[:, r_idx][:, :, c_idx]


def load_idx(images_path, labels_path=None, crop: Optional[int] = None,
             side: Optional[int] = None, limit: Optional[int] = None) -> Dataset:
    """Parse IDX image (and optional label) files into a dataset with pixels in [0, 1]."""
    images_path = Path(images_path)
    buf = _read_bytes(images_path)
    magic, = _read_header(buf, 1, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(f"{images_path}: bad image magic 0x{magic:08x}", offset=0)
    _, n, rows, cols = _read_header(buf, 4, images_path)
    if n == 0:
        raise DatasetFormatError(f"{images_path}: empty dataset", offset=4)
    pixels = _read_payload(buf, 16, n * rows * cols, images_path)
    images = pixels.reshape(n, rows, cols).astype(np.float64) / 255.0

    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        lbuf = _read_bytes(labels_path)
        lmagic, = _read_header(lbuf, 1, labels_path)
        if lmagic != IDX_LABELS_MAGIC:
            raise DatasetFormatError(f"{labels_path}: bad label magic 0x{lmagic:08x}", offset=0)
        _, ln = _read_header(lbuf, 2, labels_path)
        if ln != n:
            raise DatasetFormatError(f"{ln} labels for {n} images")
        labels = _read_payload(lbuf, 8, ln, labels_path).astype(np.int64)

    if limit is not None:
        images = images[:limit]
        labels = None if labels is None else labels[:limit]
    if crop is not None:
        images = center_crop(images, crop)
    if side is not None:
        images = downsample_nearest(images, side)
    num_classes = int(labels.max()) + 1 if labels is not None and labels.size else 0
    shape = images.shape[1:]
    logger.info("idx_loaded path=%s n=%d shape=%dx%d labeled=%s", images_path, images.shape[0],
                shape[0], shape[1], labels is not None)
    return Dataset(images.reshape(images.shape[0], -1), labels, f"idx({images_path.name})",
                   num_classes, (int(shape[0]), int(shape[1])))


def build_dataset(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    if spec.kind == "idx":
        return load_idx(spec.images_path, spec.labels_path, spec.crop, spec.side, spec.limit)
    return gen_synthetic(spec, rng)
