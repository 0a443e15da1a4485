"""Energy-based models ``p(x | theta) ∝ exp(-phi(x, theta))``.

The log-partition function is never evaluated; training only uses
differences of batch averages of ``d phi / d theta``.

- ``AutoencoderEnergy``: ``phi(x) = ||x - D(E(x))||`` (unsquared L2).
- ``JointEnergy``: ``phi(x, y) = ||x - D(E(x))|| + max(m, CE(y, head(E(x))))``.
- ``LabeledTarget``: a joint energy with labels fixed per row, usable as a
  target density by SVGD.
"""
from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from core import adcore
from core.adcore import Node, Tape, as_tensor
from core.exceptions import ContractError, DimensionError
from core.logging_config import get_logger
from core.mlp import Mlp, flatten_grads

logger = get_logger(__name__)

DEGENERATE_NORM = 1e-9


class AutoencoderEnergy:
    """Reconstruction-error energy built from an encoder/decoder pair."""

    takes_labels = False

    def __init__(self, encoder: Mlp, decoder: Mlp):
        if encoder.out_dim != decoder.in_dim or decoder.out_dim != encoder.in_dim:
            raise DimensionError(
                f"encoder {encoder.in_dim}->{encoder.out_dim} and decoder "
                f"{decoder.in_dim}->{decoder.out_dim} do not form D∘E: R^d -> R^d")
        self.encoder = encoder
        self.decoder = decoder

    @property
    def dim(self) -> int:
        return self.encoder.in_dim

    @property
    def networks(self) -> List[Mlp]:
        return [self.encoder, self.decoder]

    @property
    def num_params(self) -> int:
        return sum(net.num_params for net in self.networks)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([net.flat_params() for net in self.networks])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionError(f"expected {self.num_params} energy parameters, got {flat.shape}")
        offset = 0
        for net in self.networks:
            net.set_flat_params(flat[offset:offset + net.num_params])
            offset += net.num_params

    def is_finite(self) -> bool:
        return all(net.is_finite() for net in self.networks)

    def _check(self, x: np.ndarray, labels: Optional[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        if labels is not None:
            raise ContractError("AutoencoderEnergy takes no labels")
        return _as_points(x, self.dim), None

    def build(self, tape: Tape, x: Node, labels: Optional[np.ndarray],
              trainable: bool) -> Tuple[Node, Node, List[Tuple[Node, Node]]]:
        """Record ``phi`` per row; returns (phi, code, parameter nodes)."""
        code, enc_params = self.encoder.build(tape, x, trainable)
        recon, dec_params = self.decoder.build(tape, code, trainable)
        phi = adcore.row_norm(x - recon, tiny=DEGENERATE_NORM)
        return phi, code, enc_params + dec_params

    def phi(self, x: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        x, labels = self._check(x, labels)
        tape = Tape()
        phi, _, _ = self.build(tape, tape.constant(x), labels, trainable=False)
        return phi.value.copy()

    def mean_energy(self, x: np.ndarray, labels: Optional[np.ndarray] = None) -> float:
        return float(np.mean(self.phi(x, labels)))

    def residual_norms(self, x: np.ndarray) -> np.ndarray:
        x = _as_points(x, self.dim)
        recon = self.decoder(self.encoder(x))
        return np.sqrt(np.sum((x - recon) ** 2, axis=1))

    def score_with_flags(self, x: np.ndarray,
                         labels: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """``grad_x log p = -grad_x phi`` per row plus a degenerate-point mask.

        Rows whose reconstruction residual is below 1e-9 get a zero score.
        """
        x, labels = self._check(x, labels)
        tape = Tape()
        xn = tape.variable(x)
        phi, _, _ = self.build(tape, xn, labels, trainable=False)
        tape.backward(adcore.sum(phi))
        scores = -tape.grad(xn)
        degenerate = self.residual_norms(x) < DEGENERATE_NORM
        if degenerate.any():
            scores[degenerate] = 0.0
            logger.debug("degenerate_energy_points count=%d", int(degenerate.sum()))
        return scores, degenerate

    def grad_x_log_p(self, x: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        return self.score_with_flags(x, labels)[0]

    def grad_theta_phi(self, x: np.ndarray, labels: Optional[np.ndarray] = None) -> np.ndarray:
        """Batch average of ``d phi / d theta`` as a flat vector."""
        x, labels = self._check(x, labels)
        tape = Tape()
        phi, _, params = self.build(tape, tape.constant(x), labels, trainable=True)
        tape.backward(adcore.mean(phi))
        return flatten_grads(tape, params)

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        return -self.phi(x)

    def score(self, x: np.ndarray) -> np.ndarray:
        return self.grad_x_log_p(x)


class JointEnergy(AutoencoderEnergy):
    """Autoencoder energy plus a floored classification term on the code."""

    takes_labels = True

    def __init__(self, encoder: Mlp, decoder: Mlp, head: Mlp, margin: float = 0.2):
        super().__init__(encoder, decoder)
        if head.in_dim != encoder.out_dim:
            raise DimensionError(f"classifier head expects {head.in_dim} inputs, code has {encoder.out_dim}")
        if head.out_dim < 2:
            raise ContractError("a joint energy needs at least 2 classes")
        if margin < 0.0:
            raise ContractError(f"margin must be nonnegative, got {margin}")
        self.head = head
        self.margin = float(margin)

    @property
    def num_classes(self) -> int:
        return self.head.out_dim

    @property
    def networks(self) -> List[Mlp]:
        return [self.encoder, self.decoder, self.head]

    def _check(self, x, labels):
        if labels is None:
            raise ContractError("JointEnergy needs a label per point")
        x = _as_points(x, self.dim)
        labels = np.asarray(labels).reshape(-1)
        if labels.shape[0] != x.shape[0]:
            raise DimensionError(f"{labels.shape[0]} labels for {x.shape[0]} points")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ContractError("labels must be integer class ids")
            labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(f"label out of range [0, {self.num_classes})")
        return x, labels

    def build(self, tape, x, labels, trainable):
        phi, code, params = super().build(tape, x, None, trainable)
        logits, head_params = self.head.build(tape, code, trainable)
        log_probs = adcore.log_softmax(logits)
        ce = -adcore.take(log_probs, (np.arange(x.shape[0]), labels))
        return phi + adcore.maximum(ce, self.margin), code, params + head_params

    def cross_entropy(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        x, labels = self._check(x, labels)
        logits = self.head(self.encoder(x))
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return -log_probs[np.arange(x.shape[0]), labels]

    def log_prob(self, x):
        raise ContractError("JointEnergy needs labels; wrap it in LabeledTarget")

    def score(self, x):
        raise ContractError("JointEnergy needs labels; wrap it in LabeledTarget")


class LabeledTarget:
    """Target-density view of an energy model with one fixed label per row."""

    def __init__(self, energy: AutoencoderEnergy, labels: Optional[np.ndarray] = None):
        self.energy = energy
        self.labels = labels

    @property
    def dim(self) -> int:
        return self.energy.dim

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        return -self.energy.phi(x, self.labels)

    def score(self, x: np.ndarray) -> np.ndarray:
        return self.energy.grad_x_log_p(x, self.labels)


def _as_points(x: np.ndarray, dim: int) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimensionError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x
