"""Composite segmentation loss: OHEM cross-entropy on P1 plus plain CE on P2."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import ConfigError, ValidationError
from .events import IGNORE_ID


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 0.4
    ohem_k: float = 0.7
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if not 0.0 < self.ohem_k <= 1.0:
            raise ConfigError(f"ohem_k must lie in (0, 1], got {self.ohem_k}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


def _check_labels(labels: np.ndarray, num_classes: int, ignore_id: int) -> None:
    bad = (labels != ignore_id) & ((labels < 0) | (labels >= num_classes))
    if np.any(bad):
        raise ValidationError(f"label values outside [0, {num_classes}) that are not the ignore id {ignore_id}")


def ce_pixel_losses(logits: Tensor, labels: np.ndarray, ignore_id: int = IGNORE_ID) -> Tensor:
    """Softmax cross-entropy per pixel, shape (N, H, W); ignored pixels contribute 0."""
    labels = np.asarray(labels)
    _check_labels(labels, logits.shape[1], ignore_id)
    return ops.softmax_cross_entropy(logits, labels, ignore_index=ignore_id)


def ohem_count(k: float, m: int) -> int:
    """ceil(k*m), guarding against float noise such as 0.7*10 = 7.000000000000001."""
    return max(1, min(m, math.ceil(round(k * m, 9))))


def ohem_loss(losses: Tensor, valid: np.ndarray, k: float) -> Tensor:
    """Mean of the ceil(k*M) largest valid losses; every pixel tied with the cutoff is kept."""
    m = int(valid.sum())
    if m == 0:
        raise ValidationError("OHEM needs at least one non-ignored pixel")
    if k >= 1.0:
        return ops.masked_mean(losses, valid)
    n = ohem_count(k, m)
    vals = losses.data[valid]
    if not np.all(np.isfinite(vals)):
        # let the non-finite value reach the caller's divergence check
        return ops.masked_mean(losses, valid)
    thr = np.partition(vals, m - n)[m - n]
    return ops.masked_mean(losses, valid & (losses.data >= thr))


def downsample_labels(labels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resampling of (N, H, W) label maps."""
    h, w = labels.shape[-2:]
    rows = (np.arange(size[0]) * h) // size[0]
    cols = (np.arange(size[1]) * w) // size[1]
    return labels[..., rows[:, None], cols[None, :]]


def total_loss(p1: Tensor, p2: Tensor | None, labels: np.ndarray, cfg: LossConfig) -> tuple[Tensor, dict]:
    """lambda1 * OHEM(P1) + lambda2 * meanCE(P2). Returns the loss and its parts as floats."""
    labels = np.asarray(labels)
    valid = labels != cfg.ignore_id
    l1 = ohem_loss(ce_pixel_losses(p1, labels, cfg.ignore_id), valid, cfg.ohem_k)
    terms = [ops.scale(l1, cfg.lambda1)]
    parts = {"ohem": float(l1.data)}
    if p2 is not None:
        small = downsample_labels(labels, p2.shape[2:])
        l2 = ops.masked_mean(ce_pixel_losses(p2, small, cfg.ignore_id), small != cfg.ignore_id)
        terms.append(ops.scale(l2, cfg.lambda2))
        parts["early"] = float(l2.data)
    loss = ops.add_n(terms) if len(terms) > 1 else terms[0]
    parts["total"] = float(loss.data)
    return loss, parts
