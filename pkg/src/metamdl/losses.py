"""Segmentation losses and evaluation metrics.

All losses act on probability scores ``p`` and binary targets ``y`` pooled
over every element of a mini-batch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ShapeError, UndefinedMetricError

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
LOSS_KINDS = ("bce", "soft_dice", "bce_plus_dice")


def _pair(p, y) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ShapeError(f"prediction/target lengths differ: {p.size} vs {y.size}")
    if p.size == 0:
        raise ShapeError("empty prediction vector")
    return p, y


def bce(p, y, eps: float = CLAMP_EPS) -> float:
    """Mean negative log-likelihood with ``p`` clamped to [eps, 1 - eps]."""
    p, y = _pair(p, y)
    pc = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def bce_grad(p, y, eps: float = CLAMP_EPS) -> np.ndarray:
    p, y = _pair(p, y)
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p > eps) & (p < 1.0 - eps)
    g = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / p.size
    return np.where(inside, g, 0.0)


def soft_dice_term(p, y) -> float:
    """Overlap term y.p / (sum(y) + sum(p)), bounded to [0, 1/2].

    Returns 0 when both vectors are all zero.
    """
    p, y = _pair(p, y)
    denom = y.sum() + p.sum()
    if denom <= 0.0:
        log.debug("degenerate dice batch: empty target and prediction")
        return 0.0
    return float(y @ p / denom)


def soft_dice_grad(p, y) -> np.ndarray:
    p, y = _pair(p, y)
    denom = y.sum() + p.sum()
    if denom <= 0.0:
        return np.zeros_like(p)
    return y / denom - (y @ p) / denom**2


def combined_loss(p, y, eps: float = CLAMP_EPS) -> float:
    return bce(p, y, eps) - soft_dice_term(p, y)


def combined_grad(p, y, eps: float = CLAMP_EPS) -> np.ndarray:
    return bce_grad(p, y, eps) - soft_dice_grad(p, y)


@dataclass(frozen=True)
class LossFn:
    """A domain loss: ``bce``, ``soft_dice`` (minimised as its negative) or ``bce_plus_dice``."""

    kind: str = "bce_plus_dice"
    eps: float = CLAMP_EPS

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if not 0.0 < self.eps < 0.5:
            raise ConfigError("clamp eps must lie in (0, 0.5)")

    def value(self, p, y) -> float:
        if self.kind == "bce":
            return bce(p, y, self.eps)
        if self.kind == "soft_dice":
            return -soft_dice_term(p, y)
        return combined_loss(p, y, self.eps)

    def grad(self, p, y) -> np.ndarray:
        shape = np.shape(p)
        if self.kind == "bce":
            g = bce_grad(p, y, self.eps)
        elif self.kind == "soft_dice":
            g = -soft_dice_grad(p, y)
        else:
            g = combined_grad(p, y, self.eps)
        return g.reshape(shape)

    def value_and_grad(self, p, y) -> tuple[float, np.ndarray]:
        return self.value(p, y), self.grad(p, y)


def dsc_metric(pred, y) -> float:
    """Dice similarity 2TP / (2TP + FP + FN) of two binary masks; 1.0 if both are empty."""
    pred = np.asarray(pred).ravel().astype(bool)
    y = np.asarray(y).ravel().astype(bool)
    if pred.shape != y.shape:
        raise ShapeError(f"mask lengths differ: {pred.size} vs {y.size}")
    tp = np.count_nonzero(pred & y)
    fp = np.count_nonzero(pred & ~y)
    fn = np.count_nonzero(~pred & y)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def auc_metric(scores, y) -> float:
    """Pooled ROC AUC via the rank-sum statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(y).ravel().astype(bool)
    if scores.shape != y.shape:
        raise ShapeError(f"lengths differ: {scores.size} vs {y.size}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
