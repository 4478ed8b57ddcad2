"""Shared loss and metric helpers for the harnesses."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Tensor

__all__ = ["softmax_xent", "error_rate", "one_hot", "mre_loss", "mape"]


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_xent(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels."""
    n, k = logits.shape
    targets = T.constant(one_hot(labels, k))
    picked = T.tsum(T.log_softmax(logits, axis=1) * targets, axis=1)
    return -T.tmean(picked)


def error_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of misclassified rows."""
    return float(np.mean(np.argmax(logits, axis=1) != labels))


def mre_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean relative error |pred - target| / target as a scalar tensor."""
    target = np.asarray(target, dtype=np.float64)
    if np.any(target <= 0.0):
        raise ValueError("relative error requires strictly positive targets")
    return T.tmean(T.absolute(pred - T.constant(target)) / T.constant(target))


def mape(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute percentage error of plain-array predictions."""
    target = np.asarray(target, dtype=np.float64)
    if np.any(target <= 0.0):
        raise ValueError("relative error requires strictly positive targets")
    return float(100.0 * np.mean(np.abs(pred - target) / target))
