"""Per-sample precision / recall / f1 for predicted vs real herb sets."""
from __future__ import annotations

from typing import Iterable

import numpy as np


class EmptyPrescriptionError(ValueError):
    pass


def sample_metrics(predicted: Iterable[int], real: Iterable[int]) -> tuple[float, float, float]:
    """``(precision, recall, f1)`` for one sample.

    An empty prediction has precision 0.  f1 is 0 when precision and recall
    are both 0.
    """
    pred = set(predicted)
    real = set(real)
    if not real:
        raise EmptyPrescriptionError("real prescription is empty")
    hit = len(pred & real)
    precision = hit / len(pred) if pred else 0.0
    recall = hit / len(real)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def metrics_from_bits(pred_bits: np.ndarray, real_bits: np.ndarray):
    """Vectorized :func:`sample_metrics` over rows of two ``(m, n)`` 0/1 arrays."""
    pred = np.asarray(pred_bits).astype(bool)
    real = np.asarray(real_bits).astype(bool)
    n_real = real.sum(axis=1)
    if np.any(n_real == 0):
        raise EmptyPrescriptionError(
            f"real prescription is empty for rows {np.flatnonzero(n_real == 0)[:5].tolist()}")
    n_pred = pred.sum(axis=1)
    hit = (pred & real).sum(axis=1)
    precision = np.where(n_pred > 0, hit / np.maximum(n_pred, 1), 0.0)
    recall = hit / n_real
    denom = precision + recall
    f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return precision, recall, f1


def average_f1_from_bits(pred_bits, real_bits) -> float:
    return float(np.mean(metrics_from_bits(pred_bits, real_bits)[2]))
