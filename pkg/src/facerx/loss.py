"""Multi-label binary cross-entropy, single-head and three-head summed."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeMismatchError, Tensor

EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    total: float
    per_head: tuple[float, ...]


def bce_loss(p: Tensor, y: Tensor) -> tuple[float, Tensor]:
    """Mean over herbs (and over the batch, if 2-D) of the binary cross-entropy.

    Returns the loss and its gradient with respect to the pre-sigmoid logits,
    ``(p - y) / (n * batch)``.  ``p`` is clipped to ``[EPS, 1 - EPS]`` before
    the log; the logit gradient is the exact derivative of the unclipped loss.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ShapeMismatchError(p.shape, y.shape, "probabilities and labels")
    p64 = np.clip(p.astype(np.float64), EPS, 1.0 - EPS)
    y64 = y.astype(np.float64)
    per_elem = -y64 * np.log(p64) - (1.0 - y64) * np.log(1.0 - p64)
    loss = float(per_elem.mean())
    grad = (p - y.astype(p.dtype)) / p.dtype.type(p.size)
    return loss, grad


def per_sample_bce(p: Tensor, y: Tensor) -> Tensor:
    """Loss of each row of a ``(batch, n)`` pair, without averaging over rows."""
    p64 = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    y64 = np.asarray(y, dtype=np.float64)
    return (-y64 * np.log(p64) - (1.0 - y64) * np.log(1.0 - p64)).mean(axis=-1)


def summed_loss(p_organ: Tensor, p_region: Tensor, p_face: Tensor,
                y: Tensor) -> tuple[LossValue, list[Tensor]]:
    """Unweighted sum of the organ, region and face head losses."""
    values, grads = [], []
    for p in (p_organ, p_region, p_face):
        v, g = bce_loss(p, y)
        values.append(v)
        grads.append(g)
    return LossValue(sum(values), tuple(values)), grads
