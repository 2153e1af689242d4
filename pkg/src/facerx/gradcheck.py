"""Central-difference gradient checks (float64)."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .loss import bce_loss
from .models.networks import Model
from .tensor import make_rng

STEP = 1e-5
FLOOR = 1e-6


def rel_error(analytic, numeric, floor: float = FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = STEP,
                 indices: Optional[list] = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (modified in place).

    Only ``indices`` (flat positions) are probed when given; others stay 0.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def _one_sided_agree(f: Callable[[], float], flat: np.ndarray, i: int, step: float,
                     tol: float) -> tuple[bool, float]:
    """Central difference at ``flat[i]`` plus a flag for whether the forward and
    backward one-sided slopes agree, i.e. no relu or max-pool kink lies inside
    the probe interval."""
    old = flat[i]
    f0 = f()
    flat[i] = old + step
    fp = f()
    flat[i] = old - step
    fm = f()
    flat[i] = old
    fwd, bwd = (fp - f0) / step, (f0 - fm) / step
    smooth = abs(fwd - bwd) <= tol * max(abs(fwd), abs(bwd), FLOOR)
    return smooth, (fp - fm) / (2 * step)


def model_gradcheck(model: Model, batch, labels: np.ndarray, samples_per_tensor: int = 8,
                    seed: int = 0, step: float = STEP, kink_tol: float = 1e-4,
                    skipped: Optional[dict] = None) -> dict[str, float]:
    """Per-parameter max relative error of backprop vs central differences.

    The loss is the summed per-head BCE; dropout runs in train mode with a
    re-seeded generator so every evaluation sees the same masks.  Probes whose
    one-sided slopes disagree by more than ``kink_tol`` straddle a point of
    non-differentiability and are replaced by another entry; their count per
    tensor goes into ``skipped`` when given.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checks need a float64 model")

    def loss() -> float:
        probs = model.forward(batch, train=True, rng=make_rng(seed))
        return sum(bce_loss(p, labels)[0] for p in probs)

    probs = model.forward(batch, train=True, rng=make_rng(seed))
    grads = model.backward([bce_loss(p, labels)[1] for p in probs])
    analytic = {k: v.copy() for k, v in grads.items()}
    pick = np.random.default_rng(seed + 1)
    errors = {}
    for name, p in model.named_parameters().items():
        k = min(samples_per_tensor, p.size)
        flat = p.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst, used, kinks = 0.0, 0, 0
        for i in pick.permutation(p.size).tolist():
            smooth, num = _one_sided_agree(loss, flat, i, step, kink_tol)
            if not smooth:
                kinks += 1
                continue
            worst = max(worst, rel_error(a_flat[i], num))
            used += 1
            if used == k:
                break
        if used == 0:
            raise ValueError(f"every probe of {name} straddles a kink")
        errors[name] = worst
        if skipped is not None:
            skipped[name] = kinks
    return errors
