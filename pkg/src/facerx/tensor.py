"""Dense array helpers and seeded random streams.

Tensors are plain ``numpy.ndarray`` values laid out row-major, channels-last
for images (``(H, W, C)`` or ``(N, H, W, C)`` with a batch axis).  Training
uses float32; float64 is used for finite-difference gradient checks.

Randomness goes through :class:`numpy.random.Generator` backed by PCG64, so a
seed fully determines every stream.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Tensor = np.ndarray

DEFAULT_DTYPE = np.float32


class InvalidShapeError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    def __init__(self, a: Sequence[int], b: Sequence[int], what: str = "operands"):
        super().__init__(f"shape mismatch between {what}: {tuple(a)} vs {tuple(b)}")
        self.shapes = (tuple(a), tuple(b))


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise InvalidShapeError("shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise InvalidShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> Tensor:
    return np.zeros(check_shape(shape), dtype=dtype)


def ones(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> Tensor:
    return np.ones(check_shape(shape), dtype=dtype)


def uniform(rng: np.random.Generator, shape: Sequence[int], lo: float, hi: float,
            dtype=DEFAULT_DTYPE) -> Tensor:
    shape = check_shape(shape)
    # draw in float64 so the stream is identical regardless of target dtype
    return rng.uniform(lo, hi, size=shape).astype(dtype)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for item ``index`` under a global ``seed``.

    Lets per-sample work (augmentation, synthesis) run in any order and still
    produce the same result.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index)])))


_BINARY: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def elementwise(op: str, a, b) -> Tensor:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape)
    try:
        fn = _BINARY[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def reduce(op: str, a) -> float:
    """Reduce all elements to a scalar.

    ``sum`` accumulates strictly left to right in float64 so the result does
    not depend on numpy's pairwise summation blocking.
    """
    flat = np.asarray(a).ravel()
    if op == "sum":
        total = 0.0
        for v in flat.tolist():
            total += v
        return total
    if op == "mean":
        return reduce("sum", flat) / flat.size
    if op == "max":
        return float(flat.max())
    if op == "min":
        return float(flat.min())
    raise ValueError(f"unknown reduction {op!r}")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = check_shape(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatchError(a.shape, shape, "reshape source and target")
    return a.reshape(shape)
