"""Forward and backward kernels for the layers used by both networks.

All image tensors are channels-last with a leading batch axis, ``(N, H, W, C)``.
A single image ``(H, W, C)`` is accepted by :func:`conv_forward` and promoted
to a batch of one.

Each ``*_forward`` returns the output together with a cache; the matching
``*_backward`` consumes that cache.  The :class:`Layer` subclasses wrap those
kernels, hold named parameters and store the cache between the two passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import DEFAULT_DTYPE, Tensor

ACTIVATIONS = ("relu", "sigmoid", "none")


class LayerError(ValueError):
    pass


class MissingCacheError(RuntimeError):
    """Backward called without a preceding forward."""


class DropoutConfigError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=DEFAULT_DTYPE) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _activate(z: Tensor, activation: str) -> Tensor:
    """Apply ``activation`` in place; callers pass freshly computed pre-activations."""
    if activation == "relu":
        return np.maximum(z, 0, out=z)
    if activation == "sigmoid":
        return expit(z, out=z)
    if activation == "none":
        return z
    raise LayerError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def _activation_backward(grad: Tensor, out: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return grad * (out > 0)
    if activation == "sigmoid":
        return grad * out * (1 - out)
    return grad


# --------------------------------------------------------------------------
# convolution (same padding, stride 1) via im2col + GEMM


@dataclass
class ConvCache:
    cols: Tensor  # (N, H, W, kh*kw*Cin)
    out: Tensor  # post-activation output
    kernels: Tensor
    activation: str
    in_shape: tuple
    squeeze: bool


def im2col(x: Tensor, kh: int, kw: int) -> Tensor:
    """Gather every same-padded ``kh x kw`` patch of ``x`` into a row.

    Column order is ``(dy, dx, channel)`` so that ``cols @ K.reshape(-1, Cout)``
    is the cross-correlation with kernels laid out ``(kh, kw, Cin, Cout)``.
    """
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n, h, w, c, kh, kw)
    # one strided copy; measured faster than kh*kw slice assignments
    return np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(n, h, w, kh * kw * c)


def conv_input_grad(g: Tensor, kernels: Tensor, in_shape: tuple) -> Tensor:
    """Gradient w.r.t. the conv input, given ``g`` w.r.t. the pre-activation.

    With fewer input than output channels, each kernel tap contributes one GEMM
    added into a shifted window of the padded gradient.  Otherwise it is the
    same-padded correlation of ``g`` with the spatially flipped, channel
    transposed kernels, via :func:`im2col` and one GEMM.  Whichever variant
    writes the smaller intermediate is used.
    """
    n, h, w, cin = in_shape
    kh, kw, _, cout = kernels.shape
    if cin < cout:
        ph, pw = kh // 2, kw // 2
        g2 = g.reshape(-1, cout)
        gxp = np.zeros((n, h + 2 * ph, w + 2 * pw, cin), dtype=g.dtype)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dy:dy + h, dx:dx + w, :] += (g2 @ kernels[dy, dx].T).reshape(n, h, w, cin)
        return gxp[:, ph:ph + h, pw:pw + w, :]
    flipped = kernels[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, cin)
    cols = im2col(g.reshape(n, h, w, cout), kh, kw)
    return (cols.reshape(-1, kh * kw * cout) @ flipped).reshape(in_shape)


def _column_sums(g: Tensor) -> Tensor:
    # a GEMV is several times faster than sum(axis=0) on tall matrices
    return np.ones(g.shape[0], dtype=g.dtype) @ g


def conv_forward(x: Tensor, kernels: Tensor, bias: Tensor, activation: str = "relu"):
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4:
        raise LayerError(f"conv input must be (H, W, C) or (N, H, W, C), got shape {x.shape}")
    kh, kw, cin, cout = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise LayerError(f"same padding needs odd kernel sizes, got {kh}x{kw}")
    if x.shape[-1] != cin:
        raise LayerError(f"conv expected {cin} input channels, got {x.shape[-1]}")
    n, h, w, _ = x.shape
    cols = im2col(x, kh, kw)
    z = cols.reshape(-1, kh * kw * cin) @ kernels.reshape(-1, cout)
    z += bias
    out = _activate(z, activation).reshape(n, h, w, cout)
    cache = ConvCache(cols, out, kernels, activation, x.shape, squeeze)
    return (out[0] if squeeze else out), cache


def conv_backward(grad_out: Tensor, cache: Optional[ConvCache], need_input_grad: bool = True):
    """Returns ``(grad_x, grad_kernels, grad_bias)``; ``grad_x`` is None when not requested."""
    if cache is None:
        raise MissingCacheError("conv_backward called without a forward cache")
    if cache.squeeze:
        grad_out = grad_out[None]
    kh, kw, cin, cout = cache.kernels.shape
    g = _activation_backward(grad_out, cache.out, cache.activation).reshape(-1, cout)
    cols = cache.cols.reshape(-1, kh * kw * cin)
    grad_k = (cols.T @ g).reshape(cache.kernels.shape)
    grad_b = _column_sums(g)
    grad_x = None
    if need_input_grad:
        grad_x = conv_input_grad(g, cache.kernels, cache.in_shape)
        if cache.squeeze:
            grad_x = grad_x[0]
    return grad_x, grad_k, grad_b


# --------------------------------------------------------------------------
# 2x2 max pooling, stride 2; odd trailing rows/columns are dropped


@dataclass
class PoolCache:
    # bool masks: right beat left within each window row, then bottom row beat
    # top row; ties go left, then top, which is the row-major first maximum
    pick_right: Tensor  # (N, Ho, 2, Wo, C)
    pick_bottom: Tensor  # (N, Ho, Wo, C)
    in_shape: tuple


def maxpool_forward(x: Tensor):
    if x.ndim != 4:
        raise LayerError(f"pool input must be (N, H, W, C), got shape {x.shape}")
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise LayerError(f"pool input too small: {x.shape}")
    win = x[:, :2 * ho, :2 * wo].reshape(n, ho, 2, wo, 2, c)
    left, right = win[..., 0, :], win[..., 1, :]
    pick_right = right > left
    rows = np.maximum(left, right)
    top, bottom = rows[:, :, 0], rows[:, :, 1]
    pick_bottom = bottom > top
    return np.maximum(top, bottom), PoolCache(pick_right, pick_bottom, x.shape)


def maxpool_backward(grad_out: Tensor, cache: Optional[PoolCache]) -> Tensor:
    if cache is None:
        raise MissingCacheError("maxpool_backward called without a forward cache")
    n, h, w, c = cache.in_shape
    ho, wo = h // 2, w // 2
    g_rows = np.empty((n, ho, 2, wo, c), dtype=grad_out.dtype)
    g_rows[:, :, 1] = grad_out * cache.pick_bottom
    g_rows[:, :, 0] = grad_out - g_rows[:, :, 1]
    win = np.empty((n, ho, 2, wo, 2, c), dtype=grad_out.dtype)
    win[..., 1, :] = g_rows * cache.pick_right
    win[..., 0, :] = g_rows - win[..., 1, :]
    win = win.reshape(n, 2 * ho, 2 * wo, c)
    if (2 * ho, 2 * wo) == (h, w):
        return win
    grad_x = np.zeros(cache.in_shape, dtype=grad_out.dtype)
    grad_x[:, :2 * ho, :2 * wo] = win
    return grad_x


# --------------------------------------------------------------------------
# fully connected


@dataclass
class DenseCache:
    x: Tensor
    out: Tensor
    weights: Tensor
    activation: str


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "none"):
    if x.ndim == 1:
        x = x[None]
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != weights.shape[0]:
        raise LayerError(f"dense expected input length {weights.shape[0]}, got {x.shape[1]}")
    z = x @ weights
    z += bias
    out = _activate(z, activation)
    return out, DenseCache(x, out, weights, activation)


def dense_backward(grad_out: Tensor, cache: Optional[DenseCache], need_input_grad: bool = True):
    if cache is None:
        raise MissingCacheError("dense_backward called without a forward cache")
    g = _activation_backward(grad_out.reshape(cache.out.shape), cache.out, cache.activation)
    grad_w = cache.x.T @ g
    grad_b = g.sum(axis=0)
    grad_x = g @ cache.weights.T if need_input_grad else None
    return grad_x, grad_w, grad_b


# --------------------------------------------------------------------------
# inverted dropout


def dropout_forward(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator]):
    """Returns ``(out, mask)``; ``mask`` already carries the ``1/(1-rate)`` scale."""
    if not 0.0 <= rate < 1.0:
        raise DropoutConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, np.ones(x.shape, dtype=x.dtype) if train else None
    if rng is None:
        raise DropoutConfigError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype)
    mask *= x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(grad_out: Tensor, mask: Optional[Tensor]) -> Tensor:
    return grad_out if mask is None else grad_out * mask


# --------------------------------------------------------------------------
# channel concatenation


def concat_channels(xs: list[Tensor]) -> Tensor:
    if not xs:
        raise LayerError("concat needs at least one input")
    ref = xs[0].shape[:-1]
    for i, x in enumerate(xs[1:], start=1):
        if x.shape[:-1] != ref:
            raise LayerError(
                f"concat input {i} has leading extents {x.shape[:-1]}, expected {ref}")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=-1)


def split_channels(grad: Tensor, sizes: list[int]) -> list[Tensor]:
    """Backward of :func:`concat_channels`."""
    if sum(sizes) != grad.shape[-1]:
        raise LayerError(f"split sizes {sizes} do not add up to {grad.shape[-1]} channels")
    return np.split(grad, np.cumsum(sizes)[:-1], axis=-1)


# --------------------------------------------------------------------------
# stateful wrappers


class Layer:
    """A layer with named parameters and the cache of its last forward pass."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}
        self.cache = None

    def forward(self, x, train: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, kernel_size: int = 3,
                 activation: str = "relu", need_input_grad: bool = True, dtype=DEFAULT_DTYPE):
        super().__init__()
        k = kernel_size
        self.params["kernel"] = glorot_uniform(rng, (k, k, in_ch, out_ch), k * k * in_ch,
                                               k * k * out_ch, dtype)
        self.params["bias"] = np.zeros(out_ch, dtype=dtype)
        self.activation = activation
        self.need_input_grad = need_input_grad

    @property
    def out_channels(self) -> int:
        return self.params["kernel"].shape[-1]

    def forward(self, x, train=False, rng=None):
        out, self.cache = conv_forward(x, self.params["kernel"], self.params["bias"], self.activation)
        return out

    def backward(self, grad):
        gx, gk, gb = conv_backward(grad, self.cache, self.need_input_grad)
        self.grads["kernel"], self.grads["bias"] = gk, gb
        self.cache = None
        return gx


class MaxPool2D(Layer):
    def forward(self, x, train=False, rng=None):
        out, self.cache = maxpool_forward(x)
        return out

    def backward(self, grad):
        gx = maxpool_backward(grad, self.cache)
        self.cache = None
        return gx


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str = "relu", dtype=DEFAULT_DTYPE):
        super().__init__()
        self.params["weight"] = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim, dtype)
        self.params["bias"] = np.zeros(out_dim, dtype=dtype)
        self.activation = activation

    def forward(self, x, train=False, rng=None):
        out, self.cache = dense_forward(x, self.params["weight"], self.params["bias"],
                                        self.activation)
        return out

    def backward(self, grad):
        gx, gw, gb = dense_backward(grad, self.cache)
        self.grads["weight"], self.grads["bias"] = gw, gb
        self.cache = None
        return gx


class Dropout(Layer):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise DropoutConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        out, self.cache = dropout_forward(x, self.rate, train, rng)
        return out

    def backward(self, grad):
        return dropout_backward(grad, self.cache)


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        if self.cache is None:
            raise MissingCacheError("flatten backward called without a forward pass")
        return grad.reshape(self.cache)
