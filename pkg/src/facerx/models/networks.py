"""The conventional CNN and the three-grained multi-scale CNN.

Both take a batch object exposing ``face`` ``(N, S, S, 3)``, ``organs``
``(N, 4, S/4, S/4, 3)`` and ``regions`` ``(N, 3, S/2, S/2, 3)`` arrays (the
conventional net only reads ``face``) and return a list of per-head
probability arrays of shape ``(N, n)``.  The last head is the decision output.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import expit

from ..layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, concat_channels, \
    split_channels
from ..tensor import DEFAULT_DTYPE, Tensor

ORGAN_NAMES = ("left_eye", "right_eye", "nose", "mouth")
REGION_NAMES = ("left_cheek", "right_cheek", "chin")


class ConfigError(ValueError):
    pass


class InputSizeError(ValueError):
    pass


class Model:
    arch: str = ""
    head_names: tuple[str, ...] = ()

    def __init__(self, n_herbs: int, size: int, dtype=DEFAULT_DTYPE):
        if n_herbs < 1:
            raise ConfigError(f"herb count must be positive, got {n_herbs}")
        if size < 8 or size % 8:
            raise ConfigError(f"image size must be a positive multiple of 8, got {size}")
        self.n_herbs = n_herbs
        self.size = size
        self.dtype = np.dtype(dtype)
        self.layers: dict[str, Layer] = {}
        self._logits: Optional[list[Tensor]] = None

    # -- parameters -------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{lname}.{pname}": p
                for lname, layer in self.layers.items()
                for pname, p in layer.params.items()}

    def named_grads(self) -> dict[str, Tensor]:
        return {f"{lname}.{pname}": g
                for lname, layer in self.layers.items()
                for pname, g in layer.grads.items()}

    def zero_grads(self) -> None:
        for layer in self.layers.values():
            layer.grads.clear()

    def state_dict(self) -> dict[str, Tensor]:
        return {k: v.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, Tensor]) -> None:
        own = self.named_parameters()
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise ConfigError(f"parameter names differ: missing={sorted(missing)} "
                              f"unexpected={sorted(extra)}")
        for name, p in own.items():
            src = np.asarray(state[name])
            if src.shape != p.shape:
                raise ConfigError(f"parameter {name}: expected shape {p.shape}, got {src.shape}")
            p[...] = src

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    @property
    def n_heads(self) -> int:
        return len(self.head_names)

    # -- passes ------------------------------------------------------------

    def _check_face(self, face: Tensor) -> Tensor:
        s = self.size
        if face.ndim != 4 or face.shape[1:] != (s, s, 3):
            raise InputSizeError(f"face branch expects (N, {s}, {s}, 3), got {face.shape}")
        return face.astype(self.dtype, copy=False)

    def forward(self, batch, train: bool = False, rng=None) -> list[Tensor]:
        logits = self._forward_logits(batch, train, rng)
        self._logits = logits
        return [expit(z) for z in logits]

    def predict(self, batch) -> Tensor:
        """Decision-head probabilities in eval mode."""
        return self.forward(batch)[-1]

    def backward(self, head_grads: list[Tensor]) -> dict[str, Tensor]:
        """Backpropagate gradients w.r.t. each head's pre-sigmoid logits."""
        if len(head_grads) != self.n_heads:
            raise ValueError(f"{self.arch} has {self.n_heads} heads, got {len(head_grads)} grads")
        self._backward_logits([g.astype(self.dtype, copy=False) for g in head_grads])
        return self.named_grads()

    def _forward_logits(self, batch, train, rng) -> list[Tensor]:
        raise NotImplementedError

    def _backward_logits(self, grads: list[Tensor]) -> None:
        raise NotImplementedError


class ConventionalCnn(Model):
    """Three conv+pool stages (32, 64, 128 kernels), dense 256, sigmoid head."""

    arch = "conventional"
    head_names = ("face",)

    def __init__(self, n_herbs: int, size: int, rng: np.random.Generator,
                 channels=(32, 64, 128), hidden: int = 256, dtype=DEFAULT_DTYPE):
        super().__init__(n_herbs, size, dtype)
        L = self.layers
        in_ch = 3
        for i, ch in enumerate(channels):
            L[f"conv{i}"] = Conv2D(in_ch, ch, rng, need_input_grad=i > 0, dtype=dtype)
            L[f"pool{i}"] = MaxPool2D()
            in_ch = ch
        L["flatten"] = Flatten()
        flat = in_ch * (size // 8) ** 2
        L["fc"] = Dense(flat, hidden, rng, "relu", dtype)
        L["head"] = Dense(hidden, n_herbs, rng, "none", dtype)
        self._order = list(L)

    def _forward_logits(self, batch, train, rng):
        x = self._check_face(np.asarray(batch.face))
        for name in self._order:
            x = self.layers[name].forward(x, train, rng)
        return [x]

    def _backward_logits(self, grads):
        g = grads[0]
        for name in reversed(self._order):
            g = self.layers[name].backward(g)


class ThreeGrainedCnn(Model):
    """Organ, local-region and whole-face branches fused by channel concatenation.

    Organ crops (S/4) each get their own conv16; the concat (64 ch) is
    dropped out and fused by conv32 into the organ map.  Region crops (S/2)
    get conv16+pool down to S/4 and are concatenated after the organ map
    (80 ch), dropped out, fused by conv32+pool to S/8.  The face goes through
    conv16/32/64, each pooled, to S/8 and is concatenated after the fused
    map (96 ch); dropout, two dense-256 relu layers.  Heads read the flattened
    organ map, the flattened organ+region map and the dense features.
    """

    arch = "three-grained"
    head_names = ("organ", "region", "face")

    def __init__(self, n_herbs: int, size: int, rng: np.random.Generator,
                 dropout: float = 0.4, first: int = 16, fuse: int = 32, last: int = 64,
                 hidden: int = 256, dtype=DEFAULT_DTYPE):
        super().__init__(n_herbs, size, dtype)
        L = self.layers
        for i in range(len(ORGAN_NAMES)):
            L[f"organ.conv{i}"] = Conv2D(3, first, rng, need_input_grad=False, dtype=dtype)
        L["organ.dropout"] = Dropout(dropout)
        L["organ.fuse"] = Conv2D(len(ORGAN_NAMES) * first, fuse, rng, dtype=dtype)

        for i in range(len(REGION_NAMES)):
            L[f"region.conv{i}"] = Conv2D(3, first, rng, need_input_grad=False, dtype=dtype)
            L[f"region.pool{i}"] = MaxPool2D()
        L["region.dropout"] = Dropout(dropout)
        L["region.fuse"] = Conv2D(fuse + len(REGION_NAMES) * first, fuse, rng, dtype=dtype)
        L["region.fuse_pool"] = MaxPool2D()

        face_ch = (first, fuse, last)
        in_ch = 3
        for i, ch in enumerate(face_ch):
            L[f"face.conv{i}"] = Conv2D(in_ch, ch, rng, need_input_grad=i > 0, dtype=dtype)
            L[f"face.pool{i}"] = MaxPool2D()
            in_ch = ch
        L["face.dropout"] = Dropout(dropout)
        L["face.flatten"] = Flatten()
        s8 = size // 8
        L["face.fc0"] = Dense((fuse + last) * s8 * s8, hidden, rng, "relu", dtype)
        L["face.fc1"] = Dense(hidden, hidden, rng, "relu", dtype)

        L["organ.head_flatten"] = Flatten()
        L["organ.head"] = Dense(fuse * (size // 4) ** 2, n_herbs, rng, "none", dtype)
        L["region.head_flatten"] = Flatten()
        L["region.head"] = Dense(fuse * s8 * s8, n_herbs, rng, "none", dtype)
        L["face.head"] = Dense(hidden, n_herbs, rng, "none", dtype)

        self.concat_channels_seen: dict[str, int] = {
            "organ": len(ORGAN_NAMES) * first,
            "region": fuse + len(REGION_NAMES) * first,
            "face": fuse + last,
        }
        self._fuse_sizes: dict[str, list[int]] = {}

    def _check_crops(self, batch):
        s = self.size
        organs = np.asarray(batch.organs)
        regions = np.asarray(batch.regions)
        want_o = (len(ORGAN_NAMES), s // 4, s // 4, 3)
        want_r = (len(REGION_NAMES), s // 2, s // 2, 3)
        if organs.ndim != 5 or organs.shape[1:] != want_o:
            raise InputSizeError(f"organ branch expects (N, {', '.join(map(str, want_o))}), "
                                 f"got {organs.shape}")
        if regions.ndim != 5 or regions.shape[1:] != want_r:
            raise InputSizeError(f"region branch expects (N, {', '.join(map(str, want_r))}), "
                                 f"got {regions.shape}")
        return organs.astype(self.dtype, copy=False), regions.astype(self.dtype, copy=False)

    def _concat(self, key: str, xs: list[Tensor]) -> Tensor:
        self._fuse_sizes[key] = [x.shape[-1] for x in xs]
        return concat_channels(xs)

    def _forward_logits(self, batch, train, rng):
        L = self.layers
        face = self._check_face(np.asarray(batch.face))
        organs, regions = self._check_crops(batch)

        c_organs = [L[f"organ.conv{i}"].forward(organs[:, i]) for i in range(organs.shape[1])]
        x = self._concat("organ", c_organs)
        x = L["organ.dropout"].forward(x, train, rng)
        c_o = L["organ.fuse"].forward(x)

        c_regions = [L[f"region.pool{i}"].forward(L[f"region.conv{i}"].forward(regions[:, i]))
                     for i in range(regions.shape[1])]
        x = self._concat("region", [c_o] + c_regions)
        x = L["region.dropout"].forward(x, train, rng)
        c_or = L["region.fuse_pool"].forward(L["region.fuse"].forward(x))

        f = face
        for i in range(3):
            f = L[f"face.pool{i}"].forward(L[f"face.conv{i}"].forward(f))
        x = self._concat("face", [c_or, f])
        x = L["face.dropout"].forward(x, train, rng)
        x = L["face.flatten"].forward(x)
        c_orf = L["face.fc1"].forward(L["face.fc0"].forward(x))

        z_organ = L["organ.head"].forward(L["organ.head_flatten"].forward(c_o))
        z_region = L["region.head"].forward(L["region.head_flatten"].forward(c_or))
        z_face = L["face.head"].forward(c_orf)
        return [z_organ, z_region, z_face]

    def _backward_logits(self, grads):
        L = self.layers
        g_organ, g_region, g_face = grads

        g = L["face.head"].backward(g_face)
        g = L["face.fc0"].backward(L["face.fc1"].backward(g))
        g = L["face.dropout"].backward(L["face.flatten"].backward(g))
        g_or, g_f = split_channels(g, self._fuse_sizes["face"])
        for i in reversed(range(3)):
            g_f = L[f"face.conv{i}"].backward(L[f"face.pool{i}"].backward(g_f))

        g_or = g_or + L["region.head_flatten"].backward(L["region.head"].backward(g_region))
        g = L["region.fuse"].backward(L["region.fuse_pool"].backward(g_or))
        g = L["region.dropout"].backward(g)
        g_parts = split_channels(g, self._fuse_sizes["region"])
        g_o = g_parts[0]
        for i, gr in enumerate(g_parts[1:]):
            L[f"region.conv{i}"].backward(L[f"region.pool{i}"].backward(gr))

        g_o = g_o + L["organ.head_flatten"].backward(L["organ.head"].backward(g_organ))
        g = L["organ.dropout"].backward(L["organ.fuse"].backward(g_o))
        for i, go in enumerate(split_channels(g, self._fuse_sizes["organ"])):
            L[f"organ.conv{i}"].backward(go)


ARCHITECTURES = {
    ConventionalCnn.arch: ConventionalCnn,
    ThreeGrainedCnn.arch: ThreeGrainedCnn,
}


def build_conventional(n_herbs: int, size: int, rng: np.random.Generator,
                       dtype=DEFAULT_DTYPE) -> ConventionalCnn:
    return ConventionalCnn(n_herbs, size, rng, dtype=dtype)


def build_three_grained(n_herbs: int, size: int, rng: np.random.Generator,
                        dropout: float = 0.4, dtype=DEFAULT_DTYPE) -> ThreeGrainedCnn:
    return ThreeGrainedCnn(n_herbs, size, rng, dropout=dropout, dtype=dtype)


def build_model(arch: str, n_herbs: int, size: int, rng: np.random.Generator,
                dtype=DEFAULT_DTYPE) -> Model:
    try:
        cls = ARCHITECTURES[arch]
    except KeyError:
        raise ConfigError(f"unknown architecture {arch!r}; choose from "
                          f"{', '.join(ARCHITECTURES)}") from None
    return cls(n_herbs, size, rng, dtype=dtype)
