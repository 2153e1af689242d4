"""Face segmentation into organ / region crops, and affine augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..tensor import Tensor

ORGANS = ("left_eye", "right_eye", "nose", "mouth")
REGIONS = ("left_cheek", "right_cheek", "chin")

# (top, left, height, width) as fractions of the face side, for a pre-aligned
# frontal face.  "left" means image-left.
DEFAULT_RECTS: dict[str, tuple[float, float, float, float]] = {
    "left_eye": (0.25, 0.125, 0.25, 0.25),
    "right_eye": (0.25, 0.625, 0.25, 0.25),
    "nose": (0.375, 0.375, 0.25, 0.25),
    "mouth": (0.625, 0.3125, 0.25, 0.25),
    "left_cheek": (0.375, 0.0, 0.5, 0.5),
    "right_cheek": (0.375, 0.5, 0.5, 0.5),
    "chin": (0.5, 0.25, 0.5, 0.5),
}


class GeometryError(ValueError):
    pass


class AugmentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CropGeometry:
    rects: dict = field(default_factory=lambda: dict(DEFAULT_RECTS))

    def __post_init__(self):
        for name in ORGANS + REGIONS:
            if name not in self.rects:
                raise GeometryError(f"geometry is missing crop {name!r}")
        for name, (top, left, h, w) in self.rects.items():
            if h <= 0 or w <= 0 or top < 0 or left < 0 or top + h > 1 + 1e-9 or left + w > 1 + 1e-9:
                raise GeometryError(f"crop {name!r} rectangle {(top, left, h, w)} leaves the face")

    def to_json(self) -> dict:
        return {k: list(v) for k, v in self.rects.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "CropGeometry":
        return cls({k: tuple(float(x) for x in v) for k, v in obj.items()})


DEFAULT_GEOMETRY = CropGeometry()


def _axis_samples(start: float, length: float, n_out: int, n_in: int):
    pos = start + (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, (pos - lo)


def crop_resize(img: Tensor, top: float, left: float, height: float, width: float,
                out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of the pixel rectangle ``(top, left, height, width)``.

    Coordinates are in pixels and may be fractional.  Pixel-aligned crops at
    scale 1 are returned exactly.
    """
    h, w = img.shape[:2]
    y0, y1, fy = _axis_samples(top, height, out_h, h)
    x0, x1, fx = _axis_samples(left, width, out_w, w)
    fy = fy.astype(img.dtype)[:, None, None]
    fx = fx.astype(img.dtype)[None, :, None]
    a = img[y0]
    rows = a + fy * (img[y1] - a)
    b = rows[:, x0]
    return b + fx * (rows[:, x1] - b)


def segment_face(face: Tensor, geometry: CropGeometry = DEFAULT_GEOMETRY):
    """Cut the seven crops out of a square ``(S, S, 3)`` face.

    Returns ``(organs, regions)`` with shapes ``(4, S/4, S/4, 3)`` and
    ``(3, S/2, S/2, 3)``, ordered as :data:`ORGANS` and :data:`REGIONS`.
    """
    if face.ndim != 3 or face.shape[0] != face.shape[1]:
        raise GeometryError(f"face must be a square (S, S, C) image, got shape {face.shape}")
    s = face.shape[0]

    def cut(name, out):
        top, left, hh, ww = geometry.rects[name]
        return crop_resize(face, top * s, left * s, hh * s, ww * s, out, out)

    organs = np.stack([cut(n, s // 4) for n in ORGANS])
    regions = np.stack([cut(n, s // 2) for n in REGIONS])
    return organs, regions


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    """Random transform ranges; defaults are the ones used for expansion."""

    rotation_range: float = 25.0  # degrees, drawn from [-r, r]
    width_shift_range: float = 0.05  # fraction of width
    height_shift_range: float = 0.05
    zoom_range: float = 0.2  # per-axis zoom drawn from [1 - z, 1 + z]
    horizontal_flip: bool = True  # flip half of the images

    def __post_init__(self):
        if not 0.0 <= self.rotation_range <= 180.0:
            raise AugmentConfigError(f"rotation_range must be in [0, 180], got {self.rotation_range}")
        for name in ("width_shift_range", "height_shift_range", "zoom_range"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise AugmentConfigError(f"{name} must be in [0, 1), got {v}")

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(0.0, 0.0, 0.0, 0.0, False)


@dataclass(frozen=True)
class Transform:
    """One concrete draw: angle in degrees, shifts in pixels, per-axis zoom."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    zx: float = 1.0
    zy: float = 1.0
    flip: bool = False


def draw_transform(params: AugmentParams, rng: np.random.Generator, size: int) -> Transform:
    # fixed draw order keeps the stream identical whatever the ranges are
    theta = rng.uniform(-params.rotation_range, params.rotation_range)
    tx = rng.uniform(-params.width_shift_range, params.width_shift_range) * size
    ty = rng.uniform(-params.height_shift_range, params.height_shift_range) * size
    zx, zy = rng.uniform(1 - params.zoom_range, 1 + params.zoom_range, 2)
    flip = bool(rng.random() < 0.5) and params.horizontal_flip
    return Transform(float(theta), float(tx), float(ty), float(zx), float(zy), flip)


def apply_transform(img: Tensor, t: Transform) -> Tensor:
    """Rotate, shift and zoom about the image center, then optionally mirror.

    Output pixel ``p`` samples the input at ``c + R (Z (p - c) + shift)``
    (bilinear); samples outside the image take the nearest edge pixel.
    """
    h, w = img.shape[:2]
    a = math.radians(t.theta)
    cos, sin = math.cos(a), math.sin(a)
    rot = np.array([[cos, -sin], [sin, cos]])
    lin = rot @ np.diag([t.zy, t.zx])
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = c - lin @ c + rot @ np.array([t.ty, t.tx])
    matrix = np.eye(3)
    matrix[:2, :2] = lin
    out = ndimage.affine_transform(img, matrix, offset=np.append(offset, 0.0), order=1,
                                   mode="nearest", output=img.dtype)
    if t.flip:
        out = out[:, ::-1].copy()
    return out


def augment(face: Tensor, params: AugmentParams, rng: np.random.Generator) -> Tensor:
    return apply_transform(face, draw_transform(params, rng, face.shape[1]))
