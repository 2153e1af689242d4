"""Planted-signal face datasets with a pixel-rule decodability oracle.

Each herb owns a small square patch (optionally mirrored left/right) in one
colour channel of a flat synthetic face.  When the herb is prescribed the
patch is brightened by ``amplitude``.  Patches are anchored either inside an
organ crop, inside a region crop but outside every organ crop, or on the
forehead, which no crop covers (global signals only the face branch sees).

All default placements are mirror-symmetric, so horizontal flips during
augmentation map every herb's signal onto itself.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..tensor import derive_rng
from .dataset import Dataset
from .dictionary import HerbDictionary
from .faces import ORGANS, REGIONS

ORGAN_SLOTS = [
    ("left_eye", (0.3125, 0.1875)), ("left_eye", (0.4375, 0.3125)),
    ("nose", (0.4375, 0.5)), ("mouth", (0.6875, 0.5)),
    ("left_eye", (0.3125, 0.3125)), ("left_eye", (0.4375, 0.1875)),
    ("nose", (0.5625, 0.5)), ("mouth", (0.8125, 0.5)),
]
REGION_SLOTS = [
    ("left_cheek", (0.59, 0.09)), ("chin", (0.9375, 0.5)), ("left_cheek", (0.78, 0.22)),
    ("chin", (0.9375, 0.35)), ("left_cheek", (0.59, 0.22)), ("left_cheek", (0.78, 0.09)),
]
GLOBAL_SLOTS = [
    ("face", (0.1, 0.5)), ("face", (0.1, 0.3)), ("face", (0.2, 0.5)),
    ("face", (0.1, 0.1)), ("face", (0.2, 0.3)),
]
KINDS = {"organ": ORGAN_SLOTS, "region": REGION_SLOTS, "global": GLOBAL_SLOTS}


class SyntheticError(ValueError):
    pass


@dataclass
class HerbSignal:
    herb: int
    anchor: str  # crop the patch lies in, or "face" for forehead signals
    center: tuple  # (y, x) as fractions of the face side
    half_size: float = 0.05
    channel: Optional[int] = 0  # None brightens all three channels
    amplitude: float = 0.25
    mirror: bool = True
    frequency: float = 0.2

    def patches(self, size: int) -> list[tuple[slice, slice]]:
        cy, cx = self.center
        centers = [(cy, cx)]
        if self.mirror and abs(cx - 0.5) > 1e-9:
            centers.append((cy, 1.0 - cx))
        out = []
        for y, x in centers:
            y0 = int(round((y - self.half_size) * size))
            x0 = int(round((x - self.half_size) * size))
            y1 = max(y0 + 1, int(round((y + self.half_size) * size)))
            x1 = max(x0 + 1, int(round((x + self.half_size) * size)))
            out.append((slice(max(y0, 0), min(y1, size)), slice(max(x0, 0), min(x1, size))))
        return out


@dataclass
class SignalSpec:
    signals: list = field(default_factory=list)
    noise: float = 0.03
    min_labels: int = 2

    @property
    def n_herbs(self) -> int:
        return len(self.signals)

    def kinds(self) -> dict[int, str]:
        return {s.herb: ("organ" if s.anchor in ORGANS
                         else "region" if s.anchor in REGIONS else "global")
                for s in self.signals}

    def to_json(self) -> dict:
        return {"noise": self.noise, "min_labels": self.min_labels,
                "signals": [asdict(s) for s in self.signals]}

    @classmethod
    def from_json(cls, obj: dict) -> "SignalSpec":
        sigs = []
        for d in obj["signals"]:
            d = dict(d)
            d["center"] = tuple(d["center"])
            sigs.append(HerbSignal(**d))
        spec = cls(sigs, float(obj.get("noise", 0.03)), int(obj.get("min_labels", 2)))
        spec.validate()
        return spec

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SignalSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def validate(self) -> None:
        herbs = sorted(s.herb for s in self.signals)
        if herbs != list(range(len(herbs))):
            raise SyntheticError("signals must cover herbs 0..n-1 exactly once")
        for s in self.signals:
            if not 0.0 < s.frequency < 1.0:
                raise SyntheticError(f"herb {s.herb}: frequency must be in (0, 1)")
            if s.channel is not None and s.channel not in (0, 1, 2):
                raise SyntheticError(f"herb {s.herb}: channel must be 0, 1, 2 or null")
        if not 0 <= self.min_labels <= len(self.signals):
            raise SyntheticError("min_labels out of range")


def default_signal_spec(n: int, seed: int = 0, organ_fraction: float = 0.5,
                        global_fraction: float = 0.2, amplitude: float = 0.25,
                        half_size: float = 0.05, frequent_fraction: float = 0.36,
                        noise: float = 0.03) -> SignalSpec:
    """Spread ``n`` herbs over organ, region and forehead slots.

    Positions are used before channels, so herbs only share a patch location
    once every location of their kind is taken.  ``frequent_fraction`` of the
    herbs get activation probabilities in [0.25, 0.45], the rest in
    [0.06, 0.15].
    """
    if n <= 0:
        raise SyntheticError(f"herb count must be positive, got {n}")
    n_organ = int(round(n * organ_fraction))
    n_global = min(int(round(n * global_fraction)), n - n_organ)
    counts = {"organ": n_organ, "global": n_global, "region": n - n_organ - n_global}
    rng = np.random.default_rng(seed)
    herb_order = rng.permutation(n)
    freq = np.where(np.arange(n) < int(round(frequent_fraction * n)),
                    rng.uniform(0.25, 0.45, n), rng.uniform(0.06, 0.15, n))
    freq = freq[rng.permutation(n)]
    signals, k = [], 0
    for kind in ("organ", "region", "global"):
        slots = KINDS[kind]
        capacity = 3 * len(slots)
        if counts[kind] > capacity:
            raise SyntheticError(f"{counts[kind]} {kind} herbs exceed the {capacity} slots")
        for j in range(counts[kind]):
            anchor, center = slots[j % len(slots)]
            herb = int(herb_order[k])
            signals.append(HerbSignal(herb, anchor, center, half_size, j // len(slots),
                                      amplitude, True, float(freq[herb])))
            k += 1
    signals.sort(key=lambda s: s.herb)
    spec = SignalSpec(signals, noise)
    spec.validate()
    return spec


def _base_face(rng: np.random.Generator, size: int, noise: float) -> np.ndarray:
    color = np.array([rng.uniform(0.55, 0.70), rng.uniform(0.40, 0.55), rng.uniform(0.30, 0.45)])
    yy, xx = np.meshgrid(np.linspace(-0.5, 0.5, size), np.linspace(-0.5, 0.5, size),
                         indexing="ij")
    gy, gx = rng.uniform(-0.04, 0.04, 2)
    face = color + (gy * yy + gx * xx)[..., None]
    # faint eyes and mouth so crops look like what they are named after
    for cy, cx, ry, rx, d in ((0.375, 0.25, 0.03, 0.06, 0.06), (0.375, 0.75, 0.03, 0.06, 0.06),
                              (0.75, 0.5, 0.025, 0.1, 0.04)):
        mask = ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0
        face[mask] -= d
    face += rng.normal(0.0, noise, face.shape)
    return face


def render_face(label: np.ndarray, spec: SignalSpec, size: int,
                rng: np.random.Generator) -> np.ndarray:
    """One face image (float32 in [0, 1], quantized to 8-bit levels)."""
    face = _base_face(rng, size, spec.noise)
    for s in spec.signals:
        if not label[s.herb]:
            continue
        for ys, xs in s.patches(size):
            if s.channel is None:
                face[ys, xs, :] += s.amplitude
            else:
                face[ys, xs, s.channel] += s.amplitude
    return (np.round(np.clip(face, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def draw_label(spec: SignalSpec, rng: np.random.Generator) -> np.ndarray:
    freq = np.array([s.frequency for s in sorted(spec.signals, key=lambda s: s.herb)])
    bits = (rng.random(freq.size) < freq).astype(np.uint8)
    missing = spec.min_labels - int(bits.sum())
    if missing > 0:
        off = np.flatnonzero(bits == 0)
        p = freq[off] / freq[off].sum()
        bits[rng.choice(off, missing, replace=False, p=p)] = 1
    return bits


def gen_synthetic(count: int, n: int, size: int, spec: SignalSpec, rng: np.random.Generator,
                  dictionary: Optional[HerbDictionary] = None) -> Dataset:
    """``count`` faces of side ``size``; sample ``i`` uses its own derived stream."""
    if count <= 0 or n <= 0:
        raise SyntheticError(f"count and herb count must be positive, got {count}, {n}")
    if spec.n_herbs != n:
        raise SyntheticError(f"signal spec covers {spec.n_herbs} herbs, expected {n}")
    dictionary = dictionary or HerbDictionary.generic(n)
    seed = int(rng.integers(0, 2**63))
    width = max(6, len(str(count - 1)))
    faces = np.empty((count, size, size, 3), dtype=np.float32)
    labels = np.empty((count, n), dtype=np.uint8)
    for i in range(count):
        r = derive_rng(seed, i)
        labels[i] = draw_label(spec, r)
        faces[i] = render_face(labels[i], spec, size, r)
    ids = [f"s{i:0{width}d}" for i in range(count)]
    return Dataset.from_faces(ids, faces, labels, dictionary)


def pixel_rule_decode(faces: np.ndarray, spec: SignalSpec) -> np.ndarray:
    """Brute-force oracle: read each herb's patch straight from the pixels.

    A herb is called present when its patch's channel mean exceeds the face's
    median in that channel by more than half the planted amplitude.
    """
    faces = np.asarray(faces)
    size = faces.shape[1]
    median = np.median(faces.reshape(len(faces), -1, 3), axis=1)  # (N, 3)
    out = np.zeros((len(faces), spec.n_herbs), dtype=np.uint8)
    for s in spec.signals:
        chans = [0, 1, 2] if s.channel is None else [s.channel]
        vals = [faces[:, ys, xs][..., chans].reshape(len(faces), -1)
                for ys, xs in s.patches(size)]
        patch_mean = np.concatenate(vals, axis=1).mean(axis=1)
        base = median[:, chans].mean(axis=1)
        out[:, s.herb] = patch_mean - base > s.amplitude / 2
    return out


def decodability_f1(dataset: Dataset, spec: SignalSpec) -> float:
    """Mean per-sample f1 of the pixel-rule oracle against the true labels."""
    from ..harness.metrics import average_f1_from_bits

    return average_f1_from_bits(pixel_rule_decode(dataset.face, spec), dataset.labels)
