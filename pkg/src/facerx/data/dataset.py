"""In-memory dataset of segmented faces with multi-hot labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..tensor import Tensor, derive_rng
from .dictionary import HerbDictionary
from .faces import DEFAULT_GEOMETRY, AugmentParams, CropGeometry, augment, segment_face


class DatasetError(ValueError):
    pass


@dataclass
class FaceSample:
    sample_id: str
    face: Tensor  # (S, S, 3)
    organs: Tensor  # (4, S/4, S/4, 3)
    regions: Tensor  # (3, S/2, S/2, 3)
    label: np.ndarray  # (n,) uint8
    source_id: str


@dataclass
class Batch:
    face: Tensor
    organs: Tensor
    regions: Tensor
    labels: np.ndarray


class Dataset:
    """Stacked arrays for ``N`` samples at image size ``S`` over ``n`` herbs.

    Exposes ``face``, ``organs``, ``regions`` and ``labels`` so a whole
    dataset can be fed to a model like a batch.  ``source_ids`` names the
    original sample each row derives from (itself for originals); it ties
    augmented copies to their source when assigning folds.
    """

    def __init__(self, ids: Sequence[str], face: Tensor, organs: Tensor, regions: Tensor,
                 labels: np.ndarray, dictionary: HerbDictionary,
                 source_ids: Optional[Sequence[str]] = None,
                 geometry: CropGeometry = DEFAULT_GEOMETRY):
        ids = list(ids)
        n = len(ids)
        if len(set(ids)) != n:
            dup = sorted({i for i in ids if ids.count(i) > 1})[:5]
            raise DatasetError(f"duplicate sample ids: {dup}")
        for name, arr in (("face", face), ("organs", organs), ("regions", regions),
                          ("labels", labels)):
            if arr.shape[0] != n:
                raise DatasetError(f"{name} has {arr.shape[0]} rows for {n} sample ids")
        if labels.ndim != 2 or labels.shape[1] != len(dictionary):
            raise DatasetError(f"labels shape {labels.shape} does not match "
                               f"{len(dictionary)} dictionary herbs")
        self.ids = ids
        self.face = face
        self.organs = organs
        self.regions = regions
        self.labels = labels
        self.dictionary = dictionary
        self.source_ids = list(source_ids) if source_ids is not None else list(ids)
        self.geometry = geometry

    @classmethod
    def from_faces(cls, ids: Sequence[str], faces: Tensor, labels: np.ndarray,
                   dictionary: HerbDictionary, source_ids=None,
                   geometry: CropGeometry = DEFAULT_GEOMETRY) -> "Dataset":
        faces = np.asarray(faces, dtype=np.float32)
        if faces.ndim != 4:
            raise DatasetError(f"faces must be (N, S, S, 3), got {faces.shape}")
        s = faces.shape[1]
        organs = np.empty((len(faces), 4, s // 4, s // 4, 3), dtype=np.float32)
        regions = np.empty((len(faces), 3, s // 2, s // 2, 3), dtype=np.float32)
        for i, f in enumerate(faces):
            organs[i], regions[i] = segment_face(f, geometry)
        return cls(ids, faces, organs, regions, np.asarray(labels, dtype=np.uint8), dictionary,
                   source_ids, geometry)

    @classmethod
    def empty(cls, size: int, dictionary: HerbDictionary,
              geometry: CropGeometry = DEFAULT_GEOMETRY) -> "Dataset":
        return cls.from_faces([], np.zeros((0, size, size, 3), np.float32),
                              np.zeros((0, len(dictionary)), np.uint8), dictionary,
                              geometry=geometry)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def size(self) -> int:
        return self.face.shape[1]

    @property
    def n_herbs(self) -> int:
        return len(self.dictionary)

    def __getitem__(self, i: int) -> FaceSample:
        return FaceSample(self.ids[i], self.face[i], self.organs[i], self.regions[i],
                          self.labels[i], self.source_ids[i])

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.face[idx], self.organs[idx], self.regions[idx], self.labels[idx])

    def subset(self, idx) -> "Dataset":
        idx = [int(i) for i in idx]
        return Dataset([self.ids[i] for i in idx], self.face[idx], self.organs[idx],
                       self.regions[idx], self.labels[idx], self.dictionary,
                       [self.source_ids[i] for i in idx], self.geometry)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dictionary != self.dictionary or other.size != self.size:
            raise DatasetError("cannot concatenate datasets with different dictionaries or sizes")
        return Dataset(self.ids + other.ids, np.concatenate([self.face, other.face]),
                       np.concatenate([self.organs, other.organs]),
                       np.concatenate([self.regions, other.regions]),
                       np.concatenate([self.labels, other.labels]), self.dictionary,
                       self.source_ids + other.source_ids, self.geometry)

    def equals(self, other: "Dataset") -> bool:
        return (self.ids == other.ids and self.source_ids == other.source_ids
                and self.dictionary == other.dictionary
                and np.array_equal(self.face, other.face)
                and np.array_equal(self.labels, other.labels))


def expand_dataset(dataset: Dataset, factor: float, rng: np.random.Generator,
                   params: AugmentParams = AugmentParams()) -> Dataset:
    """Keep every original and append augmented copies up to ``round(factor * N)``.

    Sources are drawn uniformly without replacement while possible.  Each copy
    is the transformed full face, re-segmented, with its source's label.
    Copy ``k`` draws its transform from a stream derived from one seed taken
    from ``rng`` and ``k``, so copies can be produced in any order.
    """
    if factor < 1:
        raise DatasetError(f"expansion factor must be >= 1, got {factor}")
    n = len(dataset)
    extra = int(round(factor * n)) - n
    if extra <= 0 or n == 0:
        return dataset
    seed = int(rng.integers(0, 2**63))
    picker = derive_rng(seed, extra)
    reps, rem = divmod(extra, n)
    sources = np.concatenate([picker.permutation(n) for _ in range(reps)]
                             + [picker.choice(n, rem, replace=False)]).astype(int)
    faces = np.empty((extra,) + dataset.face.shape[1:], dtype=np.float32)
    ids, src_ids = [], []
    for k, src in enumerate(sources):
        faces[k] = augment(dataset.face[src], params, derive_rng(seed, k))
        ids.append(f"{dataset.ids[src]}~aug{k}")
        src_ids.append(dataset.source_ids[src])
    copies = Dataset.from_faces(ids, faces, dataset.labels[sources], dataset.dictionary,
                                src_ids, dataset.geometry)
    return dataset.concat(copies)
