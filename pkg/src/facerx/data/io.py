"""On-disk dataset format.

A dataset root holds::

    dictionary.txt   one herb name per line; line number (from 0) = index
    labels.tsv       "<sampleId>\\t<comma-separated herb indices>" per line
    images/          "<sampleId>.png", 8-bit RGB
    manifest.json    sample ids in canonical order, size S, herb count n,
                     sha256 over labels.tsv then every image file in order

Label tokens may also be herb names; both are resolved against the
dictionary.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .dataset import Dataset, DatasetError
from .dictionary import HerbDictionary
from .faces import DEFAULT_GEOMETRY, CropGeometry, crop_resize

FORMAT = "facerx-dataset"
FORMAT_VERSION = 1
IMAGE_EXT = "png"


class MissingDatasetFileError(DatasetError, FileNotFoundError):
    pass


class DuplicateSampleError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _digest(root: Path, ids) -> str:
    h = hashlib.sha256()
    h.update((root / "labels.tsv").read_bytes())
    for sid in ids:
        h.update((root / "images" / f"{sid}.{IMAGE_EXT}").read_bytes())
    return h.hexdigest()


def save_dataset(dataset: Dataset, root, extra_meta: Optional[dict] = None) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    dataset.dictionary.save(root / "dictionary.txt")
    lines = []
    for sid, bits in zip(dataset.ids, dataset.labels):
        lines.append(f"{sid}\t{','.join(str(i) for i in np.flatnonzero(bits))}\n")
    (root / "labels.tsv").write_text("".join(lines), encoding="utf-8")
    for sid, face in zip(dataset.ids, dataset.face):
        Image.fromarray(to_uint8(face)).save(root / "images" / f"{sid}.{IMAGE_EXT}")
    manifest = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "size": dataset.size,
        "n_herbs": dataset.n_herbs,
        "sample_ids": dataset.ids,
        "sources": {s: src for s, src in zip(dataset.ids, dataset.source_ids) if s != src},
        "geometry": dataset.geometry.to_json(),
        "checksum": _digest(root, dataset.ids),
    }
    if extra_meta:
        manifest["meta"] = extra_meta
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingDatasetFileError(f"missing dataset file: {path}")
    return path


def read_image(path, size: Optional[int] = None) -> np.ndarray:
    """Load an 8-bit image as float32 RGB in [0, 1], optionally resized to ``size``."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / np.float32(255.0)
    if size is not None and arr.shape[:2] != (size, size):
        h, w = arr.shape[:2]
        arr = crop_resize(arr, 0.0, 0.0, float(h), float(w), size, size)
    return arr


def load_dataset(root, size: Optional[int] = None, verify: bool = True) -> Dataset:
    root = Path(root)
    manifest = json.loads(_require(root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{root}: unsupported manifest format "
                           f"{manifest.get('format')!r} v{manifest.get('version')}")
    dictionary = HerbDictionary.load(_require(root / "dictionary.txt"))
    if manifest.get("n_herbs", len(dictionary)) != len(dictionary):
        raise DatasetError(f"manifest declares {manifest['n_herbs']} herbs, dictionary has "
                           f"{len(dictionary)}")
    ids = list(manifest.get("sample_ids", []))
    seen = set()
    for sid in ids:
        if sid in seen:
            raise DuplicateSampleError(f"sample id {sid!r} listed twice in manifest")
        seen.add(sid)
    geometry = CropGeometry.from_json(manifest["geometry"]) if "geometry" in manifest \
        else DEFAULT_GEOMETRY
    stored = int(manifest["size"])
    size = size or stored

    labels_by_id: dict[str, np.ndarray] = {}
    text = _require(root / "labels.tsv").read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        sid, _, herbs = line.partition("\t")
        if sid in labels_by_id:
            raise DuplicateSampleError(f"labels.tsv line {lineno}: duplicate sample id {sid!r}")
        bits = np.zeros(len(dictionary), dtype=np.uint8)
        for tok in filter(None, (t.strip() for t in herbs.split(","))):
            bits[dictionary.resolve(tok)] = 1
        labels_by_id[sid] = bits

    for sid in ids:
        _require(root / "images" / f"{sid}.{IMAGE_EXT}")
        if sid not in labels_by_id:
            raise DatasetError(f"sample {sid!r} has no entry in labels.tsv")
    if verify and ids and manifest.get("checksum") and _digest(root, ids) != manifest["checksum"]:
        raise ChecksumError(f"{root}: content checksum does not match manifest")

    if not ids:
        return Dataset.empty(size, dictionary, geometry)
    faces = np.stack([read_image(root / "images" / f"{sid}.{IMAGE_EXT}", size) for sid in ids])
    labels = np.stack([labels_by_id[sid] for sid in ids])
    sources = manifest.get("sources", {})
    return Dataset.from_faces(ids, faces, labels, dictionary,
                              [sources.get(s, s) for s in ids], geometry)
