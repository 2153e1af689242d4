"""Binary checkpoint format.

Layout, all integers little-endian::

    magic        8 bytes  b"FRXCKPT\\0"
    version      u32      (currently 1)
    arch         u16 length + utf-8
    size         u32      input image size S
    n_herbs      u32
    n_tensors    u32
    tensors      n_tensors x [u16 name length, utf-8 name, u8 ndim,
                              ndim x u32 extent, float32 data (C order)]
    has_optim    u8
    optimizer    (if has_optim) f64 lr, f64 decay, f64 momentum, u64 steps,
                 u32 count, count x tensor record (velocities)
    crc32        u32 over every preceding byte

Parameters are written in the model's declaration order, so two saves of
the same model are byte-identical.
"""
from __future__ import annotations

import io
import os
import struct
import zlib
from pathlib import Path
from typing import Optional

import numpy as np

from ..optim import OptimizerState
from ..tensor import make_rng
from .networks import ARCHITECTURES, ConfigError, Model, build_model

MAGIC = b"FRXCKPT\0"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def encode_checkpoint(model: Model, optimizer: Optional[OptimizerState] = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    arch = model.arch.encode("utf-8")
    buf.write(struct.pack("<H", len(arch)))
    buf.write(arch)
    params = model.named_parameters()
    buf.write(struct.pack("<III", model.size, model.n_herbs, len(params)))
    for name, arr in params.items():
        _write_tensor(buf, name, arr)
    if optimizer is None:
        buf.write(b"\0")
    else:
        buf.write(b"\1")
        buf.write(struct.pack("<dddQI", optimizer.learning_rate, optimizer.decay,
                              optimizer.momentum, optimizer.step_count,
                              len(optimizer.velocities)))
        for name, arr in optimizer.velocities.items():
            _write_tensor(buf, name, arr)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path, optimizer: Optional[OptimizerState] = None) -> None:
    path = Path(path)
    data = encode_checkpoint(model, optimizer)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.string()
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
        return name, arr.astype(np.float32)


def decode_checkpoint(data: bytes) -> tuple[Model, Optional[OptimizerState]]:
    r = _Reader(data)
    if len(data) < len(MAGIC) + 4:
        raise CheckpointTruncatedError(f"checkpoint too short ({len(data)} bytes)")
    magic = r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if magic != MAGIC or version != VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint header (magic={magic!r}, version={version}); "
            f"expected {MAGIC!r} version {VERSION}")
    if len(data) < r.pos + 4:
        raise CheckpointTruncatedError("checkpoint ends before its checksum")
    (crc,) = struct.unpack("<I", data[-4:])
    body = data[:-4]
    if zlib.crc32(body) != crc:
        # a short file also fails the checksum; report it as truncation when
        # the declared contents cannot fit
        _probe_truncation(body, r.pos)
        raise CheckpointError("checkpoint checksum mismatch (file corrupted)")
    r = _Reader(body)
    r.pos = len(MAGIC) + 4
    arch = r.string()
    if arch not in ARCHITECTURES:
        raise CheckpointError(f"unknown architecture tag {arch!r}")
    size, n_herbs, count = r.unpack("<III")
    tensors = dict(r.tensor() for _ in range(count))
    (has_optim,) = r.unpack("<B")
    optimizer = None
    if has_optim:
        lr, decay, momentum, steps, vcount = r.unpack("<dddQI")
        velocities = dict(r.tensor() for _ in range(vcount))
        optimizer = OptimizerState(lr, decay, momentum, velocities, steps)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after checkpoint body")

    try:
        model = build_model(arch, n_herbs, size, make_rng(0))
    except ConfigError as exc:
        raise CheckpointError(f"invalid checkpoint metadata: {exc}") from exc
    own = model.named_parameters()
    if list(own) != list(tensors):
        raise CheckpointShapeError(
            f"parameter names do not match architecture {arch!r}: "
            f"missing={sorted(own.keys() - tensors.keys())} "
            f"unexpected={sorted(tensors.keys() - own.keys())}")
    for name, arr in tensors.items():
        if arr.shape != own[name].shape:
            raise CheckpointShapeError(
                f"parameter {name}: checkpoint shape {arr.shape}, architecture expects "
                f"{own[name].shape}")
    model.load_state_dict(tensors)
    return model, optimizer


def _probe_truncation(body: bytes, start: int) -> None:
    r = _Reader(body)
    r.pos = start
    try:
        r.string()
        _, _, count = r.unpack("<III")
        for _ in range(count):
            r.tensor()
        (has_optim,) = r.unpack("<B")
        if has_optim:
            *_, vcount = r.unpack("<dddQI")
            for _ in range(vcount):
                r.tensor()
    except CheckpointTruncatedError:
        raise
    except Exception:
        return


def read_checkpoint(path) -> tuple[Model, Optional[OptimizerState]]:
    return decode_checkpoint(Path(path).read_bytes())


def load_checkpoint(path) -> Model:
    return read_checkpoint(path)[0]
