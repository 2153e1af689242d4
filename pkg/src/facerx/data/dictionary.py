"""Herb dictionary and multi-hot prescription encoding."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class UnknownHerbError(KeyError):
    def __init__(self, herb):
        super().__init__(herb)
        self.herb = herb

    def __str__(self):
        return f"herb {self.herb!r} is not in the dictionary"


class DuplicateHerbError(ValueError):
    pass


class HerbDictionary:
    """Ordered, duplicate-free list of herb names; position is the label index."""

    def __init__(self, names: Sequence[str]):
        names = [str(n) for n in names]
        seen: dict[str, int] = {}
        for i, name in enumerate(names):
            if not name or name != name.strip() or "\t" in name or "," in name:
                raise ValueError(f"invalid herb name {name!r} at index {i}")
            if name in seen:
                raise DuplicateHerbError(
                    f"herb {name!r} appears at indices {seen[name]} and {i}")
            seen[name] = i
        self.names = names
        self._index = seen

    @classmethod
    def generic(cls, n: int) -> "HerbDictionary":
        width = max(2, len(str(n - 1)))
        return cls([f"herb{i:0{width}d}" for i in range(n)])

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, HerbDictionary) and self.names == other.names

    def __repr__(self) -> str:
        return f"HerbDictionary(n={len(self)})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownHerbError(name) from None

    def resolve(self, token: str) -> int:
        """Index for a label token that is either an integer index or a herb name."""
        token = token.strip()
        if token.lstrip("-").isdigit():
            i = int(token)
            if not 0 <= i < len(self):
                raise UnknownHerbError(token)
            return i
        return self.index(token)

    def encode(self, herbs: Iterable[str]) -> np.ndarray:
        bits = np.zeros(len(self), dtype=np.uint8)
        for h in herbs:
            bits[self.index(h)] = 1
        return bits

    def decode(self, bits) -> list[str]:
        bits = np.asarray(bits)
        if bits.shape != (len(self),):
            raise ValueError(f"prescription vector must have length {len(self)}, got {bits.shape}")
        return [self.names[i] for i in np.flatnonzero(bits)]

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{n}\n" for n in self.names), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HerbDictionary":
        # line number is the index, so blank lines are rejected rather than skipped
        return cls(Path(path).read_text(encoding="utf-8").splitlines())
