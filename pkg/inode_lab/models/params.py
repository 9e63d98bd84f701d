"""
Flat parameter store addressed by named slices
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from inode_lab.core.exceptions import ContractError, ShapeError

GROUPS = ("nu", "psi", "theta", "xi")


@dataclass(frozen=True)
class ParamSlice:
    name: str
    start: int
    stop: int
    shape: Tuple[int, ...]


class ModelParams:
    """
    One float64 vector holding every trainable tensor.

    Names are dotted, the first component being the owning network group:
    ``nu`` (initial-state encoder), ``psi`` (invariant extractor),
    ``theta`` (differential function) and ``xi`` (decoder).
    """

    def __init__(self, layout: Mapping[str, Tuple[int, ...]], vector: Optional[np.ndarray] = None):
        self.slices: Dict[str, ParamSlice] = {}
        offset = 0
        for name, shape in layout.items():
            if name in self.slices:
                raise ContractError(f"duplicate parameter name '{name}'")
            if name.split(".", 1)[0] not in GROUPS:
                raise ContractError(f"parameter '{name}' is not in one of the groups {GROUPS}")
            shape = tuple(int(s) for s in shape)
            size = int(np.prod(shape, dtype=np.int64))
            self.slices[name] = ParamSlice(name, offset, offset + size, shape)
            offset += size
        self.size = offset

        if vector is None:
            vector = np.zeros(self.size, dtype=np.float64)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise ShapeError("ModelParams", vector.shape, (self.size,))
        self.vector = vector

    def __contains__(self, name: str) -> bool:
        return name in self.slices

    def __iter__(self) -> Iterator[str]:
        return iter(self.slices)

    def __getitem__(self, name: str) -> np.ndarray:
        s = self.slices[name]
        return self.vector[s.start: s.stop].reshape(s.shape)

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        s = self.slices[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != s.shape:
            raise ShapeError(f"set {name}", s.shape, value.shape)
        self.vector[s.start: s.stop] = value.reshape(-1)

    @property
    def layout(self) -> Dict[str, Tuple[int, ...]]:
        return {name: s.shape for name, s in self.slices.items()}

    def as_dict(self) -> Dict[str, np.ndarray]:
        """Views into the vector (no copies)."""
        return {name: self[name] for name in self.slices}

    def group(self, group: str) -> Dict[str, np.ndarray]:
        return {name: self[name] for name in self.slices if name.split(".", 1)[0] == group}

    def flatten(self, named: Mapping[str, np.ndarray]) -> np.ndarray:
        """Pack per-name arrays (e.g. gradients) into a vector laid out like this store."""
        out = np.zeros(self.size, dtype=np.float64)
        for name, arr in named.items():
            s = self.slices[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != s.shape:
                raise ShapeError(f"flatten {name}", s.shape, arr.shape)
            out[s.start: s.stop] = arr.reshape(-1)
        return out

    def with_vector(self, vector: np.ndarray) -> "ModelParams":
        return ModelParams(self.layout, np.array(vector, dtype=np.float64))

    def copy(self) -> "ModelParams":
        return self.with_vector(self.vector)
