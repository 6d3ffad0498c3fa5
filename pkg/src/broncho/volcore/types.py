from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


def _check_geometry(data: np.ndarray, spacing) -> Spacing:
    if data.ndim != 3:
        raise ValueError(f"volume data must be 3D, got shape {data.shape}")
    if min(data.shape) < 1:
        raise ValueError(f"all dims must be >= 1, got {data.shape}")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be three positive finite values, got {spacing}")
    return spacing


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Volume3D:
    """Scalar grid indexed ``data[x, y, z]``.

    The linear (on-disk) order is x-fastest, i.e. ``data.ravel(order="F")``.
    Spacing is millimetres per voxel along (x, y, z).
    """

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        spacing = _check_geometry(data, self.spacing)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    @classmethod
    def from_linear(cls, values, dims, spacing=(1.0, 1.0, 1.0)) -> "Volume3D":
        values = np.asarray(values, dtype=np.float64)
        if values.size != int(np.prod(dims)):
            raise ValueError(f"{values.size} values do not fill dims {tuple(dims)}")
        return cls(values.reshape(tuple(dims), order="F"), spacing)

    def linear(self) -> np.ndarray:
        return self.data.ravel(order="F")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean grid with the same layout conventions as :class:`Volume3D`."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype != np.bool_:
            if raw.size and not np.isin(raw, (0, 1)).all():
                raise ValueError("mask values must be exactly 0 or 1")
            raw = raw.astype(bool)
        spacing = _check_geometry(raw, self.spacing)
        object.__setattr__(self, "data", _frozen(raw))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.data.shape)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def with_data(self, data: np.ndarray) -> "BinaryMask":
        return BinaryMask(data, self.spacing)

    def as_volume(self) -> Volume3D:
        return Volume3D(self.data.astype(np.float64), self.spacing)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.dims == other.dims
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


@dataclass(frozen=True)
class VoxelBox:
    """Inclusive voxel box ``lo[i] <= v[i] <= hi[i]``."""

    lo: Dims
    hi: Dims

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def extent(self) -> Dims:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    def slices(self) -> tuple:
        return tuple(slice(a, b + 1) for a, b in zip(self.lo, self.hi))

    def fits(self, dims) -> bool:
        return all(a >= 0 for a in self.lo) and all(b < n for b, n in zip(self.hi, dims))
