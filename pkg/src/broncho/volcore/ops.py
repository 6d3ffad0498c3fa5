from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import EmptyMaskError
from .types import BinaryMask, Volume3D, VoxelBox

STRUCT26 = np.ones((3, 3, 3), dtype=bool)


def threshold(volume: Volume3D, t: float = 0.5) -> BinaryMask:
    """Foreground where ``value > t`` (strict)."""
    if not np.isfinite(t):
        raise ValueError("threshold must be finite")
    return BinaryMask(volume.data > t, volume.spacing)


def label26(data: np.ndarray):
    return ndimage.label(data, structure=STRUCT26)


def component_count(mask) -> int:
    data = mask.data if isinstance(mask, BinaryMask) else mask
    return int(label26(data)[1])


def largest_component(mask: BinaryMask) -> BinaryMask:
    """Keep the largest 26-connected component.

    Ties go to the component containing the smallest linear (x-fastest) index.
    """
    labels, n = label26(mask.data)
    if n <= 1:
        return mask.with_data(mask.data.copy())
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) > 1:
        flat = labels.ravel(order="F")
        first = {}
        for lab in candidates:
            first[lab] = int(np.argmax(flat == lab))
        keep = min(candidates, key=lambda lab: first[lab])
    else:
        keep = candidates[0]
    return mask.with_data(labels == keep)


def bounding_box(mask: BinaryMask) -> VoxelBox:
    if not mask.data.any():
        raise EmptyMaskError("bounding box of an empty mask")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(mask.data.any(axis=other))
        lo.append(int(hit[0]))
        hi.append(int(hit[-1]))
    return VoxelBox(tuple(lo), tuple(hi))
