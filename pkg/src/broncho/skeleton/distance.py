from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..volcore import BinaryMask, Volume3D


def distance_transform(mask: BinaryMask) -> Volume3D:
    """Exact Euclidean distance (mm) from each foreground voxel centre to the nearest background voxel centre.

    Voxels beyond the array bounds count as background, so foreground
    touching the border is at most one voxel step from background.
    Background voxels get 0.
    """
    padded = np.pad(mask.data, 1, constant_values=False)
    dt = ndimage.distance_transform_edt(padded, sampling=mask.spacing)
    return Volume3D(dt[1:-1, 1:-1, 1:-1], mask.spacing)
