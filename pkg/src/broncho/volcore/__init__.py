"""Volume containers, file I/O and voxel utilities."""
from pathlib import Path

from ..errors import InputError
from .nifti import (
    BadMagicError,
    DimensionError,
    NiftiError,
    TruncatedDataError,
    UnsupportedDatatypeError,
    read_nifti,
    write_nifti,
)
from .ops import bounding_box, component_count, largest_component, threshold
from .rawio import (
    NonBinaryMaskError,
    SizeMismatchError,
    read_raw_with_sidecar,
    write_raw_with_sidecar,
)
from .types import BinaryMask, Volume3D, VoxelBox

__all__ = [
    "BadMagicError",
    "BinaryMask",
    "DimensionError",
    "NiftiError",
    "NonBinaryMaskError",
    "SizeMismatchError",
    "TruncatedDataError",
    "UnsupportedDatatypeError",
    "Volume3D",
    "VoxelBox",
    "bounding_box",
    "component_count",
    "largest_component",
    "load",
    "load_mask",
    "read_nifti",
    "read_raw_with_sidecar",
    "save",
    "threshold",
    "write_nifti",
    "write_raw_with_sidecar",
]


def _resolve(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    return path


def load(path):
    """Load a ``.nii`` file or a ``.raw``/``.json`` sidecar pair by extension."""
    path = _resolve(path)
    if path.suffix == ".nii":
        return read_nifti(path)
    if path.suffix == ".json":
        return read_raw_with_sidecar(_resolve(path.with_suffix(".raw")), path)
    if path.suffix == ".raw":
        return read_raw_with_sidecar(path, _resolve(path.with_suffix(".json")))
    raise InputError(f"{path}: unrecognised extension (expected .nii, .raw or .json)")


def load_mask(path, t: float = 0.5) -> BinaryMask:
    obj = load(path)
    if isinstance(obj, BinaryMask):
        return obj
    return threshold(obj, t)


def save(obj, path) -> None:
    path = Path(path)
    if path.suffix == ".nii":
        if isinstance(obj, BinaryMask):
            obj = obj.as_volume()
        write_nifti(obj, path)
    elif path.suffix in (".raw", ".json"):
        write_raw_with_sidecar(obj, path.with_suffix(".raw"), path.with_suffix(".json"))
    else:
        raise InputError(f"{path}: unrecognised extension (expected .nii, .raw or .json)")
