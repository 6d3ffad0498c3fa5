"""Single-file NIfTI-1 reader/writer restricted to uncompressed 3D scalar volumes."""
from __future__ import annotations

import os

import numpy as np

from ..errors import FormatError
from .types import Volume3D

HEADER_SIZE = 348
MIN_VOX_OFFSET = 352

# datatype code -> numpy type
DATATYPES = {
    2: np.uint8,
    4: np.int16,
    16: np.float32,
}

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

HEADER_DTYPE = np.dtype(_HEADER_FIELDS)
assert HEADER_DTYPE.itemsize == HEADER_SIZE


class NiftiError(FormatError):
    pass


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedDataError(NiftiError):
    pass


class DimensionError(NiftiError):
    pass


def _f32_to_float(v) -> float:
    # shortest decimal that round-trips through float32, so 0.7 stays 0.7
    return float(str(np.float32(v)))


def read_header(raw: bytes) -> np.ndarray:
    if len(raw) < HEADER_SIZE:
        raise TruncatedDataError(f"header truncated: {len(raw)} of {HEADER_SIZE} bytes")
    for order in ("<", ">"):
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(order))[0]
        if int(hdr["sizeof_hdr"]) == HEADER_SIZE:
            return hdr
    raise NiftiError("sizeof_hdr is not 348 in either byte order; not a NIfTI-1 file")


def read_nifti(path) -> Volume3D:
    with open(path, "rb") as fh:
        raw = fh.read()
    hdr = read_header(raw)

    magic = bytes(hdr["magic"])
    if magic not in (b"n+1", b"ni1"):
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1":
        raise BadMagicError(f"{path}: detached header/image pairs (ni1) are not supported")

    dim = [int(v) for v in hdr["dim"]]
    if dim[0] != 3:
        raise DimensionError(f"{path}: dim[0] = {dim[0]}, expected 3")
    shape = tuple(dim[1:4])
    if min(shape) < 1:
        raise DimensionError(f"{path}: nonpositive dims {shape}")

    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype code {code}")
    # byte order of a structured dtype lives on its fields
    dtype = np.dtype(DATATYPES[code]).newbyteorder(hdr.dtype["sizeof_hdr"].byteorder)

    offset = int(hdr["vox_offset"])
    n = int(np.prod(shape))
    need = offset + n * dtype.itemsize
    if len(raw) < need:
        raise TruncatedDataError(f"{path}: data section truncated ({len(raw)} < {need} bytes)")
    values = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).astype(np.float64)

    slope = float(hdr["scl_slope"])
    if slope != 0.0 and np.isfinite(slope):
        values = values * slope + float(hdr["scl_inter"])

    spacing = tuple(_f32_to_float(abs(v)) for v in hdr["pixdim"][1:4])
    return Volume3D.from_linear(values, shape, spacing)


def _build_header(dims, spacing, code: int, bitpix: int) -> np.ndarray:
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *dims, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = bitpix
    hdr["pixdim"] = [1.0, *spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = MIN_VOX_OFFSET
    hdr["scl_slope"] = 0.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["magic"] = b"n+1"
    return hdr


def write_nifti(volume: Volume3D, path) -> None:
    """Write ``volume`` as float32 with unit scaling (scl_slope = 0)."""
    hdr = _build_header(volume.dims, volume.spacing, 16, 32)
    payload = volume.linear().astype("<f4").tobytes()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00\x00\x00\x00")  # no extensions
        fh.write(payload)
    os.replace(tmp, path)


def write_nifti_typed(data: np.ndarray, spacing, path, datatype: int,
                      slope: float = 0.0, inter: float = 0.0, byteorder: str = "<") -> None:
    """Write raw stored values with an explicit datatype code (fixtures and conversions)."""
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"unsupported datatype code {datatype}")
    npt = np.dtype(DATATYPES[datatype])
    hdr = _build_header(data.shape, spacing, datatype, npt.itemsize * 8)
    hdr["scl_slope"] = slope
    hdr["scl_inter"] = inter
    hdr = hdr.astype(HEADER_DTYPE.newbyteorder(byteorder))
    payload = np.asarray(data).ravel(order="F").astype(npt.newbyteorder(byteorder)).tobytes()
    with open(path, "wb") as fh:
        fh.write(hdr.tobytes())
        fh.write(b"\x00\x00\x00\x00")
        fh.write(payload)
