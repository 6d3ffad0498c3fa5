"""Raw voxel dumps with a JSON sidecar describing geometry and dtype."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import FormatError, InputError
from .types import BinaryMask, Volume3D

_DTYPES = {"u8": np.dtype("u1"), "f32": np.dtype("<f4")}
_ORDERS = ("xyz", "xyz-x-fastest")


class SizeMismatchError(FormatError):
    pass


class NonBinaryMaskError(FormatError):
    pass


def sidecar_path(data_path) -> Path:
    return Path(data_path).with_suffix(".json")


def read_raw_with_sidecar(data_path, json_path=None) -> Union[Volume3D, BinaryMask]:
    data_path = Path(data_path)
    json_path = Path(json_path) if json_path is not None else sidecar_path(data_path)
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{json_path}: invalid JSON ({exc})") from exc

    try:
        dims = tuple(int(v) for v in meta["dims"])
        spacing = tuple(float(v) for v in meta["spacing"])
        dtype = _DTYPES[meta["dtype"]]
    except KeyError as exc:
        raise InputError(f"{json_path}: missing or invalid key {exc}") from exc
    order = meta.get("order", "xyz")
    if order not in _ORDERS:
        raise InputError(f"{json_path}: unsupported order {order!r}")
    kind = meta.get("kind", "mask" if meta["dtype"] == "u8" else "volume")
    if len(dims) != 3:
        raise InputError(f"{json_path}: dims must have three entries")

    raw = data_path.read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{data_path}: {len(raw)} bytes present, dims {dims} x {meta['dtype']} need {expected}"
        )
    values = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")

    if kind == "mask":
        bad = values[(values != 0) & (values != 1)]
        if bad.size:
            raise NonBinaryMaskError(f"{data_path}: non-binary value {bad.flat[0]} in mask")
        return BinaryMask(values.astype(bool), spacing)
    if kind != "volume":
        raise InputError(f"{json_path}: kind must be 'volume' or 'mask'")
    return Volume3D(values.astype(np.float64), spacing)


def write_raw_with_sidecar(obj: Union[Volume3D, BinaryMask], data_path, json_path=None) -> None:
    data_path = Path(data_path)
    json_path = Path(json_path) if json_path is not None else sidecar_path(data_path)
    if isinstance(obj, BinaryMask):
        dtype, kind = "u8", "mask"
        payload = obj.data.astype("u1")
    else:
        dtype, kind = "f32", "volume"
        payload = obj.data.astype("<f4")
    meta = {
        "dims": list(obj.dims),
        "spacing": list(obj.spacing),
        "dtype": dtype,
        "kind": kind,
        "order": "xyz",
    }
    data_path.write_bytes(payload.ravel(order="F").tobytes())
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
