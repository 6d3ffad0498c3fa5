"""Patch sampling over a case's ground-truth bounding box.

Four modes decide which sliding windows to keep:

``sequential``  every window
``drop_a``      drop windows whose foreground is mostly the largest-radius branch
``drop_b``      drop windows without foreground
``smart``       keep when the centreline ratio or the volume ratio clears its threshold
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyMaskError, FormatError, InputError, ShapeMismatchError
from .skeleton import analyze, skeletonize
from .volcore import BinaryMask, Volume3D, bounding_box, write_raw_with_sidecar

MODES = ("sequential", "drop_a", "drop_b", "smart")
PATCH_RULES = ("mean", "median", "uniform128")
DEFAULT_CAP = 160
DIM_MULTIPLE = 8

Dims = Tuple[int, int, int]


class PatchTooLargeError(FormatError):
    pass


@dataclass(frozen=True)
class SamplingPlan:
    patch_dims: Dims
    mode: str = "smart"
    stride: Optional[Dims] = None            # None: half the patch per axis
    centerline_ratio_min: float = 0.15
    volume_ratio_min: float = 0.10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        dims = tuple(int(d) for d in self.patch_dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"patch dims must be three positive ints, got {self.patch_dims}")
        object.__setattr__(self, "patch_dims", dims)
        if self.stride is not None:
            stride = tuple(int(s) for s in self.stride)
            if len(stride) != 3 or any(not 0 < s <= p for s, p in zip(stride, dims)):
                raise ValueError(f"stride must satisfy 0 < stride <= patch per axis, got {self.stride}")
            object.__setattr__(self, "stride", stride)
        for name in ("centerline_ratio_min", "volume_ratio_min"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    @property
    def effective_stride(self) -> Dims:
        if self.stride is not None:
            return self.stride
        return tuple(max(1, p // 2) for p in self.patch_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_dims"] = list(self.patch_dims)
        d["stride"] = list(self.effective_stride)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        return cls(
            patch_dims=tuple(d["patch_dims"]),
            mode=d["mode"],
            stride=tuple(d["stride"]) if d.get("stride") is not None else None,
            centerline_ratio_min=d["centerline_ratio_min"],
            volume_ratio_min=d["volume_ratio_min"],
        )


@dataclass(frozen=True)
class PatchSpec:
    case_id: str
    origin: Dims
    dims: Dims
    centerline_ratio: float
    volume_ratio: float
    kept: bool
    reason: str

    def window(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(o, o + d) for o, d in zip(self.origin, self.dims))

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "dims": list(self.dims),
            "centerline_ratio": self.centerline_ratio,
            "volume_ratio": self.volume_ratio,
            "kept": self.kept,
            "reason": self.reason,
        }


def derive_patch_dims(masks: Sequence[BinaryMask], rule: str = "mean", cap: int = DEFAULT_CAP) -> Dims:
    """Patch size on the scale of the typical ground-truth bounding box.

    The per-axis mean (or median) extent is scaled by one common factor so the
    largest axis is at most ``cap``, then floored to a multiple of 8 (minimum 8).
    """
    if rule not in PATCH_RULES:
        raise ValueError(f"patch rule must be one of {PATCH_RULES}, got {rule!r}")
    if rule == "uniform128":
        return (128, 128, 128)
    if not masks:
        raise ValueError("need at least one mask to derive patch dims")
    extents = np.array([bounding_box(m).extent for m in masks], dtype=np.float64)
    agg = extents.mean(axis=0) if rule == "mean" else np.median(extents, axis=0)
    scale = min(1.0, cap / float(agg.max()))
    dims = np.floor(agg * scale / DIM_MULTIPLE) * DIM_MULTIPLE
    return tuple(int(max(DIM_MULTIPLE, d)) for d in dims)


def axis_origins(lo: int, hi: int, patch: int, stride: int, size: int) -> List[int]:
    """Window starts along one axis covering ``[lo, hi]``; the last one is clamped flush to the volume."""
    if patch > size:
        raise PatchTooLargeError(f"patch extent {patch} exceeds volume extent {size}")
    origins = [min(lo, size - patch)]
    while origins[-1] + patch <= hi:
        origins.append(min(origins[-1] + stride, size - patch))
    return origins


def _integral(a: np.ndarray) -> np.ndarray:
    s = np.zeros(tuple(n + 1 for n in a.shape), dtype=np.int64)
    s[1:, 1:, 1:] = a.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
    return s


def _box_sum(s: np.ndarray, o: Dims, d: Dims) -> int:
    x0, y0, z0 = o
    x1, y1, z1 = x0 + d[0], y0 + d[1], z0 + d[2]
    return int(
        s[x1, y1, z1] - s[x0, y1, z1] - s[x1, y0, z1] - s[x1, y1, z0]
        + s[x0, y0, z1] + s[x0, y1, z0] + s[x1, y0, z0] - s[x0, y0, z0]
    )


def extract(
    volume: Optional[Volume3D],
    mask: BinaryMask,
    plan: SamplingPlan,
    case_id: str = "case",
    centerline: Optional[BinaryMask] = None,
) -> List[PatchSpec]:
    """Evaluate every window and record whether ``plan.mode`` keeps it."""
    if volume is not None and volume.dims != mask.dims:
        raise ShapeMismatchError(f"volume {volume.dims} and mask {mask.dims} differ in shape")
    if centerline is None:
        centerline = skeletonize(mask)
    elif centerline.dims != mask.dims:
        raise ShapeMismatchError("centreline and mask differ in shape")
    box = bounding_box(mask)
    stride = plan.effective_stride
    per_axis = [
        axis_origins(box.lo[a], box.hi[a], plan.patch_dims[a], stride[a], mask.dims[a])
        for a in range(3)
    ]
    n_cl = int(np.count_nonzero(centerline.data))
    n_fg = int(np.count_nonzero(mask.data))
    if n_cl == 0:
        raise EmptyMaskError("centreline is empty")
    cl_sum = _integral(centerline.data)
    fg_sum = _integral(mask.data)
    trachea_sum = None
    if plan.mode == "drop_a":
        _, graph, assignment = analyze(mask)
        main = max(graph.branches, key=lambda b: (b.radius_mm, -b.id)).id
        trachea_sum = _integral(assignment.labels == main)

    specs = []
    for ox in per_axis[0]:
        for oy in per_axis[1]:
            for oz in per_axis[2]:
                origin = (ox, oy, oz)
                fg = _box_sum(fg_sum, origin, plan.patch_dims)
                cr = _box_sum(cl_sum, origin, plan.patch_dims) / n_cl
                vr = fg / n_fg
                kept, reason = _decide(plan, cr, vr, fg, trachea_sum, origin)
                specs.append(PatchSpec(case_id, origin, plan.patch_dims, cr, vr, kept, reason))
    specs.sort(key=lambda s: s.origin)
    return specs


def _decide(plan, cr, vr, fg, trachea_sum, origin):
    if plan.mode == "sequential":
        return True, "sequential"
    if plan.mode == "drop_b":
        return (True, "has foreground") if fg > 0 else (False, "no foreground")
    if plan.mode == "drop_a":
        main = _box_sum(trachea_sum, origin, plan.patch_dims)
        if 2 * main > fg:
            return False, "mostly main trachea"
        return True, "not mostly main trachea"
    c_ok = cr > plan.centerline_ratio_min
    v_ok = vr > plan.volume_ratio_min
    if c_ok and v_ok:
        return True, "both thresholds met"
    if c_ok:
        return True, "centerline ratio above threshold"
    if v_ok:
        return True, "volume ratio above threshold"
    return False, "below both thresholds"


# ------------------------------------------------------------------ manifests


def manifest_dict(plan: SamplingPlan, cases: Iterable[Tuple[str, List[PatchSpec]]]) -> dict:
    return {
        "plan": plan.to_dict(),
        "cases": [{"id": cid, "patches": [s.to_dict() for s in specs]} for cid, specs in cases],
    }


def manifest_text(plan: SamplingPlan, cases: Iterable[Tuple[str, List[PatchSpec]]]) -> str:
    return json.dumps(manifest_dict(plan, cases), indent=2) + "\n"


def write_manifest(plan: SamplingPlan, cases, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest_text(plan, cases))
    os.replace(tmp, path)
    return path


def read_manifest(path) -> Tuple[SamplingPlan, List[Tuple[str, List[PatchSpec]]]]:
    try:
        doc = json.loads(Path(path).read_text())
        plan = SamplingPlan.from_dict(doc["plan"])
        cases = [
            (
                c["id"],
                [
                    PatchSpec(
                        c["id"], tuple(p["origin"]), tuple(p["dims"]),
                        p["centerline_ratio"], p["volume_ratio"], p["kept"], p["reason"],
                    )
                    for p in c["patches"]
                ],
            )
            for c in doc["cases"]
        ]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    return plan, cases


def materialize(
    specs: Sequence[PatchSpec],
    volume: Volume3D,
    mask: BinaryMask,
    out_dir,
    centerline: Optional[BinaryMask] = None,
) -> List[Path]:
    """Write every kept window as raw+sidecar image, mask and centreline files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if centerline is None:
        centerline = skeletonize(mask)
    written = []
    for s in specs:
        if not s.kept:
            continue
        win = s.window()
        stem = f"{s.case_id}_{s.origin[0]}_{s.origin[1]}_{s.origin[2]}"
        parts = (
            ("image", Volume3D(volume.data[win], volume.spacing)),
            ("mask", mask.with_data(mask.data[win])),
            ("centerline", centerline.with_data(centerline.data[win])),
        )
        for kind, obj in parts:
            p = out / f"{stem}_{kind}.raw"
            write_raw_with_sidecar(obj, p)
            written.append(p)
    return written
