"""Parametric tubular trees with exact ground truth, plus controlled perturbations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .skeleton.graph import classify_branch_size
from .volcore import BinaryMask

Vec = Tuple[float, float, float]


class SeparationError(DomainError):
    """No tree satisfying the separation precondition was found within the retry cap."""


@dataclass(frozen=True)
class TreeParams:
    depth: int = 3
    children: int = 2
    length_range: Tuple[float, float] = (14.0, 18.0)   # mm
    root_radius: float = 3.0                           # mm
    radius_decay: float = 0.7
    angle_range: Tuple[float, float] = (35.0, 50.0)    # degrees between parent and child axes
    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    separation_vox: float = 4.0
    margin_vox: float = 2.0
    max_retries: int = 500
    root_start: Optional[Vec] = None                   # mm; default near the low-z face
    root_direction: Vec = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.children < 1:
            raise ValueError("children must be >= 1")
        if not self.root_radius > 0:
            raise ValueError("root radius must be positive")
        if not 0 < self.radius_decay <= 1:
            raise ValueError("radius decay must lie in (0, 1]")
        lo, hi = self.length_range
        if not 0 < lo <= hi:
            raise ValueError("length range must be positive and ordered")
        a, b = self.angle_range
        if not 0 <= a <= b <= 180:
            raise ValueError("angle range must be ordered within [0, 180]")
        if min(self.dims) < 1 or min(self.spacing) <= 0:
            raise ValueError("dims and spacing must be positive")


@dataclass(frozen=True)
class Segment:
    id: int                 # 1-based, breadth-first
    start: np.ndarray       # mm
    end: np.ndarray         # mm
    radius: float           # mm
    generation: int
    parent: Optional[int]

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    @property
    def direction(self) -> np.ndarray:
        d = self.end - self.start
        return d / np.linalg.norm(d)


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.sqrt(((points - closest) ** 2).sum(axis=-1))


def segment_distance(p1, q1, p2, q2) -> float:
    """Exact minimum distance between two 3D segments."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-12
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    c1, c2 = p1 + d1 * s, p2 + d2 * t
    return float(np.linalg.norm(c1 - c2))


def _perpendicular(d: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, helper)
    return u / np.linalg.norm(u)


@dataclass(eq=False)
class GroundTruthTree:
    params: TreeParams
    segments: List[Segment]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def spacing(self):
        return self.params.spacing

    @property
    def dims(self):
        return self.params.dims

    @property
    def branch_count(self) -> int:
        return len(self.segments)

    @property
    def lengths(self) -> List[float]:
        return [s.length for s in self.segments]

    @property
    def radii(self) -> List[float]:
        return [s.radius for s in self.segments]

    def segment(self, sid: int) -> Segment:
        return self.segments[sid - 1]

    def leaves(self) -> List[int]:
        parents = {s.parent for s in self.segments}
        return [s.id for s in self.segments if s.id not in parents]

    def _distances(self) -> np.ndarray:
        """(n_segments, *dims) axis distance for every voxel centre (cached)."""
        if "dist" not in self._cache:
            grid = np.stack(np.indices(self.dims), axis=-1).astype(np.float64)
            pts = grid * np.asarray(self.spacing)
            self._cache["dist"] = np.stack(
                [point_segment_distance(pts, s.start, s.end) for s in self.segments]
            )
        return self._cache["dist"]

    @cached_property
    def mask(self) -> BinaryMask:
        d = self._distances()
        radii = np.asarray(self.radii)[:, None, None, None]
        return BinaryMask((d <= radii).any(axis=0), self.spacing)

    @cached_property
    def nearest_segment(self) -> np.ndarray:
        """Segment id (1-based) whose axis is nearest each voxel; ties to the smaller id. 0 outside the mask."""
        lab = np.argmin(self._distances(), axis=0).astype(np.int32) + 1
        lab[~self.mask.data] = 0
        return lab

    def axis_voxels(self, sid: int) -> List[Tuple[int, int, int]]:
        """Voxels hit by the segment axis sampled at quarter-voxel steps, in order, deduplicated."""
        s = self.segment(sid)
        sp = np.asarray(self.spacing)
        n = max(2, int(math.ceil(s.length / (0.25 * sp.min()))) + 1)
        pts = s.start + np.linspace(0.0, 1.0, n)[:, None] * (s.end - s.start)
        out: List[Tuple[int, int, int]] = []
        for v in np.rint(pts / sp).astype(int):
            t = tuple(int(c) for c in v)
            if not out or out[-1] != t:
                out.append(t)
        return out

    @cached_property
    def centerline(self) -> BinaryMask:
        """Rasterized analytic axes."""
        data = np.zeros(self.dims, dtype=bool)
        for s in self.segments:
            data[tuple(np.asarray(self.axis_voxels(s.id)).T)] = True
        return BinaryMask(data, self.spacing)

    def to_json(self) -> dict:
        """Ground-truth graph in the skeleton-graph schema, flagged ``"analytic": true``."""
        sp = np.asarray(self.spacing)
        points: List[np.ndarray] = []
        ids: List[List[int]] = []

        def node_of(p, sid):
            for i, q in enumerate(points):
                if np.allclose(p, q):
                    ids[i].append(sid)
                    return i
            points.append(p)
            ids.append([sid])
            return len(points) - 1

        ends = [(node_of(s.start, s.id), node_of(s.end, s.id)) for s in self.segments]
        return {
            "analytic": True,
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "nodes": [
                {"id": i, "xyz": (p / sp).tolist(),
                 "kind": "endpoint" if len(ids[i]) == 1 else "junction"}
                for i, p in enumerate(points)
            ],
            "branches": [
                {
                    "id": s.id,
                    "voxels": [list(v) for v in self.axis_voxels(s.id)],
                    "nodes": list(ends[k]),
                    "length_mm": s.length,
                    "radius_mm": s.radius,
                    "size_class": classify_branch_size(s.radius),
                    "cyclic": False,
                    "start_mm": s.start.tolist(),
                    "end_mm": s.end.tolist(),
                    "parent": s.parent,
                    "generation": s.generation,
                }
                for k, s in enumerate(self.segments)
            ],
        }


def _grow(params: TreeParams, rng: np.random.Generator) -> List[Segment]:
    extent = np.asarray(params.dims, dtype=float) * np.asarray(params.spacing)
    d0 = np.asarray(params.root_direction, dtype=float)
    d0 = d0 / np.linalg.norm(d0)
    if params.root_start is not None:
        start = np.asarray(params.root_start, dtype=float)
    else:
        start = extent / 2.0 - d0 * (extent / 2.0 - params.root_radius
                                     - (params.margin_vox + 1) * max(params.spacing))
    segs: List[Segment] = []
    frontier = [(start, d0, params.root_radius, 0, None)]
    while frontier:
        nxt = []
        for p0, d, r, gen, parent in frontier:
            length = rng.uniform(*params.length_range)
            end = p0 + d * length
            seg = Segment(len(segs) + 1, p0, end, r, gen, parent)
            segs.append(seg)
            if gen + 1 < params.depth:
                u = _perpendicular(d)
                v = np.cross(d, u)
                az0 = rng.uniform(0.0, 2 * math.pi)
                for k in range(params.children):
                    theta = math.radians(rng.uniform(*params.angle_range))
                    az = az0 + 2 * math.pi * k / params.children
                    side = math.cos(az) * u + math.sin(az) * v
                    child = math.cos(theta) * d + math.sin(theta) * side
                    nxt.append((end, child / np.linalg.norm(child), r * params.radius_decay,
                                gen + 1, seg.id))
        frontier = nxt
    return segs


def _valid(params: TreeParams, segs: Sequence[Segment]) -> bool:
    vox = max(params.spacing)
    extent = np.asarray(params.dims, dtype=float) - 1.0
    spacing = np.asarray(params.spacing)
    for s in segs:
        for p in (s.start, s.end):
            lo = (p - s.radius) / spacing
            hi = (p + s.radius) / spacing
            if np.any(lo < params.margin_vox) or np.any(hi > extent - params.margin_vox):
                return False
    sep = params.separation_vox * vox
    for i, a in enumerate(segs):
        for b in segs[i + 1:]:
            need = a.radius + b.radius + sep
            shared = None
            for pa in (a.start, a.end):
                for pb in (b.start, b.end):
                    if np.allclose(pa, pb):
                        shared = pa
            if shared is None:
                if segment_distance(a.start, a.end, b.start, b.end) < need:
                    return False
                continue
            # compare only the parts beyond a ball of radius `need` around the shared point
            parts = []
            for s in (a, b):
                far = s.end if np.allclose(s.start, shared) else s.start
                direc = (far - shared) / s.length
                if s.length <= need:
                    return False
                parts.append((shared + direc * need, far))
            if segment_distance(*parts[0], *parts[1]) < need:
                return False
    return True


def generate(params: TreeParams) -> GroundTruthTree:
    """Deterministic tree for ``params.seed``; retries angle/length draws until the
    geometry fits the volume and satisfies the separation rule."""
    rng = np.random.default_rng(params.seed)
    for _ in range(params.max_retries):
        segs = _grow(params, rng)
        if _valid(params, segs):
            return GroundTruthTree(params, segs)
    raise SeparationError(
        f"no valid tree for seed {params.seed} within {params.max_retries} attempts"
    )


# ------------------------------------------------------------------ perturbations


def _ball(radius_vox: int) -> np.ndarray:
    r = int(radius_vox)
    g = np.indices((2 * r + 1,) * 3) - r
    return (g ** 2).sum(axis=0) <= r * r


def delete_branch(tree: GroundTruthTree, branch_ids, mask: Optional[BinaryMask] = None) -> BinaryMask:
    """Zero every voxel whose nearest segment axis belongs to one of ``branch_ids``."""
    ids = [branch_ids] if np.isscalar(branch_ids) else list(branch_ids)
    for bid in ids:
        if not 1 <= bid <= tree.branch_count:
            raise ValueError(f"no branch with id {bid}")
    base = tree.mask if mask is None else mask
    data = base.data & ~np.isin(tree.nearest_segment, ids)
    return base.with_data(data)


def erode(tree: GroundTruthTree, k: int = 1, mask: Optional[BinaryMask] = None) -> BinaryMask:
    if k < 1:
        raise ValueError("morphology radius must be >= 1")
    base = tree.mask if mask is None else mask
    return base.with_data(ndimage.binary_erosion(base.data, _ball(k), border_value=0))


def dilate(tree: GroundTruthTree, k: int = 1, mask: Optional[BinaryMask] = None) -> BinaryMask:
    if k < 1:
        raise ValueError("morphology radius must be >= 1")
    base = tree.mask if mask is None else mask
    return base.with_data(ndimage.binary_dilation(base.data, _ball(k)))


def add_blob(tree: GroundTruthTree, pos, r: float, mask: Optional[BinaryMask] = None) -> BinaryMask:
    """OR a ball of radius ``r`` mm centred at voxel ``pos`` into the mask."""
    base = tree.mask if mask is None else mask
    sp = np.asarray(base.spacing)
    grid = np.stack(np.indices(base.dims), axis=-1) * sp
    ball = np.sqrt(((grid - np.asarray(pos, dtype=float) * sp) ** 2).sum(axis=-1)) <= r
    return base.with_data(base.data | ball)


def break_gap(tree: GroundTruthTree, branch: int, length_mm: float,
              mask: Optional[BinaryMask] = None) -> BinaryMask:
    """Zero a ``length_mm`` slab across the middle of one branch."""
    if not 1 <= branch <= tree.branch_count:
        raise ValueError(f"no branch with id {branch}")
    seg = tree.segment(branch)
    base = tree.mask if mask is None else mask
    sp = np.asarray(base.spacing)
    grid = np.stack(np.indices(base.dims), axis=-1) * sp
    t = (grid - seg.start) @ seg.direction - seg.length / 2.0
    cut = (np.abs(t) <= length_mm / 2.0) & (tree.nearest_segment == branch)
    return base.with_data(base.data & ~cut)


_OPS = {
    "delete_branch": delete_branch,
    "erode": erode,
    "dilate": dilate,
    "add_blob": add_blob,
    "break_gap": break_gap,
}


def perturb(tree: GroundTruthTree, op: str, **kwargs) -> BinaryMask:
    """Apply one named perturbation (``delete_branch``, ``erode``, ``dilate``, ``add_blob``, ``break_gap``)."""
    if op not in _OPS:
        raise ValueError(f"unknown perturbation {op!r}; expected one of {sorted(_OPS)}")
    return _OPS[op](tree, **kwargs)
