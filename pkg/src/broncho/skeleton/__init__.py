"""Thinning, centreline graphs, distance transform and per-branch measurements."""
from __future__ import annotations

from ..volcore import BinaryMask
from .distance import distance_transform
from .graph import (
    SIZE_BOUNDS,
    SIZE_CLASSES,
    Branch,
    BranchAssignment,
    Node,
    NotThinError,
    SkeletonGraph,
    assign_voxels,
    branch_radii,
    build_graph,
    classify_branch_size,
    has_block,
    path_length,
    prune_spurs,
)
from .thinning import thin


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Topology-preserving curve skeleton of ``mask`` (see :mod:`.thinning`)."""
    return mask.with_data(thin(mask.data))


def analyze(mask: BinaryMask, prune_below_mm: float = 0.0):
    """Skeleton, graph with radii, and voxel assignment for one mask."""
    skel = skeletonize(mask)
    if prune_below_mm > 0:
        skel = prune_spurs(skel, prune_below_mm)
    graph = build_graph(skel)
    branch_radii(graph, distance_transform(mask))
    return skel, graph, assign_voxels(mask, graph)


__all__ = [
    "SIZE_BOUNDS", "SIZE_CLASSES", "Branch", "BranchAssignment", "Node", "NotThinError",
    "SkeletonGraph", "analyze", "assign_voxels", "branch_radii", "build_graph",
    "classify_branch_size", "distance_transform", "has_block", "path_length",
    "prune_spurs", "skeletonize", "thin",
]
