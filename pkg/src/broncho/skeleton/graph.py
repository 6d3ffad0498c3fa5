"""Centreline graph: endpoints, junction clusters and the branches between them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DomainError, FormatError
from ..volcore import BinaryMask, Volume3D

Voxel = Tuple[int, int, int]

SIZE_CLASSES = ("TB", "SB", "MB", "LB")
# upper radius bound (mm, inclusive) of each class below LB
SIZE_BOUNDS = {"TB": 2.0, "SB": 4.0, "MB": 8.0}


def classify_branch_size(radius_mm: float) -> str:
    """TB (<= 2 mm), SB (<= 4 mm), MB (<= 8 mm), LB (> 8 mm); boundaries go to the smaller class."""
    if not radius_mm > 0:
        raise ValueError(f"radius must be positive, got {radius_mm}")
    for name in ("TB", "SB", "MB"):
        if radius_mm <= SIZE_BOUNDS[name]:
            return name
    return "LB"


class NotThinError(FormatError):
    pass


@dataclass
class Node:
    id: int
    xyz: Voxel
    kind: str                      # "endpoint", "junction" or "isolated"
    voxels: List[Voxel]


@dataclass
class Branch:
    id: int                        # 1-based; 0 is reserved for background labels
    voxels: List[Voxel]            # interior voxels in path order (node voxels excluded)
    path: List[Voxel]              # full ordered path including node attachment voxels
    nodes: Tuple[Optional[int], Optional[int]]
    length_mm: float
    cyclic: bool = False
    radius_mm: Optional[float] = None
    owned: List[Voxel] = field(default_factory=list, repr=False)  # voxels that claim foreground

    @property
    def size_class(self) -> Optional[str]:
        if self.radius_mm is None or not self.radius_mm > 0:
            return None
        return classify_branch_size(self.radius_mm)


@dataclass
class SkeletonGraph:
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    nodes: List[Node] = field(default_factory=list)
    branches: List[Branch] = field(default_factory=list)

    @property
    def endpoints(self) -> List[Node]:
        return [n for n in self.nodes if n.kind == "endpoint"]

    @property
    def junctions(self) -> List[Node]:
        return [n for n in self.nodes if n.kind == "junction"]

    @property
    def branch_lengths(self) -> List[float]:
        return [b.length_mm for b in self.branches]

    @property
    def branch_radii(self) -> List[Optional[float]]:
        return [b.radius_mm for b in self.branches]

    def branch(self, bid: int) -> Branch:
        return self.branches[bid - 1]

    def to_json(self, analytic: bool = False) -> dict:
        doc = {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "nodes": [{"id": n.id, "xyz": list(n.xyz), "kind": n.kind} for n in self.nodes],
            "branches": [
                {
                    "id": b.id,
                    "voxels": [list(v) for v in b.voxels],
                    "nodes": [n for n in b.nodes],
                    "length_mm": b.length_mm,
                    "radius_mm": b.radius_mm,
                    "size_class": b.size_class,
                    "cyclic": b.cyclic,
                }
                for b in self.branches
            ],
        }
        if analytic:
            doc["analytic"] = True
        return doc


def _linear_key(v: Voxel):
    return (v[2], v[1], v[0])


def path_length(path: List[Voxel], spacing, closed: bool = False) -> float:
    if len(path) < 2:
        return 0.0
    pts = np.asarray(path, dtype=np.float64) * np.asarray(spacing)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    steps = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    return float(steps.sum())


def has_block(data: np.ndarray) -> bool:
    """True when some 2x2x2 cube is entirely foreground."""
    d = data
    if min(d.shape) < 2:
        return False
    block = np.ones(tuple(n - 1 for n in d.shape), dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                block &= d[dx:d.shape[0] - 1 + dx, dy:d.shape[1] - 1 + dy, dz:d.shape[2] - 1 + dz]
    return bool(block.any())


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _neighbour_lists(coords: List[Voxel]) -> List[List[int]]:
    index = {v: i for i, v in enumerate(coords)}
    out = []
    for (x, y, z) in coords:
        nbs = []
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dx == dy == dz == 0:
                        continue
                    j = index.get((x + dx, y + dy, z + dz))
                    if j is not None:
                        nbs.append(j)
        out.append(nbs)
    return out


def build_graph(skeleton: BinaryMask, spacing=None) -> SkeletonGraph:
    """Decompose a thin skeleton into nodes and branches.

    Voxels with one 26-neighbour are endpoints, two are path voxels, three or
    more are junction voxels; 26-adjacent junction voxels merge into a single
    node. Components without any node become cyclic branches.
    """
    spacing = tuple(float(s) for s in (spacing if spacing is not None else skeleton.spacing))
    data = skeleton.data
    if has_block(data):
        raise NotThinError("skeleton contains a 2x2x2 foreground block; thin it first")
    coords = sorted((tuple(int(c) for c in v) for v in np.argwhere(data)), key=_linear_key)
    graph = SkeletonGraph(dims=skeleton.dims, spacing=spacing)
    if not coords:
        return graph
    nbrs = _neighbour_lists(coords)
    deg = [len(n) for n in nbrs]
    n = len(coords)

    is_junction = [d >= 3 for d in deg]
    uf = _UnionFind(n)
    for i in range(n):
        if is_junction[i]:
            for j in nbrs[i]:
                if is_junction[j]:
                    uf.union(i, j)
    # a path voxel touching two voxels of one cluster is a nub of that cluster
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if is_junction[i] or deg[i] != 2:
                continue
            a, b = nbrs[i]
            if is_junction[a] and is_junction[b] and uf.find(a) == uf.find(b):
                is_junction[i] = True
                uf.union(i, a)
                changed = True

    groups: Dict[int, List[int]] = {}
    for i in range(n):
        if is_junction[i]:
            groups.setdefault(uf.find(i), []).append(i)
        elif deg[i] <= 1:
            groups[i] = [i]
    node_of = [-1] * n
    members_of: Dict[int, List[int]] = {}
    for members in sorted(groups.values(), key=lambda m: min(m)):
        nid = len(graph.nodes)
        vox = [coords[i] for i in sorted(members)]
        if is_junction[members[0]]:
            kind = "junction"
            centre = np.mean(np.asarray(vox, dtype=float), axis=0)
            rep = min(vox, key=lambda v: (float(((np.asarray(v) - centre) ** 2).sum()), _linear_key(v)))
        else:
            kind = "endpoint" if deg[members[0]] == 1 else "isolated"
            rep = vox[0]
        graph.nodes.append(Node(nid, rep, kind, vox))
        members_of[nid] = sorted(members)
        for i in members:
            node_of[i] = nid

    visited = [False] * n
    seen_pairs = set()
    branches: List[Tuple[List[int], Tuple[Optional[int], Optional[int]], bool]] = []
    for node in graph.nodes:
        if node.kind == "isolated":
            branches.append((members_of[node.id], (node.id, node.id), False))
            continue
        for start in members_of[node.id]:
            for nb in sorted(nbrs[start]):
                other = node_of[nb]
                if other == node.id:
                    continue
                if other >= 0:
                    key = (min(node.id, other), max(node.id, other))
                    if key in seen_pairs:
                        continue
                    seen_pairs.add(key)
                    branches.append(([start, nb], (node.id, other), False))
                    continue
                if visited[nb]:
                    continue
                path = [start, nb]
                visited[nb] = True
                prev, cur = start, nb
                end = None
                while True:
                    nxt = [j for j in nbrs[cur] if j != prev]
                    if len(nxt) != 1:
                        break
                    nxt = nxt[0]
                    if node_of[nxt] >= 0:
                        path.append(nxt)
                        end = node_of[nxt]
                        break
                    if visited[nxt]:
                        break
                    visited[nxt] = True
                    path.append(nxt)
                    prev, cur = cur, nxt
                branches.append((path, (node.id, end), False))

    for i in range(n):
        if node_of[i] >= 0 or visited[i]:
            continue
        path = [i]
        visited[i] = True
        prev, cur = None, i
        while True:
            nxt = [j for j in nbrs[cur] if j != prev and not visited[j]]
            if not nxt:
                break
            prev, cur = cur, min(nxt)
            visited[cur] = True
            path.append(cur)
        branches.append((path, (None, None), True))

    for bid, (path, ends, cyclic) in enumerate(branches, start=1):
        vox = [coords[i] for i in path]
        if cyclic:
            interior = vox
        elif ends[0] == ends[1] and len(path) == 1:
            interior = []  # isolated point
        else:
            interior = [coords[i] for i in path if node_of[i] < 0]
        owned = [
            coords[i] for i in path
            if node_of[i] < 0 or graph.nodes[node_of[i]].kind != "junction"
        ]
        graph.branches.append(
            Branch(
                id=bid,
                voxels=interior,
                path=vox,
                nodes=ends,
                length_mm=path_length(vox, spacing, closed=cyclic),
                cyclic=cyclic,
                owned=owned,
            )
        )
    return graph


def branch_radii(graph: SkeletonGraph, dt: Volume3D) -> SkeletonGraph:
    """Set each branch radius to the mean distance-transform value over its path voxels.

    Interior voxels are used when a branch has any, otherwise its node voxels.
    """
    if dt.dims != graph.dims:
        raise FormatError(f"distance map dims {dt.dims} differ from graph dims {graph.dims}")
    for b in graph.branches:
        vox = b.voxels or b.path
        idx = tuple(np.asarray(vox).T)
        b.radius_mm = float(dt.data[idx].mean())
    return graph


@dataclass(frozen=True, eq=False)
class BranchAssignment:
    labels: np.ndarray                 # int32 [x, y, z]; 0 background, else branch id
    n_branches: int

    def region(self, bid: int) -> np.ndarray:
        return self.labels == bid

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n_branches + 1)


def assign_voxels(mask: BinaryMask, graph: SkeletonGraph) -> BranchAssignment:
    """Label every foreground voxel with the branch owning its nearest skeleton voxel.

    Distances are Euclidean in millimetres; ties go to the smaller branch id.
    Junction-cluster voxels own no foreground, so voxels around a junction go
    to whichever incident branch is closest.
    """
    if mask.dims != graph.dims:
        raise FormatError(f"mask dims {mask.dims} differ from graph dims {graph.dims}")
    labels = np.zeros(mask.dims, dtype=np.int32)
    fg = np.argwhere(mask.data)
    if len(fg) == 0:
        return BranchAssignment(labels, len(graph.branches))
    seeds, owner = [], []
    for b in graph.branches:
        for v in b.owned:
            seeds.append(v)
            owner.append(b.id)
    if not seeds:
        raise DomainError("cannot assign foreground voxels: the skeleton is empty")
    spacing = np.asarray(mask.spacing)
    owner = np.asarray(owner)
    tree = cKDTree(np.asarray(seeds, dtype=np.float64) * spacing)
    k = min(8, len(seeds))
    dist, idx = tree.query(fg * spacing, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    best = dist[:, :1]
    tied = dist <= best * (1 + 1e-12) + 1e-12
    ids = np.where(tied, owner[idx], np.iinfo(np.int64).max)
    labels[tuple(fg.T)] = ids.min(axis=1)
    return BranchAssignment(labels, len(graph.branches))


def prune_spurs(skeleton: BinaryMask, min_length_mm: float) -> BinaryMask:
    """Remove endpoint-to-junction branches shorter than ``min_length_mm`` (one pass)."""
    if min_length_mm <= 0:
        return skeleton
    graph = build_graph(skeleton)
    kinds = {n.id: n.kind for n in graph.nodes}
    data = skeleton.data.copy()
    for b in graph.branches:
        a, z = b.nodes
        if b.cyclic or a is None or z is None:
            continue
        ends = {kinds[a], kinds[z]}
        if ends == {"endpoint", "junction"} and b.length_mm < min_length_mm:
            drop = [v for v, nid in ((b.path[0], a), (b.path[-1], z)) if kinds[nid] == "endpoint"]
            for v in b.voxels + drop:
                data[v] = False
    return skeleton.with_data(data)
