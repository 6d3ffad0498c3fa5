"""Directional 3D thinning that deletes only simple, non-end voxels.

A voxel is deletable when

* it is a border voxel for the current direction (its 6-neighbour that way is background),
* it has more than one 26-neighbour (end voxels are preserved),
* removing it leaves the Euler characteristic unchanged, and
* its 26-neighbourhood (without the voxel) forms a single 26-connected component.

The end-voxel and border tests select candidates; the sequential re-check
repeats only the two simple-point tests.

Foreground uses 26-connectivity and background 6-connectivity. Each iteration
runs six sub-passes (U, D, N, S, E, W); candidates of a sub-pass are collected
first, then re-checked and deleted one by one in ascending x-fastest linear
order so that earlier deletions are visible to later checks.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# neighbourhood index k = (dx+1) + 3*(dy+1) + 9*(dz+1); 13 is the centre
_OFFSETS = np.array(
    [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)
CENTRE = 13

# six border directions: up/down along z, north/south along y, east/west along x
DIRECTIONS = np.array(
    [(0, 0, 1), (0, 0, -1), (0, 1, 0), (0, -1, 0), (1, 0, 0), (-1, 0, 0)], dtype=np.int64
)


def _cells_of_centre():
    """For each vertex, edge and face of the centre cube: the other voxels sharing it.

    A cell of the centre cube is *covered* when any of those voxels is
    foreground. Removing the centre voxel removes exactly the uncovered cells,
    so its Euler-characteristic contribution is V_u - E_u + F_u - 1.
    """
    def idx(d):
        return (d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)

    vertices, edges, faces = [], [], []
    # vertex at corner (sx, sy, sz) in {-1, 1}^3 is shared by voxels with offsets in {0, s}
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                group = [idx((a, b, c)) for a in (0, sx) for b in (0, sy) for c in (0, sz)
                         if (a, b, c) != (0, 0, 0)]
                vertices.append(group)
    # edges parallel to one axis: the two other axes take signs
    for axis in range(3):
        o1, o2 = [a for a in range(3) if a != axis]
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                group = []
                for a in (0, s1):
                    for b in (0, s2):
                        if a == 0 and b == 0:
                            continue
                        d = [0, 0, 0]
                        d[o1], d[o2] = a, b
                        group.append(idx(d))
                edges.append(group)
    for axis in range(3):
        for s in (-1, 1):
            d = [0, 0, 0]
            d[axis] = s
            faces.append([idx(d)])
    return (np.array(vertices, dtype=np.int64), np.array(edges, dtype=np.int64),
            np.array(faces, dtype=np.int64))


_VERTEX_CELLS, _EDGE_CELLS, _FACE_CELLS = _cells_of_centre()


def _adjacency():
    """26-adjacency among the 26 neighbours of the centre (padded lists, -1 terminated)."""
    adj = np.full((27, 26), -1, dtype=np.int64)
    for i in range(27):
        if i == CENTRE:
            continue
        n = 0
        for j in range(27):
            if j == CENTRE or j == i:
                continue
            if np.abs(_OFFSETS[i] - _OFFSETS[j]).max() == 1:
                adj[i, n] = j
                n += 1
    return adj


_ADJ = _adjacency()


@njit(cache=True)
def _neighbourhood(img, x, y, z, out):
    k = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                out[k] = img[x + dx, y + dy, z + dz]
                k += 1


@njit(cache=True)
def _euler_invariant(nb, vcells, ecells, fcells):
    vu = 0
    for i in range(vcells.shape[0]):
        covered = False
        for j in range(vcells.shape[1]):
            if nb[vcells[i, j]]:
                covered = True
                break
        if not covered:
            vu += 1
    eu = 0
    for i in range(ecells.shape[0]):
        covered = False
        for j in range(ecells.shape[1]):
            if nb[ecells[i, j]]:
                covered = True
                break
        if not covered:
            eu += 1
    fu = 0
    for i in range(fcells.shape[0]):
        if not nb[fcells[i, 0]]:
            fu += 1
    return vu - eu + fu == 1


@njit(cache=True)
def _single_component(nb, adj):
    seen = np.zeros(27, dtype=np.bool_)
    stack = np.empty(27, dtype=np.int64)
    start = -1
    total = 0
    for k in range(27):
        if k != 13 and nb[k]:
            total += 1
            if start < 0:
                start = k
    if total == 0:
        return False
    top = 0
    stack[top] = start
    top += 1
    seen[start] = True
    reached = 1
    while top > 0:
        top -= 1
        cur = stack[top]
        for t in range(26):
            nxt = adj[cur, t]
            if nxt < 0:
                break
            if nb[nxt] and not seen[nxt]:
                seen[nxt] = True
                stack[top] = nxt
                top += 1
                reached += 1
    return reached == total


@njit(cache=True)
def _deletable(img, x, y, z, nb, vcells, ecells, fcells, adj):
    _neighbourhood(img, x, y, z, nb)
    count = 0
    for k in range(27):
        if k != 13 and nb[k]:
            count += 1
    if count <= 1:
        return False
    if not _euler_invariant(nb, vcells, ecells, fcells):
        return False
    return _single_component(nb, adj)


@njit(cache=True)
def _thin(img, directions, vcells, ecells, fcells, adj):
    nx, ny, nz = img.shape
    nb = np.zeros(27, dtype=np.uint8)
    cand = np.empty((nx * ny * nz, 3), dtype=np.int64)
    changed = True
    while changed:
        changed = False
        for d in range(6):
            ddx, ddy, ddz = directions[d, 0], directions[d, 1], directions[d, 2]
            n = 0
            for z in range(1, nz - 1):
                for y in range(1, ny - 1):
                    for x in range(1, nx - 1):
                        if img[x, y, z] == 0 or img[x + ddx, y + ddy, z + ddz] != 0:
                            continue
                        if _deletable(img, x, y, z, nb, vcells, ecells, fcells, adj):
                            cand[n, 0] = x
                            cand[n, 1] = y
                            cand[n, 2] = z
                            n += 1
            for i in range(n):
                x, y, z = cand[i, 0], cand[i, 1], cand[i, 2]
                _neighbourhood(img, x, y, z, nb)
                if _euler_invariant(nb, vcells, ecells, fcells) and _single_component(nb, adj):
                    img[x, y, z] = 0
                    changed = True
    return img


def thin(data: np.ndarray) -> np.ndarray:
    """Thin a boolean ``[x, y, z]`` array; voxels outside the array count as background."""
    img = np.zeros(tuple(n + 2 for n in data.shape), dtype=np.uint8)
    img[1:-1, 1:-1, 1:-1] = data
    _thin(img, DIRECTIONS, _VERTEX_CELLS, _EDGE_CELLS, _FACE_CELLS, _ADJ)
    return img[1:-1, 1:-1, 1:-1].astype(bool)


def is_simple(patch: np.ndarray) -> bool:
    """Deletability test on a single 3x3x3 ``[x, y, z]`` neighbourhood (centre foreground)."""
    nb = np.ascontiguousarray(np.asarray(patch, dtype=np.uint8).transpose(2, 1, 0)).reshape(27)
    return bool(_deletable_nb(nb))


def _deletable_nb(nb):
    count = int(nb.sum()) - int(nb[CENTRE])
    if count <= 1:
        return False
    return bool(_euler_invariant(nb, _VERTEX_CELLS, _EDGE_CELLS, _FACE_CELLS)) and bool(
        _single_component(nb, _ADJ)
    )
