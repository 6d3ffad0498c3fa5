import functools

import numpy as np

from broncho.synth import TreeParams, generate, point_segment_distance
from broncho.volcore import BinaryMask


# one "PASS/FAIL <criterion>: <detail>" line per acceptance criterion, printed at session end
ACCEPTANCE_LINES = []


@functools.lru_cache(maxsize=None)
def tree(seed: int = 0, **kw):
    return generate(TreeParams(seed=seed, **kw))


def mask(data, spacing=(1.0, 1.0, 1.0)) -> BinaryMask:
    return BinaryMask(np.asarray(data, dtype=bool), spacing)


def match_segments(gt_tree, graph):
    """Analytic segment id for each skeleton branch: the segment nearest to most of its voxels."""
    out = {}
    for b in graph.branches:
        pts = np.asarray(b.voxels or b.path, dtype=float) * np.asarray(gt_tree.spacing)
        d = np.stack([point_segment_distance(pts, s.start, s.end) for s in gt_tree.segments])
        out[b.id] = int(np.bincount(d.argmin(axis=0)).argmax()) + 1
    return out


# ------------------------------------------------------------------ thinning fixtures


def bar(n=20, w=5):
    d = np.zeros((w + 2, w + 2, n + 2), bool)
    d[1:-1, 1:-1, 1:-1] = True
    return d


def ell():
    d = np.zeros((18, 18, 6), bool)
    d[1:15, 1:5, 1:5] = True
    d[1:5, 1:17, 1:5] = True
    return d


def wye(arm=10, r=1.5):
    size = 2 * arm + 7
    c = np.array([size // 2] * 3, float)
    tips = [c + arm * np.array(v) / np.linalg.norm(v) for v in ((0, 0, 1), (1, 0, -0.6), (-1, 0, -0.6))]
    g = np.stack(np.meshgrid(*(np.arange(size),) * 3, indexing="ij"), -1).reshape(-1, 3).astype(float)
    d = np.zeros(len(g), bool)
    for t in tips:
        d |= point_segment_distance(g, c, t) <= r
    return d.reshape((size,) * 3)


def torus(R=6.0, r=2.2):
    n = int(2 * (R + r)) + 5
    c = (n - 1) / 2
    x, y, z = np.meshgrid(*(np.arange(n) - c,) * 3, indexing="ij")
    return (np.sqrt(x ** 2 + y ** 2) - R) ** 2 + z ** 2 <= r ** 2


def two_blobs():
    n = 24
    x, y, z = np.meshgrid(*(np.arange(n),) * 3, indexing="ij")
    a = (x - 6) ** 2 + (y - 6) ** 2 + (z - 6) ** 2 <= 16
    b = (x - 16) ** 2 / 4 + (y - 16) ** 2 + (z - 15) ** 2 <= 9
    return a | b


THINNING_FIXTURES = {"bar": bar, "L": ell, "Y": wye, "torus": torus, "two blobs": two_blobs}
