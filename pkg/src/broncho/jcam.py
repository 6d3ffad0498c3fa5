"""Jaccard, continuity, cross-entropy and accumulation-map losses.

All losses take a soft prediction ``X`` (a :class:`~broncho.diffcore.Tensor`
or an array of values in [0, 1], shape ``W x H x D``) and return a scalar
tensor, so they can be differentiated with :func:`broncho.diffcore.backward`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor
from .errors import EmptyMaskError, ShapeMismatchError
from .volcore import BinaryMask

AXES = {"W": 0, "H": 1, "D": 2}


@dataclass(frozen=True)
class JcamWeights:
    """Term weights. Defaults: 1 for Jaccard, continuity and CE; 0.3 for both accumulation terms."""

    alpha: float = 1.0   # Jaccard
    beta: float = 1.0    # continuity
    phi: float = 1.0     # cross-entropy
    gamma: float = 0.3   # linear accumulation map
    delta: float = 0.3   # nonlinear accumulation map
    epsilon: float = 1.0
    prob_clamp: float = 1e-7

    def __post_init__(self):
        for name in ("alpha", "beta", "phi", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.prob_clamp < 0.5:
            raise ValueError("prob_clamp must lie in (0, 0.5)")


@dataclass(frozen=True)
class LossBreakdown:
    l_jaccard: float
    l_continuity: float
    l_ce: float
    l_lam: float
    l_nlam: float
    total: float
    total_tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("total_tensor")
        return d


ArrayLike = Union[np.ndarray, BinaryMask, Tensor]


def _array(y) -> np.ndarray:
    if isinstance(y, BinaryMask):
        return y.data.astype(np.float64)
    if isinstance(y, Tensor):
        return y.value
    return np.asarray(y, dtype=np.float64)


def _pair(X, Y):
    """Lift ``X`` onto a tape (a fresh one for plain arrays) and ``Y`` alongside it."""
    if not isinstance(X, Tensor):
        X = Tape().constant(_array(X))
    if isinstance(Y, Tensor):
        if Y.tape is not X.tape:
            raise ValueError("X and Y live on different tapes")
    else:
        Y = X.tape.constant(_array(Y))
    if X.shape != Y.shape:
        raise ShapeMismatchError(f"prediction {X.shape} and target {Y.shape} differ in shape")
    return X, Y


def soft_jaccard_loss(X, Y, epsilon: float = 1.0, squared: bool = False) -> Tensor:
    """``1 - (sum xy + eps) / (sum x + sum y - sum xy + eps)`` over all voxels.

    With ``squared`` the denominator uses ``sum x^2 + sum y^2``. Both forms agree
    on binary inputs; only the squared one vanishes at ``X = Y`` for soft values.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    X, Y = _pair(X, Y)
    inter = dc.sum(dc.mul(X, Y))
    if squared:
        union = dc.sub(dc.add(dc.sum(dc.square(X)), dc.sum(dc.square(Y))), inter)
    else:
        union = dc.sub(dc.add(dc.sum(X), dc.sum(Y)), inter)
    score = dc.div(dc.scalar_add(inter, epsilon), dc.scalar_add(union, epsilon))
    return dc.scalar_add(dc.scalar_mul(score, -1.0), 1.0)


def continuity_loss(X, Y_CL) -> Tensor:
    """One minus the fraction of centreline voxels covered by the prediction."""
    X, C = _pair(X, Y_CL)
    n = float(C.value.sum())
    if n <= 0:
        raise EmptyMaskError("continuity loss needs a nonempty centreline")
    covered = dc.sum(dc.mul(X, C))
    return dc.scalar_add(dc.scalar_mul(covered, -1.0 / n), 1.0)


def bce_loss(X, Y, prob_clamp: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy with probabilities clipped to ``[c, 1 - c]``."""
    X, Y = _pair(X, Y)
    p = dc.clamp(X, prob_clamp, 1.0 - prob_clamp)
    q = dc.clamp(dc.scalar_add(dc.scalar_mul(X, -1.0), 1.0), prob_clamp, 1.0 - prob_clamp)
    ny = dc.scalar_add(dc.scalar_mul(Y, -1.0), 1.0)
    ll = dc.add(dc.mul(Y, dc.log(p)), dc.mul(ny, dc.log(q)))
    return dc.scalar_mul(dc.mean(ll), -1.0)


def _axis(axis) -> int:
    if isinstance(axis, str):
        if axis.upper() not in AXES:
            raise ValueError(f"axis must be one of W, H, D; got {axis!r}")
        return AXES[axis.upper()]
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2; got {axis!r}")
    return int(axis)


def lam(X, axis) -> Tensor:
    """Linear accumulation map: ``X`` summed along one axis."""
    ax = _axis(axis)
    if not isinstance(X, Tensor):
        X = Tape().constant(_array(X))
    if X.ndim != 3:
        raise ValueError(f"accumulation maps need a 3D volume, got {X.shape}")
    return dc.sum(X, ax)


def lam_loss(X, Y) -> Tensor:
    """Sum over the three axes of the mean absolute difference of projections."""
    X, Y = _pair(X, Y)
    terms = [dc.mean(dc.abs(dc.sub(lam(X, a), lam(Y, a)))) for a in range(3)]
    return dc.add(dc.add(terms[0], terms[1]), terms[2])


def nlam_loss(X, Y, epsilon: float = 1.0) -> Tensor:
    """Sum over the three axes of the Jaccard loss between tanh-squashed projections.

    The squashed maps are soft, so the squared-denominator form is used; it
    equals the plain form on binary maps and is exactly 0 when the maps agree.
    """
    X, Y = _pair(X, Y)
    terms = [
        soft_jaccard_loss(dc.tanh(lam(X, a)), dc.tanh(lam(Y, a)), epsilon, squared=True)
        for a in range(3)
    ]
    return dc.add(dc.add(terms[0], terms[1]), terms[2])


def jcam_loss(X, Y, Y_CL, weights: JcamWeights = JcamWeights()) -> LossBreakdown:
    """Weighted composite; ``total_tensor`` carries the graph for backpropagation."""
    X, Yt = _pair(X, Y)
    _, Ct = _pair(X, Y_CL)
    w = weights
    parts = {
        "l_jaccard": soft_jaccard_loss(X, Yt, w.epsilon),
        "l_continuity": continuity_loss(X, Ct),
        "l_ce": bce_loss(X, Yt, w.prob_clamp),
        "l_lam": lam_loss(X, Yt),
        "l_nlam": nlam_loss(X, Yt, w.epsilon),
    }
    coef = {
        "l_jaccard": w.alpha, "l_continuity": w.beta, "l_ce": w.phi,
        "l_lam": w.gamma, "l_nlam": w.delta,
    }
    total = None
    for name, term in parts.items():
        scaled = dc.scalar_mul(term, coef[name])
        total = scaled if total is None else dc.add(total, scaled)
    return LossBreakdown(
        **{k: float(v.value) for k, v in parts.items()},
        total=float(total.value),
        total_tensor=total,
    )
