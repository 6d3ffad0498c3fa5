"""Primitive operations with hand-written backward rules.

Each primitive is a forward function, a backward rule returning one gradient
per input (``None`` for non-differentiable inputs), and optionally a kink
function reporting how far the current inputs sit from a point where the
derivative is discontinuous.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tape import Tensor

DEFAULT_LEAKY_SLOPE = 0.01
DEFAULT_IN_EPS = 1e-5


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    backward_rule: Callable
    kink: Optional[Callable] = None

    def backward(self, g, xs, out, **attrs):
        grads = self.backward_rule(g, *xs, out=out, **attrs)
        if self.name in _FAULTS:
            grads = tuple(None if gi is None else -gi for gi in grads)
        return grads


PRIMITIVES: Dict[str, Primitive] = {}
_FAULTS: set = set()


@contextlib.contextmanager
def inject_fault(name: str):
    """Flip the sign of one primitive's backward rule (negative-control testing)."""
    if name not in PRIMITIVES:
        raise KeyError(f"unknown primitive {name!r}")
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


def _register(name, forward, backward_rule, kink=None) -> Primitive:
    prim = Primitive(name, forward, backward_rule, kink)
    PRIMITIVES[name] = prim
    return prim


def _apply(prim: Primitive, inputs: Sequence, **attrs) -> Tensor:
    tape = next((x.tape for x in inputs if isinstance(x, Tensor)), None)
    if tape is None:
        raise TypeError(f"{prim.name}: at least one input must be a Tensor")
    tensors = [tape.lift(x) for x in inputs]
    value = prim.forward(*(t.value for t in tensors), **attrs)
    return tape.record(prim.name, tensors, value, attrs)


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

_ADD = _register("add", lambda a, b: a + b, lambda g, a, b, out: (g, g))
_SUB = _register("sub", lambda a, b: a - b, lambda g, a, b, out: (g, -g))
_MUL = _register("mul", lambda a, b: a * b, lambda g, a, b, out: (g * b, g * a))
_DIV = _register("div", lambda a, b: a / b, lambda g, a, b, out: (g / b, -g * out / b))


def _binary(prim):
    def op(a, b) -> Tensor:
        av = a.value if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
        bv = b.value if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
        _same_shape(prim.name, av, bv)
        return _apply(prim, (a, b))

    op.__name__ = prim.name
    return op


add = _binary(_ADD)
sub = _binary(_SUB)
mul = _binary(_MUL)
div = _binary(_DIV)

_SCALAR_MUL = _register(
    "scalar_mul", lambda x, c: x * c, lambda g, x, out, c: (g * c,)
)
_SCALAR_ADD = _register(
    "scalar_add", lambda x, c: x + c, lambda g, x, out, c: (g,)
)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    return _apply(_SCALAR_MUL, (x,), c=float(c))


def scalar_add(x: Tensor, c: float) -> Tensor:
    return _apply(_SCALAR_ADD, (x,), c=float(c))


_SQUARE = _register("square", np.square, lambda g, x, out: (2.0 * g * x,))
_EXP = _register("exp", np.exp, lambda g, x, out: (g * out,))
_LOG = _register("log", np.log, lambda g, x, out: (g / x,))
_TANH = _register("tanh", np.tanh, lambda g, x, out: (g * (1.0 - out * out),))
_ABS = _register(
    "abs",
    np.abs,
    lambda g, x, out: (g * np.sign(x),),  # sign(0) = 0 is the chosen subgradient
    kink=lambda x: float(np.abs(x).min()) if x.size else np.inf,
)


def square(x: Tensor) -> Tensor:
    return _apply(_SQUARE, (x,))


def exp(x: Tensor) -> Tensor:
    return _apply(_EXP, (x,))


def log(x: Tensor) -> Tensor:
    if np.any(x.value <= 0):
        raise ValueError("log: nonpositive input")
    return _apply(_LOG, (x,))


def tanh(x: Tensor) -> Tensor:
    return _apply(_TANH, (x,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _apply(_ABS, (x,))


def _leaky_fwd(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_bwd(g, x, out, slope):
    return (g * np.where(x > 0, 1.0, slope),)


_LEAKY = _register(
    "leaky_relu", _leaky_fwd, _leaky_bwd,
    kink=lambda x, slope: float(np.abs(x).min()) if x.size else np.inf,
)


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    return _apply(_LEAKY, (x,), slope=float(slope))


def _clamp_bwd(g, x, out, lo, hi):
    inside = (x > lo) & (x < hi)
    return (g * inside,)


def _clamp_kink(x, lo, hi):
    if not x.size:
        return np.inf
    return float(min(np.abs(x - lo).min(), np.abs(x - hi).min()))


_CLAMP = _register(
    "clamp", lambda x, lo, hi: np.clip(x, lo, hi), _clamp_bwd, kink=_clamp_kink
)


def clamp(x: Tensor, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient passes only strictly inside the interval."""
    if lo > hi:
        raise ValueError(f"clamp: lo {lo} > hi {hi}")
    return _apply(_CLAMP, (x,), lo=float(lo), hi=float(hi))


# ---------------------------------------------------------------- reductions


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted(a % ndim for a in axes))
    if len(set(out)) != len(out):
        raise ValueError(f"repeated axis in {axes}")
    return out


def _sum_bwd(g, x, out, axes):
    return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)


_SUM = _register("sum", lambda x, axes: np.sum(x, axis=axes), _sum_bwd)


def sum(x: Tensor, axes=None) -> Tensor:  # noqa: A001
    """Sum over ``axes`` (all axes when ``None``)."""
    return _apply(_SUM, (x,), axes=_norm_axes(axes, x.ndim))


def mean(x: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scalar_mul(sum(x, axes), 1.0 / n)


def _max_fwd(x, axis):
    return np.max(x, axis=axis)


def _max_bwd(g, x, out, axis):
    idx = np.argmax(x, axis=axis)  # first maximal index
    mask = np.zeros_like(x)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    return (mask * np.expand_dims(g, axis),)


def _max_kink(x, axis):
    if x.shape[axis] < 2:
        return np.inf
    part = -np.partition(-x, 1, axis=axis)
    top = np.take(part, 0, axis=axis)
    second = np.take(part, 1, axis=axis)
    return float((top - second).min())


_MAX = _register("max_over_axis", _max_fwd, _max_bwd, kink=_max_kink)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; ties route the whole gradient to the first maximal index."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    return _apply(_MAX, (x,), axis=axis % x.ndim)


# ---------------------------------------------------------------- shape ops

_RESHAPE = _register(
    "reshape",
    lambda x, shape: np.reshape(x, shape),
    lambda g, x, out, shape: (np.reshape(g, x.shape),),
)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.value.size:
        raise ValueError(f"cannot reshape {x.shape} to {shape}")
    return _apply(_RESHAPE, (x,), shape=shape)


def _bcast_bwd(g, x, out, shape):
    lead = len(shape) - x.ndim
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return (g,)


_BCAST = _register(
    "broadcast_to",
    lambda x, shape: np.broadcast_to(x, shape).copy(),
    _bcast_bwd,
)


def broadcast_to(x: Tensor, shape) -> Tensor:
    """Explicit broadcast (numpy rules); the only way shapes are expanded."""
    shape = tuple(int(s) for s in shape)
    if np.broadcast_shapes(x.shape, shape) != shape:
        raise ValueError(f"cannot broadcast {x.shape} to {shape}")
    return _apply(_BCAST, (x,), shape=shape)


# ---------------------------------------------------------------- layers


def _affine_fwd(x, w, b):
    y = np.tensordot(w, x, axes=([1], [0]))
    return y + b.reshape((-1,) + (1,) * (x.ndim - 1))


def _affine_bwd(g, x, w, b, out):
    spatial = tuple(range(1, x.ndim))
    gx = np.tensordot(w.T, g, axes=([1], [0]))
    gw = np.tensordot(g, x, axes=(spatial, spatial))
    gb = g.sum(axis=spatial)
    return gx, gw, gb


_AFFINE = _register("channel_affine", _affine_fwd, _affine_bwd)


def channel_affine(x: Tensor, weight, bias) -> Tensor:
    """Per-voxel channel mixing ``y[o] = sum_i weight[o, i] * x[i] + bias[o]`` (a 1x1x1 convolution)."""
    w = weight.value if isinstance(weight, Tensor) else np.asarray(weight)
    b = bias.value if isinstance(bias, Tensor) else np.asarray(bias)
    if x.ndim < 1 or w.ndim != 2 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
        raise ValueError(
            f"channel_affine: x {x.shape}, weight {w.shape}, bias {b.shape} are incompatible"
        )
    return _apply(_AFFINE, (x, weight, bias))


def _in_stats(x, eps):
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return axes, mu, inv


def _in_fwd(x, gain, shift, eps):
    axes, mu, inv = _in_stats(x, eps)
    shape = (-1,) + (1,) * (x.ndim - 1)
    return gain.reshape(shape) * (x - mu) * inv + shift.reshape(shape)


def _in_bwd(g, x, gain, shift, out, eps):
    axes, mu, inv = _in_stats(x, eps)
    shape = (-1,) + (1,) * (x.ndim - 1)
    xhat = (x - mu) * inv
    gx_hat = g * gain.reshape(shape)
    gx = inv * (
        gx_hat
        - gx_hat.mean(axis=axes, keepdims=True)
        - xhat * (gx_hat * xhat).mean(axis=axes, keepdims=True)
    )
    return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)


_IN = _register("instance_norm", _in_fwd, _in_bwd)


def instance_norm(x: Tensor, gain, shift, eps: float = DEFAULT_IN_EPS) -> Tensor:
    """Normalize each channel (leading axis) to zero mean / unit variance, then scale and shift.

    Variance is the biased (population) estimate over the spatial axes.
    """
    if eps <= 0:
        raise ValueError("instance_norm: eps must be positive")
    c = x.shape[0] if x.ndim else 0
    for name, p in (("gain", gain), ("shift", shift)):
        pv = p.value if isinstance(p, Tensor) else np.asarray(p)
        if x.ndim < 2 or pv.shape != (c,):
            raise ValueError(f"instance_norm: {name} shape {pv.shape} does not match x {x.shape}")
    return _apply(_IN, (x, gain, shift), eps=float(eps))
