"""Central finite-difference verification of recorded gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tape import Tape, Tensor, backward


def _scalar(y: Tensor) -> float:
    if y.value.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {y.shape}")
    return float(y.value)


def analytic_grad(f: Callable[[Tensor], Tensor], point) -> np.ndarray:
    tape = Tape()
    x = tape.leaf(point)
    y = f(x)
    _scalar(y)
    return backward(tape, y)[x]


def numeric_grad(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> np.ndarray:
    point = np.array(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(Tape().leaf(point)))
        flat[i] = orig - h
        fm = _scalar(f(Tape().leaf(point)))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - central| / max(1, |central|)``.

    ``f`` receives a leaf tensor on a fresh tape and must return a scalar
    tensor on the same tape. The caller is responsible for choosing a point
    away from kinks and max ties (see :func:`kink_margin`).
    """
    ga = analytic_grad(f, point)
    gn = numeric_grad(f, point, h)
    if ga.size == 0:
        return 0.0
    return float(np.max(np.abs(ga - gn) / np.maximum(1.0, np.abs(gn))))


def kink_margin(f: Callable[[Tensor], Tensor], point) -> float:
    """Distance of the evaluation at ``point`` from the nearest kink or max tie."""
    tape = Tape()
    f(tape.leaf(point))
    return tape.kink_margin()
