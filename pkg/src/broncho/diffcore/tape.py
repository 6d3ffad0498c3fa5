"""Tape-based reverse-mode differentiation over dense float64 arrays."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


class Tensor:
    """Immutable value bound to a node of a :class:`Tape`.

    Arithmetic operators dispatch to the recorded primitives, so ``a * b + 1``
    builds graph nodes just like ``add(mul(a, b), 1)`` would.
    """

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: np.ndarray):
        self.tape = tape
        self.id = node_id
        self.value = value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(id={self.id}, shape={self.shape})"

    # operators -------------------------------------------------------
    def __add__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_add(self, other)
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_add(self, -other)
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.scalar_add(ops.scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_mul(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scalar_mul(self, 1.0 / other)
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)


@dataclass
class Record:
    """One primitive application: output node ``out`` computed from ``inputs``."""

    op: str
    inputs: Tuple[int, ...]
    out: int
    attrs: dict = field(default_factory=dict)


class Tape:
    """Ordered record of primitive applications.

    Node ids are assigned in creation order, so every input id precedes its
    consumer and the tape is acyclic by construction.
    """

    def __init__(self):
        self.values: List[np.ndarray] = []
        self.kinds: List[str] = []          # "leaf", "const" or "op"
        self.records: List[Record] = []

    def __len__(self):
        return len(self.values)

    def _push(self, value: np.ndarray, kind: str) -> Tensor:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise FloatingPointError("non-finite value entered the tape")
        value.setflags(write=False)
        node = len(self.values)
        self.values.append(value)
        self.kinds.append(kind)
        return Tensor(self, node, value)

    def leaf(self, value) -> Tensor:
        """A differentiable input."""
        return self._push(value, "leaf")

    def constant(self, value) -> Tensor:
        """A non-differentiable input; receives no gradient."""
        return self._push(value, "const")

    def lift(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ValueError("tensor belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, op: str, inputs: Sequence[Tensor], value: np.ndarray, attrs: dict) -> Tensor:
        out = self._push(value, "op")
        self.records.append(Record(op, tuple(t.id for t in inputs), out.id, attrs))
        return out

    def leaves(self) -> List[int]:
        return [i for i, k in enumerate(self.kinds) if k == "leaf"]

    def replay(self) -> List[np.ndarray]:
        """Recompute every node from the leaves and constants."""
        from .ops import PRIMITIVES
        vals = list(self.values)
        for rec in self.records:
            prim = PRIMITIVES[rec.op]
            vals[rec.out] = prim.forward(*(vals[i] for i in rec.inputs), **rec.attrs)
        return vals

    def kink_margin(self) -> float:
        """Smallest distance of any recorded non-smooth primitive from its kink or tie."""
        from .ops import PRIMITIVES
        margin = np.inf
        for rec in self.records:
            prim = PRIMITIVES[rec.op]
            if prim.kink is not None:
                xs = [self.values[i] for i in rec.inputs]
                margin = min(margin, prim.kink(*xs, **rec.attrs))
        return float(margin)


def backward(tape: Tape, output: Tensor) -> "LeafGrads":
    """Gradients of scalar ``output`` with respect to every leaf of ``tape``.

    The result is indexable by leaf :class:`Tensor` (or node id); leaves off
    the path to the output get zero arrays.
    """
    from .ops import PRIMITIVES

    if output.tape is not tape:
        raise ValueError("output tensor is not on this tape")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")

    grads: List[Optional[np.ndarray]] = [None] * len(tape)
    grads[output.id] = np.ones_like(output.value)
    for rec in reversed(tape.records):
        if rec.out > output.id:
            continue
        g = grads[rec.out]
        if g is None:
            continue
        prim = PRIMITIVES[rec.op]
        xs = [tape.values[i] for i in rec.inputs]
        in_grads = prim.backward(g, xs, tape.values[rec.out], **rec.attrs)
        for node, gi in zip(rec.inputs, in_grads):
            if gi is None or tape.kinds[node] == "const":
                continue
            grads[node] = gi if grads[node] is None else grads[node] + gi

    result = LeafGrads()
    for node in tape.leaves():
        g = grads[node]
        result[node] = np.zeros_like(tape.values[node]) if g is None else g
    return result


class LeafGrads(dict):
    """Leaf node id -> gradient array; also indexable by the leaf :class:`Tensor`."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return super().__contains__(key)

