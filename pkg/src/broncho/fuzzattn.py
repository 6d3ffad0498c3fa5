"""Channel-specific fuzzy attention gate built on :mod:`broncho.diffcore`.

The gate filters every channel of its input through ``m`` learnable Gaussian
membership functions and aggregates them with a fuzzy OR (elementwise max),
giving a per-channel, per-voxel attention map in (0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor

SIGMA_FLOOR = 1e-3
DEFAULT_M = 2

Param = Union[np.ndarray, Tensor]


@dataclass(frozen=True)
class GaussianMFBank:
    """``m`` Gaussian membership functions per channel; ``mu`` and ``sigma`` are ``(m, C)``."""

    mu: Param
    sigma: Param
    sigma_floor: float = SIGMA_FLOOR

    @property
    def m(self) -> int:
        return int(np.shape(_value(self.mu))[0])

    @property
    def C(self) -> int:
        return int(np.shape(_value(self.mu))[1])

    def __post_init__(self):
        mu, sigma = _value(self.mu), _value(self.sigma)
        if np.ndim(mu) != 2 or np.shape(mu) != np.shape(sigma):
            raise ValueError(f"mu {np.shape(mu)} and sigma {np.shape(sigma)} must both be (m, C)")
        if np.shape(mu)[0] < 1:
            raise ValueError("bank needs at least one membership function")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValueError("bank parameters must be finite")


@dataclass(frozen=True)
class FuzzyAttentionParams:
    w_e: Param
    b_e: Param
    w_d: Param
    b_d: Param
    in_gain_e: Param
    in_shift_e: Param
    in_gain_d: Param
    in_shift_d: Param
    bank: GaussianMFBank
    leaky_slope: float = dc.ops.DEFAULT_LEAKY_SLOPE
    in_eps: float = dc.ops.DEFAULT_IN_EPS

    @property
    def C(self) -> int:
        return self.bank.C

    def __post_init__(self):
        C = self.bank.C
        for name in ("w_e", "w_d"):
            if np.shape(_value(getattr(self, name))) != (C, C):
                raise ValueError(f"{name} must be ({C}, {C})")
        for name in ("b_e", "b_d", "in_gain_e", "in_shift_e", "in_gain_d", "in_shift_d"):
            if np.shape(_value(getattr(self, name))) != (C,):
                raise ValueError(f"{name} must have length {C}")

    # ------------------------------------------------------------ tape helpers
    ARRAY_FIELDS = ("w_e", "b_e", "w_d", "b_d", "in_gain_e", "in_shift_e", "in_gain_d", "in_shift_d")

    def groups(self) -> dict:
        """Every trainable array by name (bank entries as ``mu`` and ``sigma``)."""
        out = {name: np.asarray(_value(getattr(self, name))) for name in self.ARRAY_FIELDS}
        out["mu"] = np.asarray(_value(self.bank.mu))
        out["sigma"] = np.asarray(_value(self.bank.sigma))
        return out

    def with_groups(self, **arrays) -> "FuzzyAttentionParams":
        bank_kw = {k: arrays.pop(k) for k in ("mu", "sigma") if k in arrays}
        bank = replace(self.bank, **bank_kw) if bank_kw else self.bank
        return replace(self, bank=bank, **arrays)

    def on_tape(self, tape: Tape, trainable=True) -> "FuzzyAttentionParams":
        """Copy with every array registered on ``tape`` (as leaves when ``trainable``)."""
        make = tape.leaf if trainable else tape.constant
        return self.with_groups(**{k: make(v) for k, v in self.groups().items()})

    # ------------------------------------------------------------ serialization
    def to_json(self) -> dict:
        g = self.groups()
        doc = {k: [float(v) for v in np.ravel(a)] for k, a in g.items()}
        doc.update(leaky_slope=self.leaky_slope, m=self.bank.m, C=self.C)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "FuzzyAttentionParams":
        m, C = int(doc["m"]), int(doc["C"])

        def arr(key, shape):
            return np.asarray(doc[key], dtype=np.float64).reshape(shape)

        bank = GaussianMFBank(arr("mu", (m, C)), arr("sigma", (m, C)))
        kw = {k: arr(k, (C, C) if k.startswith("w_") else (C,)) for k in cls.ARRAY_FIELDS}
        return cls(bank=bank, leaky_slope=float(doc.get("leaky_slope", dc.ops.DEFAULT_LEAKY_SLOPE)), **kw)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def _value(p):
    return p.value if isinstance(p, Tensor) else p


def init_params(C: int, m: int = DEFAULT_M, seed: int = 0) -> FuzzyAttentionParams:
    """Random initial parameters.

    Centres are uniform in [-1, 1], spreads are 1, mixing weights are
    He-normal with fan-in ``C`` (a 1x1x1 kernel), biases 0, IN gain 1 / shift 0.
    """
    if C < 1 or m < 1:
        raise ValueError("C and m must be >= 1")
    rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / C)
    mu = rng.uniform(-1.0, 1.0, size=(m, C))
    w_e = rng.normal(0.0, std, size=(C, C))
    w_d = rng.normal(0.0, std, size=(C, C))
    zeros, ones = np.zeros(C), np.ones(C)
    return FuzzyAttentionParams(
        w_e=w_e, b_e=zeros.copy(), w_d=w_d, b_d=zeros.copy(),
        in_gain_e=ones.copy(), in_shift_e=zeros.copy(),
        in_gain_d=ones.copy(), in_shift_d=zeros.copy(),
        bank=GaussianMFBank(mu, np.ones((m, C))),
    )


def membership_degrees(X: Tensor, bank: GaussianMFBank) -> Tensor:
    """Degrees ``exp(-(X_j - mu_ij)^2 / (2 s_ij^2))`` with ``s = max(|sigma|, floor)``.

    ``X`` is ``(C, *spatial)``; the result is ``(m, C, *spatial)``.
    """
    if not isinstance(X, Tensor):
        X = Tape().constant(X)
    tape = X.tape
    m, C = bank.m, bank.C
    if X.ndim < 1 or X.shape[0] != C:
        raise ValueError(f"input has {X.shape[0] if X.ndim else 0} channels, bank expects {C}")
    spatial = X.shape[1:]
    full = (m, C) + spatial
    param_shape = (m, C) + (1,) * len(spatial)

    mu = dc.broadcast_to(dc.reshape(tape.lift(bank.mu), param_shape), full)
    spread = dc.clamp(dc.abs(tape.lift(bank.sigma)), lo=bank.sigma_floor)
    spread = dc.broadcast_to(dc.reshape(spread, param_shape), full)
    xs = dc.broadcast_to(dc.reshape(X, (1, C) + spatial), full)

    z = dc.div(dc.sub(xs, mu), spread)
    return dc.exp(dc.scalar_mul(dc.square(z), -0.5))


def fuzzy_or(degrees: Tensor) -> Tensor:
    """Fuzzy union over the membership axis (axis 0) as an elementwise max."""
    return dc.max_over_axis(degrees, 0)


def fag_forward(X: Tensor, bank: GaussianMFBank) -> Tensor:
    """Attention map of the same ``(C, *spatial)`` shape as ``X``."""
    return fuzzy_or(membership_degrees(X, bank))


def gate_input(e_l: Tensor, d_l: Tensor, params: FuzzyAttentionParams) -> Tensor:
    """Fused gate input ``LReLU(LReLU(IN(W_e e + b_e)) + LReLU(IN(W_d d + b_d)))``."""
    tape = e_l.tape
    p, s = params, params.leaky_slope
    enc = dc.channel_affine(e_l, tape.lift(p.w_e), tape.lift(p.b_e))
    enc = dc.leaky_relu(dc.instance_norm(enc, tape.lift(p.in_gain_e), tape.lift(p.in_shift_e), p.in_eps), s)
    dec = dc.channel_affine(d_l, tape.lift(p.w_d), tape.lift(p.b_d))
    dec = dc.leaky_relu(dc.instance_norm(dec, tape.lift(p.in_gain_d), tape.lift(p.in_shift_d), p.in_eps), s)
    return dc.leaky_relu(dc.add(enc, dec), s)


def fuzzy_attention_layer(e_l, d_l, params: FuzzyAttentionParams) -> Tensor:
    """Gate the encoder features: ``y_j = e_l[j] * attention(X)[j]``.

    ``e_l`` and ``d_l`` must share one ``(C, *spatial)`` shape. Any of the
    inputs or parameters may be tensors on a common tape, in which case the
    output is differentiable with respect to them.
    """
    raw = (e_l, d_l, params.bank.mu, params.bank.sigma,
           *(getattr(params, f) for f in FuzzyAttentionParams.ARRAY_FIELDS))
    tape = next((v.tape for v in raw if isinstance(v, Tensor)), None) or Tape()
    for v in raw:
        if isinstance(v, Tensor) and v.tape is not tape:
            raise ValueError("inputs and parameters live on different tapes")
    e_l, d_l = tape.lift(e_l), tape.lift(d_l)
    if e_l.shape != d_l.shape:
        raise ValueError(f"encoder {e_l.shape} and decoder {d_l.shape} features differ in shape")
    if e_l.ndim < 2 or e_l.shape[0] != params.C:
        raise ValueError(f"features {e_l.shape} do not have {params.C} leading channels")
    X = gate_input(e_l, d_l, params)
    return dc.mul(e_l, fag_forward(X, params.bank))
