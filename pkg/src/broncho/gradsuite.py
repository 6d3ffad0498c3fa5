"""Randomized finite-difference checks for every loss term and the attention layer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import diffcore as dc
from . import fuzzattn, jcam
from .diffcore import Tensor, grad_check, kink_margin

TOLERANCE = 1e-4
MIN_MARGIN = 1e-3      # keep every kink and max tie this far from the sample point
MODULES = ("fuzzattn", "jcam", "all")

JCAM_TERMS = ("l_jaccard", "l_continuity", "l_ce", "l_lam", "l_nlam", "total")
FUZZ_GROUPS = ("e_l", "d_l", "w_e", "b_e", "w_d", "b_d", "in_gain_e", "in_shift_e",
               "in_gain_d", "in_shift_d", "mu", "sigma")


@dataclass(frozen=True)
class CheckResult:
    name: str
    instance: int
    rel_error: float
    margin: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error <= TOLERANCE)

    def to_dict(self) -> dict:
        return {"name": self.name, "instance": self.instance, "rel_error": self.rel_error,
                "margin": self.margin, "passed": self.passed}


def _resample(draw: Callable[[np.random.Generator], tuple], margin_of, rng, tries=200):
    for _ in range(tries):
        sample = draw(rng)
        m = margin_of(sample)
        if m >= MIN_MARGIN:
            return sample, m
    raise RuntimeError("could not draw a point away from kinks")


# ------------------------------------------------------------------ jcam


def _jcam_term(name: str, Y, C) -> Callable[[Tensor], Tensor]:
    if name == "total":
        return lambda x: jcam.jcam_loss(x, Y, C).total_tensor
    fn = {
        "l_jaccard": lambda x: jcam.soft_jaccard_loss(x, Y),
        "l_continuity": lambda x: jcam.continuity_loss(x, C),
        "l_ce": lambda x: jcam.bce_loss(x, Y),
        "l_lam": lambda x: jcam.lam_loss(x, Y),
        "l_nlam": lambda x: jcam.nlam_loss(x, Y),
    }
    return fn[name]


def _draw_jcam(rng, shape=(4, 4, 4)):
    X = rng.uniform(0.05, 0.95, size=shape)
    Y = rng.random(shape) < 0.4
    Y.flat[rng.integers(Y.size)] = True
    C = Y & (rng.random(shape) < 0.5)
    C.flat[np.flatnonzero(Y)[0]] = True
    return X, Y.astype(np.float64), C.astype(np.float64)


def jcam_checks(seed: int = 0, instances: int = 20) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(instances):
        (X, Y, C), margin = _resample(
            _draw_jcam, lambda s: kink_margin(_jcam_term("total", s[1], s[2]), s[0]), rng
        )
        for name in JCAM_TERMS:
            err = grad_check(_jcam_term(name, Y, C), X)
            out.append(CheckResult(f"jcam.{name}", i, err, margin))
    return out


# ------------------------------------------------------------------ fuzzy attention


def _draw_fuzz(rng, C=2, spatial=(3, 3, 3), m=fuzzattn.DEFAULT_M):
    p = fuzzattn.init_params(C, m, seed=int(rng.integers(2**31)))
    arrays = {
        "e_l": rng.normal(size=(C,) + spatial),
        "d_l": rng.normal(size=(C,) + spatial),
        "b_e": rng.normal(scale=0.1, size=C),
        "b_d": rng.normal(scale=0.1, size=C),
        "in_gain_e": rng.uniform(0.5, 1.5, size=C),
        "in_shift_e": rng.normal(scale=0.2, size=C),
        "in_gain_d": rng.uniform(0.5, 1.5, size=C),
        "in_shift_d": rng.normal(scale=0.2, size=C),
        "sigma": rng.uniform(0.5, 1.5, size=(m, C)),
    }
    arrays["w_e"] = np.asarray(p.w_e)
    arrays["w_d"] = np.asarray(p.w_d)
    arrays["mu"] = np.asarray(p.bank.mu)
    weights = rng.normal(size=(C,) + spatial)
    return p, arrays, weights


def _layer_objective(group: str, params, arrays, weights) -> Callable[[Tensor], Tensor]:
    """Scalar ``sum(w * layer(...))`` as a function of one input or parameter group."""
    def f(x: Tensor) -> Tensor:
        tape = x.tape
        vals = {k: (x if k == group else tape.constant(v)) for k, v in arrays.items()}
        e, d = vals.pop("e_l"), vals.pop("d_l")
        p = params.with_groups(**vals)
        y = fuzzattn.fuzzy_attention_layer(e, d, p)
        return dc.sum(dc.mul(y, tape.constant(weights)))
    return f


def fuzzattn_checks(seed: int = 0, instances: int = 20) -> List[CheckResult]:
    rng = np.random.default_rng(seed + 7919)
    out = []
    for i in range(instances):
        (params, arrays, weights), margin = _resample(
            _draw_fuzz,
            lambda s: kink_margin(_layer_objective("e_l", *s), s[1]["e_l"]),
            rng,
        )
        for group in FUZZ_GROUPS:
            f = _layer_objective(group, params, arrays, weights)
            out.append(CheckResult(f"fuzzattn.{group}", i, grad_check(f, arrays[group]), margin))
    return out


def run_suite(module: str = "all", seed: int = 0, instances: int = 20) -> List[CheckResult]:
    if module not in MODULES:
        raise ValueError(f"module must be one of {MODULES}, got {module!r}")
    results = []
    if module in ("fuzzattn", "all"):
        results += fuzzattn_checks(seed, instances)
    if module in ("jcam", "all"):
        results += jcam_checks(seed, instances)
    return results


def summarize(results: List[CheckResult]) -> Dict[str, dict]:
    """Worst error and pass flag per check name, in first-seen order."""
    table: Dict[str, dict] = {}
    for r in results:
        row = table.setdefault(r.name, {"instances": 0, "max_rel_error": 0.0, "passed": True})
        row["instances"] += 1
        row["max_rel_error"] = max(row["max_rel_error"], r.rel_error)
        row["passed"] = row["passed"] and r.passed
    return table
