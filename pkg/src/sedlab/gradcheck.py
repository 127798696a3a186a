"""Finite-difference gradient verification for every differentiable op.

Analytic gradients come from the float32 engine; numeric gradients are
central differences of the same computation evaluated in float64 (the free
functions accept plain arrays, so one definition serves both paths).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import gradcore as gc

DEFAULT_H = 1e-3
DEFAULT_TOL = 1e-4


def finite_difference(f: Callable, arrays: Sequence[np.ndarray], h: float = DEFAULT_H):
    """Central-difference gradients of scalar ``f`` w.r.t. each input, in float64."""
    base = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    grads = []
    for i, arr in enumerate(base):
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            hi = float(np.asarray(f(*base)))
            flat[j] = keep - h
            lo = float(np.asarray(f(*base)))
            flat[j] = keep
            gflat[j] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def analytic(f: Callable, arrays: Sequence[np.ndarray]):
    """Gradients from the float32 tape for the same scalar function."""
    tensors = [gc.Tensor(a, requires_grad=True) for a in arrays]
    with gc.tape():
        out = f(*tensors)
    gc.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    """Max elementwise |analytic - numeric| / max(1, |analytic|, |numeric|)."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def check_gradients(f: Callable, arrays: Sequence[np.ndarray], h: float = DEFAULT_H) -> float:
    """Worst relative error across all inputs of scalar function ``f``."""
    num = finite_difference(f, arrays, h=h)
    ana = analytic(f, arrays)
    return max(relative_error(a, n) for a, n in zip(ana, num))


# ---------------------------------------------------------------------------
# op check registry
# ---------------------------------------------------------------------------

# builder(rng) -> (f, arrays); modules with custom ops append here on import
OP_CHECKS: list[tuple[str, Callable]] = []


def register_check(name: str, builder: Callable) -> None:
    OP_CHECKS.append((name, builder))


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _weighted_sum(x, w):
    return gc.sum(gc.mul(x, w))


def _build_matmul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    return lambda a, b: gc.sum(gc.gelu(gc.matmul(a, b))), [a, b]


def _build_softmax(rng):
    x = _rand(rng, 4, 5)
    w = _rand(rng, 4, 5)
    return lambda x: _weighted_sum(gc.softmax(x, axis=1), w), [x]


def _build_layer_norm(rng):
    x = _rand(rng, 3, 6)
    gain = 1.0 + 0.1 * _rand(rng, 6)
    bias = 0.1 * _rand(rng, 6)
    w = _rand(rng, 3, 6)
    return (
        lambda x, g, b: _weighted_sum(gc.layer_norm(x, g, b, eps=1e-5), w),
        [x, gain, bias],
    )


def _build_gelu(rng):
    x = _rand(rng, 4, 4)
    w = _rand(rng, 4, 4)
    return lambda x: _weighted_sum(gc.gelu(x), w), [x]


def _build_sigmoid(rng):
    x = _rand(rng, 4, 4)
    w = _rand(rng, 4, 4)
    return lambda x: _weighted_sum(gc.sigmoid(x), w), [x]


def _build_add(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    w = _rand(rng, 3, 4)
    return lambda a, b: _weighted_sum(gc.gelu(gc.add(a, b)), w), [a, b]


def _build_add_bias(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4)
    w = _rand(rng, 3, 4)
    return lambda a, b: _weighted_sum(gc.gelu(gc.add(a, b)), w), [a, b]


def _build_sub(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    w = _rand(rng, 3, 4)
    return lambda a, b: _weighted_sum(gc.gelu(gc.sub(a, b)), w), [a, b]


def _build_mul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    w = _rand(rng, 3, 4)
    return lambda a, b: _weighted_sum(gc.mul(a, b), w), [a, b]


def _build_div(rng):
    a = _rand(rng, 3, 4)
    b = np.sign(_rand(rng, 3, 4)) * (0.5 + np.abs(_rand(rng, 3, 4)))
    w = _rand(rng, 3, 4)
    return lambda a, b: _weighted_sum(gc.div(a, b), w), [a, b]


def _build_neg(rng):
    x = _rand(rng, 5)
    w = _rand(rng, 5)
    return lambda x: _weighted_sum(gc.gelu(gc.neg(x)), w), [x]


def _build_log(rng):
    x = 0.2 + np.abs(_rand(rng, 4, 3))
    w = _rand(rng, 4, 3)
    return lambda x: _weighted_sum(gc.log(x), w), [x]


def _build_exp(rng):
    x = 0.5 * _rand(rng, 4, 3)
    w = _rand(rng, 4, 3)
    return lambda x: _weighted_sum(gc.exp(x), w), [x]


def _build_clip(rng):
    # keep samples away from the clip boundaries so the subgradient is clean
    x = 3.0 * _rand(rng, 4, 4)
    x[np.abs(np.abs(x) - 1.0) < 0.05] = 0.5
    w = _rand(rng, 4, 4)
    return lambda x: _weighted_sum(gc.clip(x, -1.0, 1.0), w), [x]


def _build_transpose(rng):
    x = _rand(rng, 3, 5)
    w = _rand(rng, 5, 3)
    return lambda x: _weighted_sum(gc.gelu(gc.transpose(x)), w), [x]


def _build_reshape(rng):
    x = _rand(rng, 2, 6)
    w = _rand(rng, 3, 4)
    return lambda x: _weighted_sum(gc.gelu(gc.reshape(x, (3, 4))), w), [x]


def _build_slice(rng):
    x = _rand(rng, 6, 4)
    w = _rand(rng, 3, 4)
    return lambda x: _weighted_sum(gc.gelu(gc.take_slice(x, slice(1, 4))), w), [x]


def _build_take(rng):
    x = _rand(rng, 6, 3)
    idx = np.array([0, 2, 2, 5])
    w = _rand(rng, 4, 3)
    return lambda x: _weighted_sum(gc.gelu(gc.take(x, idx, axis=0)), w), [x]


def _build_concat(rng):
    a, b = _rand(rng, 2, 3), _rand(rng, 4, 3)
    w = _rand(rng, 6, 3)
    return lambda a, b: _weighted_sum(gc.gelu(gc.concat([a, b], axis=0)), w), [a, b]


def _build_mean(rng):
    x = _rand(rng, 4, 5)
    w = _rand(rng, 5)
    return lambda x: _weighted_sum(gc.gelu(gc.mean(x, axis=0)), w), [x]


def _build_sum_axis(rng):
    x = _rand(rng, 4, 5)
    w = _rand(rng, 4)
    return lambda x: _weighted_sum(gc.gelu(gc.sum(x, axis=1)), w), [x]


def _build_mask_replace(rng):
    x = _rand(rng, 6, 4)
    token = _rand(rng, 4)
    idx = np.array([1, 3, 4])
    w = _rand(rng, 6, 4)
    return lambda x, t: _weighted_sum(gc.gelu(gc.mask_replace(x, t, idx)), w), [x, token]


def _build_mlp(rng):
    x = _rand(rng, 3, 5)
    w1, b1 = _rand(rng, 5, 6), 0.1 * _rand(rng, 6)
    w2, b2 = _rand(rng, 6, 2), 0.1 * _rand(rng, 2)

    def f(x, w1, b1, w2, b2):
        h = gc.gelu(gc.add(gc.matmul(x, w1), b1))
        out = gc.softmax(gc.add(gc.matmul(h, w2), b2), axis=1)
        return gc.sum(gc.mul(out, out))

    return f, [x, w1, b1, w2, b2]


for _name, _builder in [
    ("matmul", _build_matmul),
    ("softmax", _build_softmax),
    ("layer_norm", _build_layer_norm),
    ("gelu", _build_gelu),
    ("sigmoid", _build_sigmoid),
    ("add", _build_add),
    ("add_bias", _build_add_bias),
    ("sub", _build_sub),
    ("mul", _build_mul),
    ("div", _build_div),
    ("neg", _build_neg),
    ("log", _build_log),
    ("exp", _build_exp),
    ("clip", _build_clip),
    ("transpose", _build_transpose),
    ("reshape", _build_reshape),
    ("slice", _build_slice),
    ("take", _build_take),
    ("concat", _build_concat),
    ("mean", _build_mean),
    ("sum_axis", _build_sum_axis),
    ("mask_replace", _build_mask_replace),
    ("mlp_composite", _build_mlp),
]:
    register_check(_name, _builder)


@dataclass
class CheckResult:
    name: str
    max_err: float
    trials: int

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_err < tol


def collect_all() -> list[tuple[str, Callable]]:
    """Registry including custom ops contributed by the model modules."""
    from . import context, encoder  # noqa: F401 - imported for registration

    return list(OP_CHECKS)


def run_all_checks(trials: int = 100, seed: int = 0, h: float = DEFAULT_H) -> list[CheckResult]:
    """Run every registered op check ``trials`` times with fresh draws."""
    results = []
    for name, builder in collect_all():
        worst = 0.0
        for k in range(trials):
            rng = np.random.default_rng([seed, k, hash(name) & 0xFFFF])
            f, arrays = builder(rng)
            worst = max(worst, check_gradients(f, arrays, h=h))
        results.append(CheckResult(name=name, max_err=worst, trials=trials))
    return results
