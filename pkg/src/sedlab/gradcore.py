"""Minimal reverse-mode autodiff on float32 numpy arrays.

Tensors store float32 data; gradients are float32 buffers populated by
``backward``. Operations executed while a ``tape()`` context is active are
recorded and can be differentiated once per tape. The same operations are
also exposed as free functions that accept plain numpy arrays (any dtype)
and then compute forward-only — the gradient-check harness uses that path
to evaluate finite differences in float64.

Broadcasting is deliberately restricted: elementwise operands must have
identical shapes, except adding a 1-D bias vector along the last axis.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericsError, ShapeError, TapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Node:
    """One recorded differentiable operation."""

    __slots__ = ("inputs", "out", "backward", "position")

    def __init__(self, inputs, out, backward, position):
        self.inputs = inputs
        self.out = out
        self.backward = backward
        self.position = position


class Tape:
    """Ordered record of executed operations; consumable exactly once."""

    __slots__ = ("nodes", "live")

    def __init__(self):
        self.nodes: list[Node] = []
        self.live = True

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"


_TAPE_STACK: list[Tape | None] = []


def tape() -> Tape:
    """New recording tape, used as a context manager."""
    return Tape()


@contextlib.contextmanager
def stop_recording():
    """Suspend recording inside an active tape (inference forward)."""
    _TAPE_STACK.append(None)
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense n-dimensional float32 array with optional tape participation."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._tape: Tape | None = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self) -> None:
        backward(self)


def apply_op(
    inputs: Sequence,
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Wrap ``out_data`` as a Tensor, recording the op on the active tape.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    input, in order. Used internally by every op and exported so other
    modules can define custom differentiable operations.
    """
    out = Tensor(out_data)
    tp = _active_tape()
    needs = any(isinstance(x, Tensor) and (x.requires_grad) for x in inputs)
    if tp is not None and needs:
        out.requires_grad = True
        node = Node(tuple(inputs), out, backward_fn, len(tp.nodes))
        tp.nodes.append(node)
        out._node = node
        out._tape = tp
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Gradient accumulation is a sum over paths; a tape can be walked once.
    """
    if not isinstance(loss, Tensor):
        raise TapeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    tp = loss._tape
    if tp is None:
        raise TapeError("loss is not attached to a tape (was it computed under tape()?)")
    if not tp.live:
        raise TapeError("tape already consumed by a previous backward")
    tp.live = False

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tp.nodes[: loss._node.position + 1]):
        g = grads.pop(id(node.out), None)
        owners.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(inp, Tensor):
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = inp
    for key, t in owners.items():
        if t.requires_grad:
            g = grads[key].astype(np.float32, copy=False)
            t.grad = g if t.grad is None else t.grad + g


def check_finite(x, what: str = "tensor"):
    """Raise NumericsError if data (or grad) holds NaN/Inf. Returns ``x``."""
    arrays = []
    if isinstance(x, Tensor):
        arrays.append(("data", x.data))
        if x.grad is not None:
            arrays.append(("grad", x.grad))
    else:
        arrays.append(("data", np.asarray(x)))
    for label, arr in arrays:
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NumericsError(f"{what}.{label} has {int(bad.sum())} non-finite value(s)")
    return x


# ---------------------------------------------------------------------------
# helpers shared by Tensor ops and the plain-array (float64) path
# ---------------------------------------------------------------------------


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _is_tensor_op(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _softmax_fwd(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _gelu_fwd(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return cdf + x * pdf


def _sigmoid_fwd(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _layer_norm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2-D matrix product with gradients for both operands."""
    ad, bd = _data(a), _data(b)
    if ad.ndim != 2 or bd.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    if not _is_tensor_op(a, b):
        return out

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return apply_op((a, b), out, bwd)


def add(a, b) -> Tensor:
    """Elementwise sum; also scalar + tensor and (n-D + 1-D bias) forms."""
    if np.isscalar(a) and isinstance(b, Tensor):
        a, b = b, a
    ad = _data(a)
    if np.isscalar(b):
        out = ad + np.float32(b) if ad.dtype == np.float32 else ad + b
        if not _is_tensor_op(a):
            return out
        return apply_op((a,), out, lambda g: (g,))
    bd = _data(b)
    if ad.shape == bd.shape:
        out = ad + bd
        if not _is_tensor_op(a, b):
            return out
        return apply_op((a, b), out, lambda g: (g, g))
    if bd.ndim == 1 and ad.ndim >= 2 and ad.shape[-1] == bd.shape[0]:
        out = ad + bd
        if not _is_tensor_op(a, b):
            return out

        def bwd(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

        return apply_op((a, b), out, bwd)
    raise ShapeError(f"add shapes {ad.shape} and {bd.shape} are not compatible")


def sub(a, b) -> Tensor:
    """Elementwise difference (same shapes, or one scalar operand)."""
    if np.isscalar(b):
        ad = _data(a)
        out = ad - b
        if not _is_tensor_op(a):
            return out
        return apply_op((a,), out, lambda g: (g,))
    if np.isscalar(a):
        bd = _data(b)
        out = a - bd
        if not _is_tensor_op(b):
            return out
        return apply_op((b,), out, lambda g: (-g,))
    ad, bd = _data(a), _data(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"sub shapes differ: {ad.shape} vs {bd.shape}")
    out = ad - bd
    if not _is_tensor_op(a, b):
        return out
    return apply_op((a, b), out, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    """Elementwise product (same shapes, or one scalar operand)."""
    if np.isscalar(a) and isinstance(b, Tensor):
        a, b = b, a
    ad = _data(a)
    if np.isscalar(b):
        out = ad * b
        if not _is_tensor_op(a):
            return out
        return apply_op((a,), out, lambda g: (g * b,))
    bd = _data(b)
    if ad.shape != bd.shape:
        raise ShapeError(f"mul shapes differ: {ad.shape} vs {bd.shape}")
    out = ad * bd
    if not _is_tensor_op(a, b):
        return out
    return apply_op((a, b), out, lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    """Elementwise quotient (same shapes, or scalar divisor/dividend)."""
    if np.isscalar(b):
        return mul(a, 1.0 / b)
    ad, bd = _data(a), _data(b)
    if not np.isscalar(a) and ad.shape != bd.shape:
        raise ShapeError(f"div shapes differ: {ad.shape} vs {bd.shape}")
    out = ad / bd
    if not _is_tensor_op(a, b):
        return out

    def bwd(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        if np.isscalar(a):
            ga = None
        return ga, gb

    return apply_op((a, b), out, bwd)


def neg(a) -> Tensor:
    ad = _data(a)
    out = -ad
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (-g,))


def log(a) -> Tensor:
    ad = _data(a)
    out = np.log(ad)
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (g / ad,))


def exp(a) -> Tensor:
    ad = _data(a)
    out = np.exp(ad)
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (g * out,))


def sigmoid(a) -> Tensor:
    ad = _data(a)
    out = _sigmoid_fwd(ad)
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (g * out * (1.0 - out),))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    ad = _data(a)
    out = _gelu_fwd(ad)
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (g * _gelu_grad(ad),))


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient passes only where the input was in range."""
    ad = _data(a)
    out = np.clip(ad, lo, hi)
    if not _is_tensor_op(a):
        return out
    mask = np.ones_like(ad)
    if lo is not None:
        mask = mask * (ad >= lo)
    if hi is not None:
        mask = mask * (ad <= hi)
    return apply_op((a,), out, lambda g: (g * mask,))


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; rows sum to one."""
    ad = _data(a)
    if not -ad.ndim <= axis < ad.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {ad.shape}")
    out = _softmax_fwd(ad, axis)
    if not _is_tensor_op(a):
        return out

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return apply_op((a,), out, bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    ad, gd, bd = _data(a), _data(gain), _data(bias)
    if gd.shape != (ad.shape[-1],) or bd.shape != (ad.shape[-1],):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    out, xhat, inv = _layer_norm_fwd(ad, gd, bd, eps)
    if not _is_tensor_op(a, gain, bias):
        return out
    n = ad.shape[-1]

    def bwd(g):
        dxhat = g * gd
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        dx = (inv / n) * (n * dxhat - s1 - xhat * s2)
        lead = tuple(range(ad.ndim - 1))
        dg = (g * xhat).sum(axis=lead)
        db = g.sum(axis=lead)
        return dx, dg, db

    return apply_op((a, gain, bias), out, bwd)


def transpose(a, axes=None) -> Tensor:
    ad = _data(a)
    out = np.transpose(ad, axes)
    if not _is_tensor_op(a):
        return out
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return apply_op((a,), out, bwd)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    out = ad.reshape(shape)
    if not _is_tensor_op(a):
        return out
    return apply_op((a,), out, lambda g: (g.reshape(ad.shape),))


def concat(parts, axis: int = 0) -> Tensor:
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    if not any(isinstance(p, Tensor) for p in parts):
        return out
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_op(tuple(parts), out, bwd)


def sum(a, axis=None) -> Tensor:  # noqa: A001 - numpy-style name
    ad = _data(a)
    out = ad.sum(axis=axis)
    if not _is_tensor_op(a):
        return out

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), ad.shape).copy(),)

    return apply_op((a,), out, bwd)


def mean(a, axis=None) -> Tensor:
    ad = _data(a)
    n = ad.size if axis is None else ad.shape[axis]
    out = ad.mean(axis=axis)
    if not _is_tensor_op(a):
        return out

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, ad.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, ad.shape).copy(),)

    return apply_op((a,), out, bwd)


def take(a, indices, axis: int = 0) -> Tensor:
    """Select rows/entries by integer array index (duplicates allowed)."""
    ad = _data(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(ad, idx, axis=axis)
    if not _is_tensor_op(a):
        return out

    def bwd(g):
        z = np.zeros_like(ad)
        key = (slice(None),) * (axis % ad.ndim) + (idx,)
        np.add.at(z, key, g)
        return (z,)

    return apply_op((a,), out, bwd)


def take_slice(a, key) -> Tensor:
    """Basic (slice/int) indexing as a differentiable op."""
    ad = _data(a)
    out = ad[key]
    if not _is_tensor_op(a):
        return out

    def bwd(g):
        z = np.zeros_like(ad)
        z[key] = g
        return (z,)

    return apply_op((a,), out, bwd)


def mask_replace(a, token, indices) -> Tensor:
    """Copy of ``a`` with rows at ``indices`` replaced by ``token``.

    ``a`` is (T, C), ``token`` is (C,); the input tensor is not modified.
    """
    ad, td = _data(a), _data(token)
    if td.shape != (ad.shape[-1],):
        raise ShapeError(f"token shape {td.shape} must be ({ad.shape[-1]},)")
    idx = np.asarray(indices, dtype=np.int64)
    out = ad.copy()
    out[idx] = td
    if not _is_tensor_op(a, token):
        return out

    def bwd(g):
        ga = g.copy()
        ga[idx] = 0.0
        gt = g[idx].sum(axis=0)
        return ga, gt

    return apply_op((a, token), out, bwd)
