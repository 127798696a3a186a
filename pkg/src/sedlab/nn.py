"""Parameter registry and Transformer building blocks on the autodiff core."""

from __future__ import annotations

import numpy as np

from . import gradcore as gc
from .errors import CheckpointError, ShapeError
from .gradcore import Tensor
from .rng import substream


class ParamSet:
    """Named parameter store with name-keyed deterministic initialization.

    Each parameter draws from its own seed substream derived from the
    parameter name, so adding or removing one parameter (e.g. switching the
    positional-encoding variant) leaves every other parameter's initial
    values untouched.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise CheckpointError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def normal(self, name: str, shape, std: float = 0.02) -> Tensor:
        rng = substream(self.seed, f"init/{name}")
        return self._register(name, std * rng.standard_normal(shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape, dtype=np.float32))

    def ones(self, name: str, shape) -> Tensor:
        return self._register(name, np.ones(shape, dtype=np.float32))

    def subset(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith(prefix)]

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> int:
        """Assign stored arrays into matching parameters; returns count loaded."""
        loaded = 0
        for name, t in self.params.items():
            if not name.startswith(prefix):
                continue
            if name not in arrays:
                raise CheckpointError(f"checkpoint is missing parameter {name!r}")
            arr = arrays[name]
            if tuple(arr.shape) != t.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {t.data.shape}"
                )
            t.data[...] = arr
            loaded += 1
        return loaded


class Linear:
    def __init__(
        self, ps: ParamSet, name: str, in_dim: int, out_dim: int, std: float | None = None
    ):
        if std is None:
            std = float(np.sqrt(2.0 / (in_dim + out_dim)))  # Glorot scaling
        self.w = ps.normal(f"{name}.weight", (in_dim, out_dim), std=std)
        self.b = ps.zeros(f"{name}.bias", (out_dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return gc.add(gc.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, ps: ParamSet, name: str, dim: int, eps: float = 1e-5):
        self.gain = ps.ones(f"{name}.gain", (dim,))
        self.bias = ps.zeros(f"{name}.bias", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return gc.layer_norm(x, self.gain, self.bias, eps=self.eps)


class MultiHeadAttention:
    """Scaled dot-product self-attention over a (frames, dim) sequence.

    An optional per-head (heads, T, T) bias is added to the logits before
    the softmax; the context network uses this for its positional term.
    """

    def __init__(self, ps: ParamSet, name: str, dim: int, heads: int):
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = 1.0 / np.sqrt(self.head_dim)
        self.wq = Linear(ps, f"{name}.q", dim, dim)
        self.wk = Linear(ps, f"{name}.k", dim, dim)
        self.wv = Linear(ps, f"{name}.v", dim, dim)
        self.wo = Linear(ps, f"{name}.out", dim, dim)

    def __call__(self, x: Tensor, bias: Tensor | None = None) -> Tensor:
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        outs = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh = gc.take_slice(q, (slice(None), cols))
            kh = gc.take_slice(k, (slice(None), cols))
            vh = gc.take_slice(v, (slice(None), cols))
            logits = gc.mul(gc.matmul(qh, gc.transpose(kh)), self.scale)
            if bias is not None:
                logits = gc.add(logits, gc.take_slice(bias, h))
            attn = gc.softmax(logits, axis=-1)
            outs.append(gc.matmul(attn, vh))
        return self.wo(gc.concat(outs, axis=1))


class TransformerBlock:
    """Pre-norm block: attention and MLP sublayers with residuals."""

    def __init__(self, ps: ParamSet, name: str, dim: int, heads: int, mlp_hidden: int):
        self.ln1 = LayerNorm(ps, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(ps, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(ps, f"{name}.ln2", dim)
        self.fc1 = Linear(ps, f"{name}.fc1", dim, mlp_hidden)
        self.fc2 = Linear(ps, f"{name}.fc2", mlp_hidden, dim)

    def __call__(self, x: Tensor, bias: Tensor | None = None) -> Tensor:
        x = gc.add(x, self.attn(self.ln1(x), bias))
        return gc.add(x, self.fc2(gc.gelu(self.fc1(self.ln2(x)))))
