"""Patch Transformer encoder: mel-spectrogram -> per-frame latent sequence.

A mel clip (frames x 128 bins) is cut into 16x16 patches (stride 10 along
time, non-overlapping along frequency), linearly projected, run through
pre-norm Transformer blocks with learned absolute patch positions, pooled
over the frequency patch axis, and linearly upsampled x10 along time to
restore the original frame rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcheck, gradcore as gc
from .errors import ConfigError, ShapeError
from .gradcore import Tensor
from .nn import Linear, LayerNorm, ParamSet, TransformerBlock


@dataclass
class EncoderConfig:
    patch_size: int = 16
    time_stride: int = 10
    dim: int = 96
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 2.0
    max_time_patches: int = 128

    def validate(self) -> None:
        if self.time_stride > self.patch_size:
            raise ConfigError("encoder time_stride must be <= patch_size")
        if self.patch_size < 1 or self.time_stride < 1:
            raise ConfigError("encoder patch_size/time_stride must be positive")
        if self.dim % self.heads:
            raise ConfigError("encoder dim must be divisible by heads")


@dataclass
class LatentSequence:
    """Encoder output: (frames, channels) latent matrix at the mel frame rate."""

    z: np.ndarray
    frame_rate: float

    @property
    def n_frames(self) -> int:
        return self.z.shape[0]


def time_patch_count(n_frames: int, patch: int, stride: int) -> int:
    if n_frames < patch:
        raise ShapeError(f"clip of {n_frames} frames is shorter than one {patch}-frame patch")
    return (n_frames - patch) // stride + 1


def extract_patches(mel: np.ndarray, patch: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Cut (T, F) mel into flattened patches, time-major then frequency.

    Frequency is padded with zeros up to a multiple of the patch size and
    tiled without overlap; time uses the configured stride. Returns
    (patches (n_t * n_f, patch * patch), n_t, n_f).
    """
    n_frames, n_bins = mel.shape
    if n_bins % patch:
        pad = patch - n_bins % patch
        mel = np.pad(mel, ((0, 0), (0, pad)))
        n_bins += pad
    n_t = time_patch_count(n_frames, patch, stride)
    n_f = n_bins // patch
    view = np.lib.stride_tricks.sliding_window_view(mel, (patch, patch))
    tiles = view[::stride, ::patch]  # (n_t, n_f, patch, patch)
    return tiles.reshape(n_t * n_f, patch * patch).astype(np.float32), n_t, n_f


def linear_upsample(x, factor: int):
    """Per-channel linear interpolation onto a grid ``factor`` x as fine.

    Input (n, C) maps to ((n - 1) * factor + 1, C); values at integer
    source positions (including both endpoints) are preserved exactly.
    """
    xd = gc._data(x)
    n = xd.shape[0]
    if n < 2:
        raise ShapeError("linear_upsample needs at least 2 time positions")
    j = np.arange((n - 1) * factor + 1)
    k = j // factor
    w = ((j % factor) / factor).astype(xd.dtype)[:, None]
    k2 = np.minimum(k + 1, n - 1)
    out = xd[k] * (1.0 - w) + xd[k2] * w
    if not isinstance(x, Tensor):
        return out

    def bwd(g):
        z = np.zeros_like(xd)
        np.add.at(z, k, g * (1.0 - w))
        np.add.at(z, k2, g * w)
        return (z,)

    return gc.apply_op((x,), out, bwd)


def fit_length(x, target: int):
    """Truncate or pad-by-replication along time to exactly ``target`` rows."""
    n = gc._data(x).shape[0]
    if n == target:
        return x
    idx = np.minimum(np.arange(target), n - 1)
    return gc.take(x, idx, axis=0)


class PatchEncoder:
    """Toy stand-in for a large pre-trained audio tagging Transformer."""

    def __init__(self, cfg: EncoderConfig, ps: ParamSet, name: str = "encoder"):
        cfg.validate()
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size
        self.proj = Linear(ps, f"{name}.proj", patch_dim, cfg.dim)
        self.pos_time = ps.normal(f"{name}.pos_time", (cfg.max_time_patches, cfg.dim))
        self.pos_freq = ps.normal(f"{name}.pos_freq", (128 // cfg.patch_size, cfg.dim))
        self.blocks = [
            TransformerBlock(
                ps, f"{name}.block{i}", cfg.dim, cfg.heads, int(cfg.dim * cfg.mlp_ratio)
            )
            for i in range(cfg.depth)
        ]
        self.norm = LayerNorm(ps, f"{name}.norm", cfg.dim)

    def embed(self, mel: np.ndarray, positional: bool = True) -> tuple[Tensor, int, int]:
        """Project patches to embeddings; positions optional (for tests)."""
        patches, n_t, n_f = extract_patches(mel, self.cfg.patch_size, self.cfg.time_stride)
        x = self.proj(Tensor(patches))
        if positional:
            if n_t > self.cfg.max_time_patches:
                raise ShapeError(
                    f"{n_t} time patches exceed the configured maximum "
                    f"{self.cfg.max_time_patches}"
                )
            tidx = np.repeat(np.arange(n_t), n_f)
            fidx = np.tile(np.arange(n_f), n_t)
            x = gc.add(x, gc.take(self.pos_time, tidx, axis=0))
            x = gc.add(x, gc.take(self.pos_freq, fidx, axis=0))
        return x, n_t, n_f

    def forward(self, mel: np.ndarray, positional: bool = True) -> Tensor:
        """Encode a (T, 128) mel clip to a (T, dim) latent sequence."""
        x, n_t, n_f = self.embed(mel, positional=positional)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        grid = gc.reshape(x, (n_t, n_f, self.cfg.dim))
        pooled = gc.mean(grid, axis=1)
        up = linear_upsample(pooled, self.cfg.time_stride)
        return fit_length(up, mel.shape[0])


def _build_linear_upsample(rng):
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((3 * 3 + 1, 3))
    return (
        lambda x: gc.sum(gc.mul(gc.gelu(linear_upsample(x, 3)), w)),
        [x],
    )


gradcheck.register_check("linear_upsample", _build_linear_upsample)
