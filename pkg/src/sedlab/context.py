"""Transformer context network over latent frames.

Positional treatment is configurable: a learnable relative-position bias
added to every attention logit (production mode), a learnable absolute
embedding table (ablation mode), or none. The relative bias for a pair
(i, j) depends only on the clipped offset i - j, so realized bias matrices
are Toeplitz by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcheck, gradcore as gc
from .errors import ConfigError, ShapeError
from .gradcore import Tensor
from .nn import ParamSet, TransformerBlock

POS_MODES = ("rpe", "ape", "none")


@dataclass
class ContextConfig:
    dim: int = 96
    blocks: int = 3
    heads: int = 4
    expansion: float = 1.0
    pos_mode: str = "rpe"
    max_rel_dist: int = 127
    ape_max_len: int = 1024

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigError("context dim must be divisible by heads")
        if self.max_rel_dist < 1:
            raise ConfigError("context max_rel_dist must be >= 1")
        if self.pos_mode not in POS_MODES:
            raise ConfigError(f"context pos_mode must be one of {POS_MODES}")


def relative_index_grid(n_frames: int, max_dist: int) -> np.ndarray:
    """Table index per (i, j): clip(i - j, +-max_dist) shifted to [0, 2*max_dist]."""
    offs = np.arange(n_frames)[:, None] - np.arange(n_frames)[None, :]
    return np.clip(offs, -max_dist, max_dist) + max_dist


def rel_bias_matrix(table, n_frames: int, max_dist: int):
    """Realize the per-head (heads, T, T) bias from a (heads, 2D+1) table."""
    if n_frames < 1:
        raise ShapeError("rel_bias_matrix needs at least one frame")
    td = gc._data(table)
    if td.shape[-1] != 2 * max_dist + 1:
        raise ShapeError(f"bias table has {td.shape[-1]} buckets, expected {2 * max_dist + 1}")
    idx = relative_index_grid(n_frames, max_dist)
    out = td[:, idx]
    if not isinstance(table, Tensor):
        return out
    flat = idx.ravel()
    buckets = td.shape[-1]

    def bwd(g):
        gt = np.empty_like(td)
        for h in range(td.shape[0]):
            gt[h] = np.bincount(flat, weights=g[h].ravel().astype(np.float64), minlength=buckets)
        return (gt,)

    return gc.apply_op((table,), out, bwd)


class ContextNetwork:
    def __init__(self, cfg: ContextConfig, ps: ParamSet, name: str = "context"):
        cfg.validate()
        self.cfg = cfg
        self.rel_table: Tensor | None = None
        self.ape_table: Tensor | None = None
        if cfg.pos_mode == "rpe":
            self.rel_table = ps.zeros(f"{name}.relpos.table", (cfg.heads, 2 * cfg.max_rel_dist + 1))
        elif cfg.pos_mode == "ape":
            self.ape_table = ps.normal(f"{name}.ape.table", (cfg.ape_max_len, cfg.dim))
        hidden = int(cfg.dim * cfg.expansion)
        self.blocks = [
            TransformerBlock(ps, f"{name}.block{i}", cfg.dim, cfg.heads, hidden)
            for i in range(cfg.blocks)
        ]

    def forward(self, z: Tensor) -> Tensor:
        """Apply the block stack to a (T, dim) latent sequence, shape-preserving."""
        n_frames = gc._data(z).shape[0]
        bias = None
        if self.rel_table is not None:
            bias = rel_bias_matrix(self.rel_table, n_frames, self.cfg.max_rel_dist)
        if self.ape_table is not None:
            if n_frames > self.cfg.ape_max_len:
                raise ShapeError(
                    f"{n_frames} frames exceed the absolute-position table "
                    f"capacity {self.cfg.ape_max_len}"
                )
            z = gc.add(z, gc.take_slice(self.ape_table, slice(0, n_frames)))
        for block in self.blocks:
            z = block(z, bias)
        return z


def _build_rel_bias(rng):
    table = rng.standard_normal((2, 7))
    w = rng.standard_normal((2, 5, 5))
    return (
        lambda t: gc.sum(gc.mul(gc.gelu(rel_bias_matrix(t, 5, 3)), w)),
        [table],
    )


gradcheck.register_check("rel_bias_matrix", _build_rel_bias)
