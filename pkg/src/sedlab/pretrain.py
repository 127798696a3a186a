"""Masked-reconstruction pre-training of the context network.

Latent sequences from the frozen encoder are masked block-wise, the context
network plus a two-layer reconstruction head restores them, and the loss is
the squared error summed over channels and masked frames only (mean over
the batch). Only context, reconstruction-head, and mask-token parameters
are updated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .context import ContextConfig, ContextNetwork
from .errors import MaskError, TrainingDiverged
from .gradcore import Tensor
from .nn import Linear, ParamSet
from .optim import AdamW
from .rng import substream


@dataclass
class MaskSpec:
    """Block-wise mask over time frames."""

    block_size: int
    ratio: float
    n_frames: int
    block_ids: np.ndarray  # chosen block indices
    indices: np.ndarray  # masked frame indices, sorted

    @property
    def coverage(self) -> float:
        return len(self.indices) / self.n_frames


def sample_block_mask(
    n_frames: int, block: int = 10, ratio: float = 0.75, rng: np.random.Generator | None = None
) -> MaskSpec:
    """Choose round(ratio * T / block) whole blocks uniformly without replacement.

    The sequence tail forms a final (possibly short) block, so coverage stays
    within block/T of the requested ratio for any length.
    """
    rng = rng or np.random.default_rng(0)
    if not 0.0 < ratio <= 1.0:
        raise MaskError(f"mask ratio must be in (0, 1], got {ratio}")
    if n_frames < block:
        raise MaskError(f"sequence of {n_frames} frames is shorter than one {block}-frame block")
    if ratio * n_frames < 1.0:
        raise MaskError(f"ratio {ratio} masks less than one frame of {n_frames}")
    n_blocks = -(-n_frames // block)
    n_sel = min(int(round(ratio * n_frames / block)), n_blocks)
    chosen = np.sort(rng.choice(n_blocks, size=n_sel, replace=False))

    def frames_of(blocks):
        return int(sum(min((b + 1) * block, n_frames) - b * block for b in blocks))

    # a selected short tail block can leave coverage more than one block
    # under the ratio; one extra uniformly drawn block restores the bound
    if n_sel < n_blocks and frames_of(chosen) < (ratio - block / n_frames) * n_frames:
        remaining = np.setdiff1d(np.arange(n_blocks), chosen)
        extra = rng.choice(remaining)
        chosen = np.sort(np.append(chosen, extra))
        n_sel += 1
    indices = np.concatenate(
        [np.arange(b * block, min((b + 1) * block, n_frames)) for b in chosen]
    ) if n_sel else np.empty(0, dtype=np.int64)
    return MaskSpec(
        block_size=block,
        ratio=ratio,
        n_frames=n_frames,
        block_ids=chosen.astype(np.int64),
        indices=indices.astype(np.int64),
    )


def apply_mask(z: Tensor, spec: MaskSpec, token: Tensor) -> Tensor:
    """Replace masked frames with the learnable token; ``z`` is untouched."""
    if len(spec.indices) and spec.indices.max() >= gc._data(z).shape[0]:
        raise MaskError("mask indices exceed the sequence length")
    return gc.mask_replace(z, token, spec.indices)


def masked_mse(z_hat: Tensor, z, spec: MaskSpec) -> Tensor:
    """Squared error summed over channels and masked frames only."""
    if gc._data(z_hat).shape != gc._data(z).shape:
        raise MaskError("reconstruction and target shapes differ")
    if len(spec.indices) == 0:
        raise MaskError("masked reconstruction loss is undefined for an empty mask")
    diff = gc.sub(gc.take(z_hat, spec.indices, axis=0), gc.take(z, spec.indices, axis=0))
    return gc.sum(gc.mul(diff, diff))


class ReconHead:
    """Two fully connected layers with the block nonlinearity between."""

    def __init__(self, ps: ParamSet, dim: int, name: str = "recon"):
        self.fc1 = Linear(ps, f"{name}.fc1", dim, dim)
        self.fc2 = Linear(ps, f"{name}.fc2", dim, dim)

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc2(gc.gelu(self.fc1(h)))


@dataclass
class PretrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    mask_block: int = 10
    mask_ratio: float = 0.75


@dataclass
class PretrainResult:
    curve: list[tuple[int, float]]
    state: dict[str, np.ndarray]
    params: ParamSet = field(repr=False, default=None)


def encode_dataset(dataset, encoder, feat_cfg, indices=None) -> list[np.ndarray]:
    """Frozen-encoder latents for every requested clip (inference mode)."""
    indices = range(len(dataset)) if indices is None else indices
    out = []
    for i in indices:
        z = encoder.forward(dataset.mel(i, feat_cfg))
        out.append(z.data.copy())
    return out


def pretrain_loop(
    latents: list[np.ndarray],
    ctx_cfg: ContextConfig,
    cfg: PretrainConfig,
    seed: int,
    csv_path: str | Path | None = None,
) -> PretrainResult:
    """Train context + reconstruction head + mask token on cached latents."""
    dim = latents[0].shape[1]
    if ctx_cfg.dim != dim:
        raise MaskError(f"context dim {ctx_cfg.dim} != latent dim {dim}")
    ps = ParamSet(seed)
    net = ContextNetwork(ctx_cfg, ps, name="context")
    head = ReconHead(ps, dim, name="recon")
    token = ps.normal("mask_token", (dim,))
    opt = AdamW.single(list(ps.params.values()), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng_batch = substream(seed, "pretrain/batch")
    rng_mask = substream(seed, "pretrain/mask")
    targets = [Tensor(z) for z in latents]

    curve: list[tuple[int, float]] = []
    for step in range(cfg.steps):
        picks = rng_batch.integers(0, len(latents), size=cfg.batch_size)
        with gc.tape():
            total = None
            for i in picks:
                z = targets[int(i)]
                spec = sample_block_mask(z.data.shape[0], cfg.mask_block, cfg.mask_ratio, rng_mask)
                z_hat = head(net.forward(apply_mask(z, spec, token)))
                loss_i = masked_mse(z_hat, z, spec)
                total = loss_i if total is None else gc.add(total, loss_i)
            loss = gc.mul(total, 1.0 / cfg.batch_size)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"pre-training loss became {value} at step {step}")
            gc.backward(loss)
        opt.step()
        opt.zero_grad()
        curve.append((step, value))

    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss"])
            writer.writerows((s, repr(v)) for s, v in curve)
    return PretrainResult(curve=curve, state=ps.state(), params=ps)
