"""Semi-supervised fine-tuning: SED/AT heads, mean teacher, feature fusion.

The student consumes global features only; the teacher consumes the fusion
of global features and averaged sliding-window features (fusion never
back-propagates). Phase 1 trains the heads over a frozen backbone; phase 2
fine-tunes end to end with per-group learning rates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .augment import draw_mixup_coefficient, mixup, time_shift
from .context import ContextConfig, ContextNetwork
from .encoder import EncoderConfig, PatchEncoder
from .errors import FusionError, SedlabError, TrainingDiverged
from .features import FeatureConfig
from .gradcore import Tensor
from .labels import weak_vector
from .nn import Linear, ParamSet
from .optim import AdamW
from .rng import substream


@dataclass
class FusionConfig:
    lam: float = 0.5
    window_s: float = 5.0
    step_s: float = 0.3

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise FusionError(f"fusion coefficient must be in [0, 1], got {self.lam}")
        if self.window_s <= 0 or self.step_s <= 0:
            raise FusionError("fusion window and step must be positive")


@dataclass
class BatchComposition:
    strong: int = 3
    synth_strong: int = 1
    weak: int = 4
    unlabeled: int = 4

    def total(self) -> int:
        return self.strong + self.synth_strong + self.weak + self.unlabeled


@dataclass
class FinetuneConfig:
    phase1_steps: int = 300
    phase2_steps: int = 700
    lr_encoder: float = 5e-6
    lr_context: float = 1e-4
    lr_heads: float = 2e-4
    weight_decay: float = 1e-4
    ema_decay: float = 0.999
    consistency_weight: float = 40.0
    consistency_on_labeled: bool = True
    batch: BatchComposition = field(default_factory=BatchComposition)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    mixup_prob: float = 0.0
    mixup_alpha: float = 0.2
    time_shift_max_frames: int = 0
    checkpoint_fractions: list[float] = field(default_factory=list)

    def total_steps(self) -> int:
        return self.phase1_steps + self.phase2_steps


# ---------------------------------------------------------------------------
# pooling and fusion
# ---------------------------------------------------------------------------

_POOL_FLOOR = 1e-12


def linear_softmax_pool(p):
    """Clip-level probabilities sum(p^2) / sum(p) per class (0 when all-zero)."""
    num = gc.sum(gc.mul(p, p), axis=0)
    den = gc.clip(gc.sum(p, axis=0), _POOL_FLOOR, None)
    return gc.div(num, den)


def window_starts(n_frames: int, win: int, step: int) -> np.ndarray:
    """Stride-aligned window starts plus a final end-aligned window."""
    if win > n_frames:
        raise FusionError(f"window of {win} frames exceeds the {n_frames}-frame clip")
    if step < 1:
        raise FusionError("window step must be at least one frame")
    starts = list(range(0, n_frames - win + 1, step))
    if starts[-1] != n_frames - win:
        starts.append(n_frames - win)
    return np.asarray(starts, dtype=np.int64)


def coverage_counts(n_frames: int, starts: np.ndarray, win: int) -> np.ndarray:
    counts = np.zeros(n_frames, dtype=np.int64)
    for s in starts:
        counts[s : s + win] += 1
    return counts


def fuse_global_local(mel: np.ndarray, encode_fn, fusion: FusionConfig, frame_rate: float):
    """Convex combination of full-clip features and averaged window features.

    ``encode_fn`` maps a mel array to a (frames, dim) Tensor; fusion runs in
    inference mode and returns a plain array (the teacher never needs
    gradients through this path).
    """
    fusion.validate()
    z_global = gc._data(encode_fn(mel)).copy()
    if fusion.lam == 0.0:
        return z_global
    n_frames = mel.shape[0]
    win = int(round(fusion.window_s * frame_rate))
    step = int(round(fusion.step_s * frame_rate))
    starts = window_starts(n_frames, win, step)
    acc = np.zeros_like(z_global)
    for s in starts:
        acc[s : s + win] += gc._data(encode_fn(mel[s : s + win]))
    counts = coverage_counts(n_frames, starts, win)
    z_local = acc / counts[:, None]
    if fusion.lam == 1.0:
        return z_local
    return fusion.lam * z_local + (1.0 - fusion.lam) * z_global


# ---------------------------------------------------------------------------
# model and mean teacher
# ---------------------------------------------------------------------------


class SedModel:
    """Encoder + context network + frame-level SED head + clip-level AT head."""

    def __init__(
        self,
        enc_cfg: EncoderConfig,
        ctx_cfg: ContextConfig,
        n_classes: int,
        seed: int,
    ):
        if enc_cfg.dim != ctx_cfg.dim:
            raise SedlabError(f"encoder dim {enc_cfg.dim} != context dim {ctx_cfg.dim}")
        self.n_classes = n_classes
        self.ps = ParamSet(seed)
        self.encoder = PatchEncoder(enc_cfg, self.ps, name="encoder")
        self.context = ContextNetwork(ctx_cfg, self.ps, name="context")
        self.sed_head = Linear(self.ps, "sed_head", ctx_cfg.dim, n_classes)
        self.at_head = Linear(self.ps, "at_head", ctx_cfg.dim, n_classes)

    def backbone(self, mel: np.ndarray) -> Tensor:
        return self.context.forward(self.encoder.forward(mel))

    def heads(self, h: Tensor):
        """(frame probs (T, K), pooled clip probs (K,), AT probs (K,))."""
        frame = gc.sigmoid(self.sed_head(h))
        pooled = linear_softmax_pool(frame)
        clip_repr = gc.reshape(gc.mean(h, axis=0), (1, -1))
        at = gc.reshape(gc.sigmoid(self.at_head(clip_repr)), (-1,))
        return frame, pooled, at

    def forward(self, mel: np.ndarray):
        return self.heads(self.backbone(mel))

    def state(self) -> dict[str, np.ndarray]:
        return self.ps.state()

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> int:
        return self.ps.load_state(arrays, prefix=prefix)

    def param_groups(self):
        return {
            "encoder": self.ps.subset("encoder."),
            "context": self.ps.subset("context."),
            "heads": self.ps.subset("sed_head") + self.ps.subset("at_head"),
        }


def ema_update(teacher: ParamSet, student: ParamSet, alpha: float) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, elementwise."""
    for name, t in teacher.params.items():
        s = student.params[name]
        t.data *= alpha
        t.data += (1.0 - alpha) * s.data


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

_BCE_EPS = 1e-7


def bce(p, target: np.ndarray):
    """Mean binary cross-entropy of probabilities against {0,1} targets."""
    target = np.asarray(target, dtype=np.float32)
    p_pos = gc.clip(p, _BCE_EPS, 1.0)
    p_neg = gc.clip(gc.sub(1.0, p), _BCE_EPS, 1.0)
    ll = gc.add(gc.mul(gc.log(p_pos), target), gc.mul(gc.log(p_neg), 1.0 - target))
    return gc.neg(gc.mean(ll))


def mse(a, b):
    diff = gc.sub(a, b)
    return gc.mean(gc.mul(diff, diff))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

METRIC_COLUMNS = (
    "step",
    "phase",
    "loss_strong",
    "loss_weak",
    "loss_consistency",
    "lr_encoder",
    "lr_context",
    "lr_heads",
)


@dataclass
class FinetuneResult:
    metrics: list[dict]
    student_state: dict[str, np.ndarray]
    teacher_state: dict[str, np.ndarray]
    checkpoints: dict[float, dict[str, np.ndarray]] = field(default_factory=dict)


class FinetuneRunner:
    """Owns the student/teacher pair and executes the two-phase schedule."""

    def __init__(
        self,
        dataset,
        enc_cfg: EncoderConfig,
        ctx_cfg: ContextConfig,
        feat_cfg: FeatureConfig,
        cfg: FinetuneConfig,
        seed: int,
        pretrained_state: dict[str, np.ndarray] | None = None,
    ):
        self.ds = dataset
        self.cfg = cfg
        self.feat_cfg = feat_cfg
        self.seed = seed
        k = len(dataset.classes)
        self.student = SedModel(enc_cfg, ctx_cfg, k, seed)
        if pretrained_state is not None:
            loaded = self.student.load_state(pretrained_state, prefix="context.")
            if not loaded:
                raise SedlabError("pre-trained checkpoint holds no context parameters")
        self.teacher = SedModel(enc_cfg, ctx_cfg, k, seed)
        for name, t in self.teacher.ps.params.items():
            t.data[...] = self.student.ps.params[name].data
            t.requires_grad = False  # teacher never enters a tape
        self.rng_batch = substream(seed, "finetune/batch")
        self.rng_augment = substream(seed, "finetune/augment")
        self.pools = {s: dataset.indices(s) for s in ("strong", "weak", "unlabeled")}
        if not self.pools["strong"]:
            raise SedlabError("fine-tuning needs at least one strong-labeled clip")
        self.step_count = 0
        self.metrics: list[dict] = []

    # -- data ----------------------------------------------------------------

    def _draw(self, pool: list[int], k: int) -> list[int]:
        if k <= 0 or not pool:
            return []
        replace = len(pool) < k
        return [int(i) for i in self.rng_batch.choice(pool, size=k, replace=replace)]

    def _sample_batch(self):
        comp = self.cfg.batch
        # all strong data here is synthetic, so the synth-strong slots draw
        # from the same strong pool
        batch = [("strong", i) for i in self._draw(self.pools["strong"], comp.strong + comp.synth_strong)]
        batch += [("weak", i) for i in self._draw(self.pools["weak"], comp.weak)]
        batch += [("unlabeled", i) for i in self._draw(self.pools["unlabeled"], comp.unlabeled)]
        return batch

    def _clip_inputs(self, subset: str, idx: int):
        """Mel features plus targets, with augmentation applied when enabled."""
        mel = self.ds.mel(idx, self.feat_cfg)
        rec = self.ds.records[idx]
        frame_rate = self.ds.frame_rate(self.feat_cfg)
        events = rec.events or []
        if self.cfg.time_shift_max_frames > 0:
            shift = int(
                self.rng_augment.integers(
                    -self.cfg.time_shift_max_frames, self.cfg.time_shift_max_frames + 1
                )
            )
            mel, events = time_shift(mel, events, shift, frame_rate)
        targets = None
        if subset == "strong":
            from .labels import rasterize

            targets = rasterize(events, frame_rate, mel.shape[0], self.ds.class_index)
        tags = None
        if subset == "strong":
            tags = weak_vector(events, self.ds.class_index)
        elif subset == "weak":
            tags = weak_vector(rec.tags or [], self.ds.class_index)
        if subset == "strong" and self.cfg.mixup_prob > 0:
            if self.rng_augment.uniform() < self.cfg.mixup_prob:
                other = int(self.rng_augment.choice(self.pools["strong"]))
                lam = draw_mixup_coefficient(self.rng_augment, self.cfg.mixup_alpha)
                mel_b = self.ds.mel(other, self.feat_cfg)
                targets_b = self.ds.strong_targets(other, self.feat_cfg)
                if mel_b.shape == mel.shape:
                    mel = mixup(mel, mel_b, lam)
                    targets = mixup(targets, targets_b, lam)
                    tags = np.clip(
                        mixup(tags, weak_vector(self.ds.records[other].events or [], self.ds.class_index), lam),
                        0.0,
                        1.0,
                    )
        return mel, targets, tags

    # -- forward paths ---------------------------------------------------------

    def _teacher_outputs(self, mel: np.ndarray):
        fused = fuse_global_local(
            mel,
            self.teacher.encoder.forward,
            self.cfg.fusion,
            self.ds.frame_rate(self.feat_cfg),
        )
        h = self.teacher.context.forward(Tensor(fused))
        frame, pooled, at = self.teacher.heads(h)
        return frame.data, at.data

    # -- steps -----------------------------------------------------------------

    def _build_optimizer(self, phase: int) -> AdamW:
        groups = self.student.param_groups()
        if phase == 1:
            return AdamW(
                [(groups["heads"], self.cfg.lr_heads)], weight_decay=self.cfg.weight_decay
            )
        return AdamW(
            [
                (groups["encoder"], self.cfg.lr_encoder),
                (groups["context"], self.cfg.lr_context),
                (groups["heads"], self.cfg.lr_heads),
            ],
            weight_decay=self.cfg.weight_decay,
        )

    def mt_step(self, phase: int, opt: AdamW) -> dict:
        """One mean-teacher step: losses, student update, teacher EMA."""
        opt.zero_grad()
        batch = self._sample_batch()
        inputs = [(subset, idx, *self._clip_inputs(subset, idx)) for subset, idx in batch]
        use_consistency = self.cfg.consistency_weight > 0
        teacher_out = {}
        if use_consistency:
            for pos, (subset, idx, mel, _, _) in enumerate(inputs):
                if not self.cfg.consistency_on_labeled and subset != "unlabeled":
                    continue
                teacher_out[pos] = self._teacher_outputs(mel)

        frozen_latents = None
        if phase == 1:  # backbone is frozen: run it in inference mode
            frozen_latents = [self.student.backbone(mel) for _, _, mel, _, _ in inputs]

        sums = {"strong": None, "weak": None, "cons": None}
        counts = {"strong": 0, "weak": 0, "cons": 0}

        def accumulate(key, term):
            sums[key] = term if sums[key] is None else gc.add(sums[key], term)
            counts[key] += 1

        with gc.tape():
            for pos, (subset, idx, mel, targets, tags) in enumerate(inputs):
                if phase == 1:
                    h = frozen_latents[pos]
                else:
                    h = self.student.backbone(mel)
                frame, pooled, at = self.student.heads(h)
                if targets is not None:
                    accumulate("strong", bce(frame, targets))
                if tags is not None:
                    accumulate("weak", gc.add(bce(pooled, tags), bce(at, tags)))
                if pos in teacher_out:
                    t_frame, t_at = teacher_out[pos]
                    accumulate("cons", gc.add(mse(frame, t_frame), mse(at, t_at)))
            total = None
            parts = {}
            for key, weight in (("strong", 1.0), ("weak", 1.0), ("cons", self.cfg.consistency_weight)):
                if sums[key] is None:
                    parts[key] = 0.0
                    continue
                term = gc.mul(sums[key], 1.0 / counts[key])
                parts[key] = term.item()
                weighted = gc.mul(term, weight)
                total = weighted if total is None else gc.add(total, weighted)
            if total is None:
                raise SedlabError("batch produced no loss terms")
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"fine-tuning loss became {value} at step {self.step_count}")
            gc.backward(total)
        opt.step()
        ema_update(self.teacher.ps, self.student.ps, self.cfg.ema_decay)
        return {
            "loss_strong": parts["strong"],
            "loss_weak": parts["weak"],
            "loss_consistency": parts["cons"],
        }

    def run(self, metrics_csv: str | Path | None = None) -> FinetuneResult:
        """Execute phase 1 (heads only) then phase 2 (end to end)."""
        cfg = self.cfg
        total = cfg.total_steps()
        checkpoint_steps = {
            max(1, int(round(frac * total))): frac for frac in cfg.checkpoint_fractions
        }
        result_checkpoints: dict[float, dict[str, np.ndarray]] = {}
        for phase, steps in ((1, cfg.phase1_steps), (2, cfg.phase2_steps)):
            if steps <= 0:
                continue
            opt = self._build_optimizer(phase)
            lr_e = cfg.lr_encoder if phase == 2 else 0.0
            lr_c = cfg.lr_context if phase == 2 else 0.0
            for _ in range(steps):
                self.step_count += 1
                losses = self.mt_step(phase, opt)
                row = {
                    "step": self.step_count,
                    "phase": phase,
                    **losses,
                    "lr_encoder": lr_e,
                    "lr_context": lr_c,
                    "lr_heads": cfg.lr_heads,
                }
                self.metrics.append(row)
                if self.step_count in checkpoint_steps:
                    result_checkpoints[checkpoint_steps[self.step_count]] = self.student.state()
        if metrics_csv is not None:
            write_metrics_csv(metrics_csv, self.metrics)
        return FinetuneResult(
            metrics=self.metrics,
            student_state=self.student.state(),
            teacher_state=self.teacher.state(),
            checkpoints=result_checkpoints,
        )


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRIC_COLUMNS])


def finetune_schedule(runner: FinetuneRunner, metrics_csv=None) -> FinetuneResult:
    """Run the full two-phase schedule on a configured runner."""
    return runner.run(metrics_csv=metrics_csv)
