"""Dataset assembly: synthetic clip generation, JSONL manifests, feature cache."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, load_wav, save_wav
from .errors import ConfigError, LabelsError
from .features import FeatureConfig, mel_spectrogram, standardize
from .labels import Event, EventList, save_labels_tsv
from .rng import substream
from .synth import DEFAULT_CLASSES, EventSpec, SceneSpec, synth_scene

SUBSETS = ("strong", "weak", "unlabeled")


@dataclass
class DataConfig:
    classes: list[str] = field(default_factory=lambda: list(DEFAULT_CLASSES))
    clip_duration: float = 2.0
    sample_rate: int = 32000
    n_strong: int = 100
    n_weak: int = 100
    n_unlabeled: int = 200
    min_events: int = 1
    max_events: int = 3
    snr_db_range: list[float] = field(default_factory=lambda: [10.0, 20.0])
    background_rms: float = 0.02
    write_wavs: bool = True

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ConfigError("need at least 2 event classes")
        if self.n_strong + self.n_weak + self.n_unlabeled <= 0:
            raise ConfigError("dataset is empty: all subset counts are zero")
        if self.min_events < 0 or self.max_events < self.min_events:
            raise ConfigError("invalid event count range")
        if self.clip_duration <= 0:
            raise ConfigError("clip_duration must be positive")


@dataclass
class ClipRecord:
    clip_id: str
    subset: str
    seed: int
    duration: float
    path: str | None = None
    events: EventList | None = None  # strong subset only
    tags: list[str] | None = None  # strong + weak subsets


def generate_clip(
    cfg: DataConfig, clip_seed: int
) -> tuple[Waveform, EventList, list[str]]:
    """Deterministically synthesize one clip from its stored seed.

    Draws that cannot be packed without same-class overlap are re-drawn from
    the continuing stream, so the result stays a pure function of the seed.
    """
    from .errors import PackingError

    rng = np.random.default_rng(clip_seed)
    last_exc = None
    for _ in range(20):
        n_events = int(rng.integers(cfg.min_events, cfg.max_events + 1))
        specs = [
            EventSpec(
                kind=cfg.classes[int(rng.integers(len(cfg.classes)))],
                snr_db=float(rng.uniform(*cfg.snr_db_range)),
            )
            for _ in range(n_events)
        ]
        scene = SceneSpec(
            duration=cfg.clip_duration, events=specs, background_rms=cfg.background_rms
        )
        try:
            return synth_scene(scene, rng, sample_rate=cfg.sample_rate)
        except PackingError as exc:
            last_exc = exc
    raise PackingError(f"could not pack any scene draw for this config: {last_exc}")


class SedDataset:
    """Clip records plus lazily computed, cached model features."""

    def __init__(self, cfg: DataConfig, records: list[ClipRecord], root: Path | None = None):
        self.cfg = cfg
        self.records = records
        self.root = root
        self.classes = list(cfg.classes)
        self.class_index = {c: i for i, c in enumerate(self.classes)}
        self._mel_cache: dict[int, np.ndarray] = {}
        self._frame_rate: float | None = None

    def __len__(self) -> int:
        return len(self.records)

    def indices(self, subset: str) -> list[int]:
        return [i for i, r in enumerate(self.records) if r.subset == subset]

    def waveform(self, i: int) -> Waveform:
        rec = self.records[i]
        if rec.path is not None:
            full = Path(rec.path)
            if not full.is_absolute() and self.root is not None:
                full = self.root / full
            if full.exists():
                return load_wav(full)
        wav, _, _ = generate_clip(self.cfg, rec.seed)
        return wav

    def mel(self, i: int, feat_cfg: FeatureConfig) -> np.ndarray:
        """Model-ready (T, n_mels) features for clip ``i`` (cached)."""
        if i not in self._mel_cache:
            spec = mel_spectrogram(self.waveform(i), feat_cfg)
            self._frame_rate = spec.frame_rate
            frames = standardize(spec.frames) if feat_cfg.normalize else spec.frames
            self._mel_cache[i] = frames
        return self._mel_cache[i]

    def frame_rate(self, feat_cfg: FeatureConfig) -> float:
        if self._frame_rate is None:
            self.mel(0, feat_cfg)
        return self._frame_rate

    def strong_targets(self, i: int, feat_cfg: FeatureConfig) -> np.ndarray:
        from .labels import rasterize

        rec = self.records[i]
        mel = self.mel(i, feat_cfg)
        return rasterize(rec.events or [], self.frame_rate(feat_cfg), mel.shape[0], self.class_index)


def build_dataset(cfg: DataConfig, seed: int, out_dir: str | Path | None = None) -> SedDataset:
    """Synthesize the three subsets; optionally persist WAV/TSV/manifest files."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "wavs").mkdir(parents=True, exist_ok=True)
    records: list[ClipRecord] = []
    strong_labels: dict[str, EventList] = {}
    counts = {"strong": cfg.n_strong, "weak": cfg.n_weak, "unlabeled": cfg.n_unlabeled}
    for subset in SUBSETS:
        for i in range(counts[subset]):
            clip_id = f"{subset}_{i:04d}"
            clip_seed = int(substream(seed, f"data/{clip_id}").integers(2**63))
            wav, events, tags = generate_clip(cfg, clip_seed)
            rec = ClipRecord(
                clip_id=clip_id,
                subset=subset,
                seed=clip_seed,
                duration=cfg.clip_duration,
                events=events if subset == "strong" else None,
                tags=tags if subset in ("strong", "weak") else None,
            )
            if out is not None and cfg.write_wavs:
                rel = f"wavs/{clip_id}.wav"
                save_wav(out / rel, wav)
                rec.path = rel
            if subset == "strong":
                strong_labels[f"{clip_id}.wav"] = events
            records.append(rec)
    ds = SedDataset(cfg, records, root=out)
    if out is not None:
        save_labels_tsv(out / "labels_strong.tsv", strong_labels)
        write_manifest(out / "manifest.jsonl", ds)
    return ds


def write_manifest(path: str | Path, ds: SedDataset) -> None:
    with open(path, "w") as fh:
        header = {
            "manifest_version": 1,
            "classes": ds.classes,
            "sample_rate": ds.cfg.sample_rate,
            "clip_duration": ds.cfg.clip_duration,
            "data_config": _data_cfg_dict(ds.cfg),
        }
        fh.write(json.dumps(header) + "\n")
        for rec in ds.records:
            row = {
                "clip_id": rec.clip_id,
                "subset": rec.subset,
                "seed": rec.seed,
                "path": rec.path,
                "duration": rec.duration,
                "events": None
                if rec.events is None
                else [[e.label, e.onset, e.offset] for e in rec.events],
                "tags": rec.tags,
            }
            fh.write(json.dumps(row) + "\n")


def _data_cfg_dict(cfg: DataConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def load_manifest(path: str | Path) -> SedDataset:
    path = Path(path)
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "manifest_version" not in lines[0]:
        raise LabelsError(f"{path}: missing manifest header record")
    header = lines[0]
    cfg = DataConfig(**header["data_config"])
    records = []
    for row in lines[1:]:
        if row["subset"] not in SUBSETS:
            raise LabelsError(f"{path}: unknown subset {row['subset']!r}")
        events = None
        if row.get("events") is not None:
            events = [Event(label, on, off) for label, on, off in row["events"]]
        records.append(
            ClipRecord(
                clip_id=row["clip_id"],
                subset=row["subset"],
                seed=row["seed"],
                duration=row["duration"],
                path=row.get("path"),
                events=events,
                tags=row.get("tags"),
            )
        )
    return SedDataset(cfg, records, root=path.parent)
