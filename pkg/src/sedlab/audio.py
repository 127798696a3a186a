"""Waveform container and 16-bit PCM mono WAV adapters."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioError

DEFAULT_SAMPLE_RATE = 32000


@dataclass
class Waveform:
    samples: np.ndarray  # float32 in [-1, 1]
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path: str | Path) -> Waveform:
    """Read a 16-bit PCM mono WAV; samples scaled by 1/32768 into [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"malformed WAV header in {path}: {exc}") from exc
    if channels != 1:
        raise AudioError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples=data, sample_rate=rate)


def save_wav(path: str | Path, wav: Waveform) -> None:
    """Write 16-bit PCM mono; float samples are clipped to [-1, 1]."""
    scaled = np.clip(wav.samples, -1.0, 1.0) * 32768.0
    ints = np.clip(np.round(scaled), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(ints.tobytes())
