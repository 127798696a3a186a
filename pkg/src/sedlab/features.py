"""STFT and log-mel feature extraction.

Frames are Hamming-windowed with no centering or end padding, so a clip of
N samples yields exactly 1 + floor((N - win) / hop) frames. The DFT is
zero-padded to ``n_fft`` (1024 for the default 800-sample window; any
consistent size satisfies the frame contracts).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import ConfigError, ShapeError


@dataclass
class FeatureConfig:
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 1024
    n_mels: int = 128
    log_eps: float = 1e-5
    window: str = "hamming"
    normalize: bool = True  # standardize each clip's log-mel before the encoder

    def win_samples(self, sample_rate: int) -> int:
        return int(round(self.win_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def frame_rate(self, sample_rate: int) -> float:
        return sample_rate / self.hop_samples(sample_rate)

    def validate(self) -> None:
        if self.hop_ms > self.win_ms:
            raise ConfigError("hop must not exceed the window length")
        if self.window not in ("hamming", "rect"):
            raise ConfigError(f"unsupported window kind {self.window!r}")
        if self.n_mels < 1 or self.n_fft < 2:
            raise ConfigError("n_mels and n_fft must be positive")


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (T, n_mels) float32 log-mel energies
    frame_rate: float

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def num_frames(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        raise ShapeError(f"clip of {n_samples} samples is shorter than one {win}-sample window")
    return 1 + (n_samples - win) // hop


def _window(kind: str, win: int) -> np.ndarray:
    if kind == "hamming":
        return np.hamming(win)
    return np.ones(win)


def stft(wav: Waveform, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Windowed DFT frames, shape (frames, n_fft // 2 + 1), complex."""
    cfg = cfg or FeatureConfig()
    cfg.validate()
    win = cfg.win_samples(wav.sample_rate)
    hop = cfg.hop_samples(wav.sample_rate)
    if win > cfg.n_fft:
        raise ConfigError(f"window of {win} samples exceeds n_fft={cfg.n_fft}")
    n = num_frames(len(wav.samples), win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(wav.samples, win)[::hop][:n]
    return np.fft.rfft(frames * _window(cfg.window, win), n=cfg.n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float = 0.0, fmax=None):
    """Triangular HTK-style filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    points = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, center, hi = points[m], points[m + 1], points[m + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb.astype(np.float32)


def mel_spectrogram(wav: Waveform, cfg: FeatureConfig | None = None) -> MelSpectrogram:
    """Log-compressed mel energies: log(filterbank @ |STFT|^2 + eps)."""
    cfg = cfg or FeatureConfig()
    spec = stft(wav, cfg)
    power = (spec.real**2 + spec.imag**2).astype(np.float32)
    fb = mel_filterbank(wav.sample_rate, cfg.n_fft, cfg.n_mels)
    mel = np.log(power @ fb.T + cfg.log_eps)
    return MelSpectrogram(frames=mel.astype(np.float32), frame_rate=cfg.frame_rate(wav.sample_rate))


def standardize(mel: np.ndarray) -> np.ndarray:
    """Per-clip zero-mean/unit-variance scaling of log-mel features."""
    mu = mel.mean()
    sd = mel.std()
    return ((mel - mu) / max(sd, 1e-6)).astype(np.float32)
