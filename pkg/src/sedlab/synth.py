"""Synthetic labeled scenes: tones, chirps, noise bursts, clicks over noise.

Scenes are deterministic functions of (spec, seed): every event's class,
placement, and level comes from the seeded generator, and the returned
strong labels are exactly the synthesis times. Events of the same class
never overlap (decoded events could not be separated otherwise); events of
different classes may.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Waveform
from .errors import PackingError
from .labels import Event, EventList

DEFAULT_CLASSES = ("tone", "chirp", "noise_burst", "click")

# per-class length range (s) and synthesis band (Hz)
CLASS_RECIPES = {
    "tone": {"length": (0.25, 0.7), "band": (300.0, 800.0)},
    "chirp": {"length": (0.25, 0.7), "band": (1000.0, 3000.0)},
    "noise_burst": {"length": (0.2, 0.6), "band": (4000.0, 8000.0)},
    "click": {"length": (0.25, 0.7), "band": (None, None)},
}

GRANULARITIES = ("strong", "weak", "unlabeled")


@dataclass
class EventSpec:
    kind: str
    onset: float | None = None  # drawn uniformly if None
    length: float | None = None  # drawn from the class recipe if None
    snr_db: float = 15.0


@dataclass
class SceneSpec:
    duration: float = 10.0
    events: list[EventSpec] = field(default_factory=list)
    granularity: str = "strong"
    background_rms: float = 0.02


def _fade(n_samples: int, sample_rate: int, ramp_s: float = 0.01) -> np.ndarray:
    env = np.ones(n_samples)
    ramp = min(int(ramp_s * sample_rate), n_samples // 2)
    if ramp > 0:
        shape = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, ramp))
        env[:ramp] = shape
        env[-ramp:] = shape[::-1]
    return env


def _bandpass_noise(rng, n: int, sample_rate: int, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def render_event(kind: str, length_s: float, rng, sample_rate: int) -> np.ndarray:
    """Unit-RMS faded waveform for one event."""
    n = max(int(round(length_s * sample_rate)), 8)
    t = np.arange(n) / sample_rate
    band = CLASS_RECIPES[kind]["band"]
    if kind == "tone":
        f = rng.uniform(*band)
        x = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    elif kind == "chirp":
        f0 = rng.uniform(band[0], band[0] + 500.0)
        f1 = rng.uniform(band[1] - 800.0, band[1])
        x = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / length_s * t * t))
    elif kind == "noise_burst":
        x = _bandpass_noise(rng, n, sample_rate, *band)
    elif kind == "click":
        # broadband tick train: 25 Hz repetition, 3 ms decay per tick
        x = rng.standard_normal(n) * 0.05
        period = int(sample_rate / 25)
        decay = np.exp(-np.arange(int(0.003 * sample_rate) * 4) / (0.003 * sample_rate))
        for start in range(0, n, period):
            seg = min(len(decay), n - start)
            x[start : start + seg] += decay[:seg] * rng.standard_normal(seg) * 4.0
    else:
        raise PackingError(f"unknown event kind {kind!r}")
    x = x * _fade(n, sample_rate)
    rms = np.sqrt(np.mean(x * x))
    return x / max(rms, 1e-9)


def _place(rng, duration: float, length: float, occupied: list[tuple[float, float]]) -> float:
    """Draw an onset whose interval avoids the occupied (same-class) spans."""
    if length > duration:
        raise PackingError(f"event of {length:.2f}s cannot fit a {duration:.2f}s clip")
    for _ in range(200):
        onset = rng.uniform(0.0, duration - length)
        if all(onset + length <= s or onset >= e for s, e in occupied):
            return onset
    raise PackingError("too many events for clip duration (no non-overlapping placement)")


def synth_scene(
    spec: SceneSpec, seed: int | np.random.Generator, sample_rate: int = 32000
) -> tuple[Waveform, EventList, list[str]]:
    """Render a scene; returns (waveform, strong events, weak tags)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = int(round(spec.duration * sample_rate))
    audio = rng.standard_normal(n) * spec.background_rms
    occupied: dict[str, list[tuple[float, float]]] = {}
    events: EventList = []
    for ev in spec.events:
        length = ev.length
        if length is None:
            length = rng.uniform(*CLASS_RECIPES[ev.kind]["length"])
        length = min(length, spec.duration)
        onset = ev.onset
        if onset is None:
            onset = _place(rng, spec.duration, length, occupied.setdefault(ev.kind, []))
        else:
            if onset + length > spec.duration + 1e-9:
                raise PackingError(f"pinned event ({onset}, {onset + length}) exceeds the clip")
            occupied.setdefault(ev.kind, [])
        occupied[ev.kind].append((onset, onset + length))
        wave = render_event(ev.kind, length, rng, sample_rate)
        target_rms = spec.background_rms * 10.0 ** (ev.snr_db / 20.0)
        start = int(round(onset * sample_rate))
        stop = min(start + len(wave), n)
        audio[start:stop] += wave[: stop - start] * target_rms
        events.append(Event(ev.kind, onset, onset + length))
    peak = np.abs(audio).max()
    if peak > 1.0:
        audio /= peak  # keep samples in [-1, 1]; relative levels are preserved
    events.sort(key=lambda e: (e.onset, e.label))
    tags = sorted({e.label for e in events})
    return Waveform(audio.astype(np.float32), sample_rate), events, tags
