"""In-scope augmentations: mixup and circular time shift."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .labels import Event, EventList


def draw_mixup_coefficient(rng: np.random.Generator, alpha: float = 0.2) -> float:
    """Beta(alpha, alpha) draw, the usual mixup coefficient distribution."""
    return float(rng.beta(alpha, alpha))


def mixup(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * a + (1 - lam) * b; same coefficient is used
    for features and for their label vectors."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"mixup shapes differ: {a.shape} vs {b.shape}")
    return (lam * a + (1.0 - lam) * b).astype(a.dtype)


def _merge_abutting(events: EventList) -> EventList:
    """Merge same-class events that touch exactly (wrap pieces re-joining)."""
    merged: EventList = []
    for ev in sorted(events, key=lambda e: (e.label, e.onset)):
        last = merged[-1] if merged else None
        if last is not None and last.label == ev.label and abs(last.offset - ev.onset) < 1e-9:
            merged[-1] = Event(last.label, last.onset, ev.offset, last.confidence)
        else:
            merged.append(ev)
    merged.sort(key=lambda e: (e.onset, e.label))
    return merged


def time_shift_events(events: EventList, shift_s: float, duration: float) -> EventList:
    """Shift onsets/offsets modulo the clip length, splitting at the wrap."""
    out: EventList = []
    for ev in events:
        onset = (ev.onset + shift_s) % duration
        offset = onset + ev.duration
        if offset <= duration + 1e-9:
            out.append(Event(ev.label, onset, min(offset, duration), ev.confidence))
        else:
            out.append(Event(ev.label, onset, duration, ev.confidence))
            out.append(Event(ev.label, 0.0, offset - duration, ev.confidence))
    return _merge_abutting(out)


def time_shift(
    mel: np.ndarray, events: EventList, shift_frames: int, frame_rate: float
) -> tuple[np.ndarray, EventList]:
    """Circularly shift mel frames and the strong labels consistently."""
    n = mel.shape[0]
    if abs(shift_frames) >= n:
        raise ShapeError(f"shift of {shift_frames} frames exceeds clip length {n}")
    shifted = np.roll(mel, shift_frames, axis=0)
    duration = n / frame_rate
    return shifted, time_shift_events(events, shift_frames / frame_rate, duration)
