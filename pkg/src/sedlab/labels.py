"""Event labels: the in-memory form, DCASE-style TSV adapters, rasterization."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LabelsError

TSV_HEADER = ("filename", "onset", "offset", "event_label")


@dataclass(frozen=True)
class Event:
    label: str
    onset: float
    offset: float
    confidence: float | None = None

    def __post_init__(self):
        if not self.onset < self.offset:
            raise LabelsError(f"event onset {self.onset} must precede offset {self.offset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


EventList = list[Event]


def validate_events(events: EventList, clip_duration: float, vocabulary=None) -> None:
    for ev in events:
        if ev.onset < 0 or ev.offset > clip_duration + 1e-9:
            raise LabelsError(f"event {ev} exceeds clip duration {clip_duration}")
        if vocabulary is not None and ev.label not in vocabulary:
            raise LabelsError(f"event label {ev.label!r} not in vocabulary {sorted(vocabulary)}")


def load_labels_tsv(path: str | Path) -> dict[str, EventList]:
    """Read a tab-separated label file into {filename: events}.

    Columns: filename, onset, offset, event_label, with an optional trailing
    confidence column and an optional header row.
    """
    path = Path(path)
    out: dict[str, EventList] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and [c.strip().lower() for c in row[:4]] == list(TSV_HEADER):
                continue
            if len(row) not in (4, 5):
                raise LabelsError(f"{path}:{lineno}: expected 4 or 5 columns, got {len(row)}")
            fname, onset_s, offset_s, label = (c.strip() for c in row[:4])
            try:
                onset, offset = float(onset_s), float(offset_s)
            except ValueError as exc:
                raise LabelsError(f"{path}:{lineno}: unparsable onset/offset {row[1:3]}") from exc
            confidence = None
            if len(row) == 5:
                try:
                    confidence = float(row[4])
                except ValueError as exc:
                    raise LabelsError(f"{path}:{lineno}: unparsable confidence {row[4]!r}") from exc
            try:
                event = Event(label, onset, offset, confidence)
            except LabelsError as exc:
                raise LabelsError(f"{path}:{lineno}: {exc}") from exc
            out.setdefault(fname, []).append(event)
    return out


def save_labels_tsv(path: str | Path, per_clip: dict[str, EventList]) -> None:
    """Write events grouped by filename; confidence column only if present."""
    any_conf = any(ev.confidence is not None for evs in per_clip.values() for ev in evs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        header = list(TSV_HEADER) + (["confidence"] if any_conf else [])
        writer.writerow(header)
        for fname in sorted(per_clip):
            for ev in sorted(per_clip[fname], key=lambda e: (e.onset, e.label)):
                row = [fname, repr(ev.onset), repr(ev.offset), ev.label]
                if any_conf:
                    row.append("" if ev.confidence is None else repr(ev.confidence))
                writer.writerow(row)


def rasterize(
    events: EventList, frame_rate: float, n_frames: int, class_index: dict[str, int]
) -> np.ndarray:
    """Frame-level (T, K) activity grid; frame t covers [t, t+1) / frame_rate."""
    grid = np.zeros((n_frames, len(class_index)), dtype=np.float32)
    for ev in events:
        k = class_index[ev.label]
        start = int(round(ev.onset * frame_rate))
        stop = int(round(ev.offset * frame_rate))
        grid[max(0, start) : min(n_frames, max(stop, start + 1)), k] = 1.0
    return grid


def weak_vector(labels, class_index: dict[str, int]) -> np.ndarray:
    """Clip-level multi-hot tag vector from tag names or events."""
    vec = np.zeros(len(class_index), dtype=np.float32)
    for item in labels:
        name = item.label if isinstance(item, Event) else item
        vec[class_index[name]] = 1.0
    return vec
