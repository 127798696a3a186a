"""Post-processing, event decoding, and PSDS-style scoring.

Scenario 1 (median filter, strict intersection criteria) stresses
localization; scenario 2 (maximum filter, loose criteria with cross-trigger
weighting) stresses class discrimination. Scores are normalized areas under
the effective-TPR vs effective-FPR curve built from per-class max-envelope
staircases over a fixed threshold grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EvalError
from .labels import Event, EventList

DEFAULT_THRESHOLDS = tuple((np.arange(1, 51) / 51.0).tolist())


@dataclass
class PSDSParams:
    dtc: float = 0.7
    gtc: float = 0.7
    alpha_ct: float = 0.0
    alpha_st: float = 1.0
    max_efpr: float = 100.0  # per hour

    def validate(self) -> None:
        if not (0.0 < self.dtc <= 1.0 and 0.0 < self.gtc <= 1.0):
            raise EvalError("intersection criteria must lie in (0, 1]")
        if self.max_efpr <= 0:
            raise EvalError("max_efpr must be positive")


SCENARIO1 = PSDSParams(dtc=0.7, gtc=0.7, alpha_ct=0.0, alpha_st=1.0)
SCENARIO2 = PSDSParams(dtc=0.1, gtc=0.1, alpha_ct=0.5, alpha_st=1.0)


@dataclass
class EvalConfig:
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    median_window: int = 7
    maximum_window: int = 21
    filter_on_probabilities: bool = True  # else filter the binarized mask per threshold
    f1_threshold: float = 0.5
    f1_collar: float = 0.2
    f1_offset_collar_frac: float = 0.2
    psds1: PSDSParams = field(default_factory=lambda: PSDSParams(0.7, 0.7, 0.0, 1.0))
    psds2: PSDSParams = field(default_factory=lambda: PSDSParams(0.1, 0.1, 0.5, 1.0))

    def validate(self) -> None:
        t = np.asarray(self.thresholds)
        if len(t) < 2 or (np.diff(t) <= 0).any() or t[0] <= 0 or t[-1] >= 1:
            raise EvalError("threshold grid must be strictly increasing inside (0, 1)")
        for win in (self.median_window, self.maximum_window):
            if win < 1 or win % 2 == 0:
                raise EvalError(f"filter windows must be odd and >= 1, got {win}")
        self.psds1.validate()
        self.psds2.validate()


# ---------------------------------------------------------------------------
# filters and decoding
# ---------------------------------------------------------------------------


def _per_class_windows(windows, n_classes: int) -> list[int]:
    if np.isscalar(windows):
        windows = [int(windows)] * n_classes
    windows = [int(w) for w in windows]
    if len(windows) != n_classes:
        raise EvalError(f"need one filter window per class ({n_classes}), got {len(windows)}")
    for w in windows:
        if w < 1 or w % 2 == 0:
            raise EvalError(f"filter window must be odd and >= 1, got {w}")
    return windows


def median_filter(probs: np.ndarray, windows) -> np.ndarray:
    """Sliding median per class with edge replication."""
    wins = _per_class_windows(windows, probs.shape[1])
    out = np.empty_like(probs)
    for k, win in enumerate(wins):
        col = np.ascontiguousarray(probs[:, k])
        out[:, k] = col if win == 1 else kernels.median_filter_1d(col, win)
    return out


def maximum_filter(probs: np.ndarray, windows) -> np.ndarray:
    """Sliding maximum per class with edge replication."""
    wins = _per_class_windows(windows, probs.shape[1])
    out = np.empty_like(probs)
    for k, win in enumerate(wins):
        col = np.ascontiguousarray(probs[:, k])
        out[:, k] = col if win == 1 else kernels.maximum_filter_1d(col, win)
    return out


def decode_events(
    probs: np.ndarray, threshold: float, frame_rate: float, classes: list[str]
) -> EventList:
    """Maximal runs of probability >= threshold become events (seconds)."""
    if not 0.0 < threshold < 1.0:
        raise EvalError(f"threshold must be in (0, 1), got {threshold}")
    events: EventList = []
    for k, name in enumerate(classes):
        starts, ends = kernels.find_runs(probs[:, k] >= threshold)
        for s, e in zip(starts, ends):
            events.append(Event(name, s / frame_rate, e / frame_rate, confidence=threshold))
    events.sort(key=lambda ev: (ev.onset, ev.label))
    return events


# ---------------------------------------------------------------------------
# matching and PSDS
# ---------------------------------------------------------------------------


@dataclass
class MatchCounts:
    tp: np.ndarray  # (K,)
    fp: np.ndarray  # (K,)
    ct: np.ndarray  # (K, K) cross-triggers: det class -> ref class
    n_ref: np.ndarray  # (K,)

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(
            self.tp + other.tp, self.fp + other.fp, self.ct + other.ct, self.n_ref + other.n_ref
        )


def _event_arrays(events: EventList, class_index: dict[str, int]):
    on = np.array([e.onset for e in events], dtype=np.float64)
    off = np.array([e.offset for e in events], dtype=np.float64)
    cls = np.array([class_index[e.label] for e in events], dtype=np.int64)
    return on, off, cls


def match_detections(
    dets_by_clip: dict[str, EventList],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    dtc: float,
    gtc: float,
) -> MatchCounts:
    """Intersection-criteria TP/FP/cross-trigger counts over a clip universe.

    Detections and references must share clip ids (a detection for an
    unknown clip is a contract violation).
    """
    unknown = set(dets_by_clip) - set(refs_by_clip)
    if unknown:
        raise EvalError(f"detections reference unknown clip ids: {sorted(unknown)[:3]}")
    class_index = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    total = MatchCounts(
        np.zeros(k, np.int64), np.zeros(k, np.int64), np.zeros((k, k), np.int64), np.zeros(k, np.int64)
    )
    for clip_id, refs in refs_by_clip.items():
        for ev in refs:
            if ev.label not in class_index:
                raise EvalError(f"reference label {ev.label!r} outside the class vocabulary")
        d_on, d_off, d_cls = _event_arrays(dets_by_clip.get(clip_id, []), class_index)
        r_on, r_off, r_cls = _event_arrays(refs, class_index)
        tp, fp, ct = kernels.match_counts(d_on, d_off, d_cls, r_on, r_off, r_cls, k, dtc, gtc)
        total.tp += tp
        total.fp += fp
        total.ct += ct
        total.n_ref += np.bincount(r_cls, minlength=k)
    return total


def _envelope(points: list[tuple[float, float]], grid: np.ndarray) -> np.ndarray:
    """Right-continuous max staircase through (efpr, tpr) operating points."""
    values = np.zeros_like(grid)
    for efpr, tpr in points:
        values[grid >= efpr] = np.maximum(values[grid >= efpr], tpr)
    return values


def psds_from_counts(
    counts_per_threshold: list[MatchCounts], total_hours: float, params: PSDSParams
) -> tuple[float, list[tuple[float, float]]]:
    """Normalized area under the effective ROC built from per-threshold counts.

    Returns (score, per-threshold (eFPR, eTPR) summary points).
    """
    params.validate()
    if total_hours <= 0:
        raise EvalError("reference set has zero duration")
    n_ref = counts_per_threshold[0].n_ref
    if n_ref.sum() == 0:
        raise EvalError("reference set has no events")
    k = len(n_ref)
    active = n_ref > 0  # classes with no references cannot define a TP ratio
    per_class_points: dict[int, list[tuple[float, float]]] = {c: [] for c in range(k)}
    summary = []
    for counts in counts_per_threshold:
        tpr = np.zeros(k)
        tpr[active] = counts.tp[active] / n_ref[active]
        fp_rate = counts.fp / total_hours
        if k > 1:
            ct_rate = counts.ct.sum(axis=1) / (k - 1) / total_hours
        else:
            ct_rate = np.zeros(k)
        efpr = fp_rate + params.alpha_ct * ct_rate
        for c in range(k):
            if active[c]:
                per_class_points[c].append((float(efpr[c]), float(tpr[c])))
        etpr = tpr[active].mean() - params.alpha_st * tpr[active].std()
        summary.append((float(efpr[active].mean()), float(max(etpr, 0.0))))
    grid_vals = sorted(
        {0.0, params.max_efpr}
        | {e for pts in per_class_points.values() for e, _ in pts if e <= params.max_efpr}
    )
    grid = np.asarray(grid_vals)
    env = np.stack([_envelope(per_class_points[c], grid) for c in range(k) if active[c]])
    etpr_curve = env.mean(axis=0) - params.alpha_st * env.std(axis=0)
    etpr_curve = np.maximum(etpr_curve, 0.0)
    widths = np.diff(grid)
    area = float((etpr_curve[:-1] * widths).sum())
    return min(area / params.max_efpr, 1.0), summary


def psds(
    dets_per_threshold: list[dict[str, EventList]],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    clip_durations: dict[str, float],
    params: PSDSParams,
) -> tuple[float, list[tuple[float, float]]]:
    """Score detection sets decoded at >= 2 operating points."""
    if len(dets_per_threshold) < 2:
        raise EvalError("PSDS needs at least two operating points")
    total_hours = sum(clip_durations.values()) / 3600.0
    counts = [
        match_detections(dets, refs_by_clip, classes, params.dtc, params.gtc)
        for dets in dets_per_threshold
    ]
    return psds_from_counts(counts, total_hours, params)


# ---------------------------------------------------------------------------
# event-based F1 (secondary metric)
# ---------------------------------------------------------------------------


def event_f1(
    dets_by_clip: dict[str, EventList],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    collar: float = 0.2,
    offset_collar_frac: float = 0.2,
) -> tuple[float, dict[str, float]]:
    """Collar-based event matching (greedy one-to-one, onset + offset collars)."""
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    for clip_id, refs in refs_by_clip.items():
        dets = dets_by_clip.get(clip_id, [])
        for c in classes:
            r = sorted([e for e in refs if e.label == c], key=lambda e: e.onset)
            d = sorted([e for e in dets if e.label == c], key=lambda e: e.onset)
            used = [False] * len(d)
            for ref in r:
                off_collar = max(collar, offset_collar_frac * ref.duration)
                matched = False
                for i, det in enumerate(d):
                    if used[i]:
                        continue
                    if abs(det.onset - ref.onset) <= collar and abs(det.offset - ref.offset) <= off_collar:
                        used[i] = True
                        matched = True
                        break
                if matched:
                    tp[c] += 1
                else:
                    fn[c] += 1
            fp[c] += used.count(False)
    per_class = {}
    for c in classes:
        denom = 2 * tp[c] + fp[c] + fn[c]
        per_class[c] = 2 * tp[c] / denom if denom else 0.0
    tp_all, fp_all, fn_all = sum(tp.values()), sum(fp.values()), sum(fn.values())
    denom = 2 * tp_all + fp_all + fn_all
    return (2 * tp_all / denom if denom else 0.0), per_class


# ---------------------------------------------------------------------------
# full evaluation of a model or of decoded detections
# ---------------------------------------------------------------------------


def _predict_probs(model, dataset, feat_cfg, indices) -> dict[str, np.ndarray]:
    probs = {}
    for i in indices:
        rec = dataset.records[i]
        frame, _, _ = model.forward(dataset.mel(i, feat_cfg))
        probs[rec.clip_id] = frame.data.copy()
    return probs


def _scenario_scores(
    probs_by_clip: dict[str, np.ndarray],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    durations: dict[str, float],
    frame_rate: float,
    cfg: EvalConfig,
    scenario: str,
):
    params = cfg.psds1 if scenario == "scenario1" else cfg.psds2
    window = cfg.median_window if scenario == "scenario1" else cfg.maximum_window
    filt = median_filter if scenario == "scenario1" else maximum_filter
    dets_per_threshold = []
    filtered = {cid: filt(p, window) for cid, p in probs_by_clip.items()}
    for thr in cfg.thresholds:
        dets = {}
        for cid in probs_by_clip:
            if cfg.filter_on_probabilities:
                dets[cid] = decode_events(filtered[cid], thr, frame_rate, classes)
            else:
                mask = (probs_by_clip[cid] >= thr).astype(np.float32)
                dets[cid] = decode_events(filt(mask, window), 0.5, frame_rate, classes)
        dets_per_threshold.append(dets)
    score, roc = psds(dets_per_threshold, refs_by_clip, classes, durations, params)
    return score, roc, filtered


def evaluate_probs(
    probs_by_clip: dict[str, np.ndarray],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    durations: dict[str, float],
    frame_rate: float,
    cfg: EvalConfig,
    scenarios=("scenario1", "scenario2"),
    out_dir: str | Path | None = None,
) -> dict:
    """Score frame probabilities; returns the metrics report dictionary."""
    cfg.validate()
    report = {
        "psds1": None,
        "psds2": None,
        "f1_event": None,
        "per_class": {},
        "metadata": {
            "scenarios": {},
            "thresholds": len(cfg.thresholds),
            "kernel_impl": kernels.IMPL,
        },
    }
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    scenario1_filtered = None
    for scenario in scenarios:
        score, roc, filtered = _scenario_scores(
            probs_by_clip, refs_by_clip, classes, durations, frame_rate, cfg, scenario
        )
        key = "psds1" if scenario == "scenario1" else "psds2"
        report[key] = score
        report["metadata"]["scenarios"][scenario] = {
            "filter": "median" if scenario == "scenario1" else "maximum",
            "window": cfg.median_window if scenario == "scenario1" else cfg.maximum_window,
        }
        if scenario == "scenario1":
            scenario1_filtered = filtered
        if out is not None:
            with open(out / f"roc_{scenario}.csv", "w") as fh:
                fh.write("threshold,eTPR,eFPR\n")
                for thr, (efpr, etpr) in zip(cfg.thresholds, roc):
                    fh.write(f"{thr},{etpr},{efpr}\n")
    # event F1 at the single default operating point, on scenario-1 filtering
    f1_src = scenario1_filtered or {
        cid: median_filter(p, cfg.median_window) for cid, p in probs_by_clip.items()
    }
    dets = {
        cid: decode_events(p, cfg.f1_threshold, frame_rate, classes) for cid, p in f1_src.items()
    }
    f1, per_class = event_f1(
        dets, refs_by_clip, classes, cfg.f1_collar, cfg.f1_offset_collar_frac
    )
    report["f1_event"] = f1
    report["per_class"] = {c: {"f1": per_class[c]} for c in classes}
    if out is not None:
        from .labels import save_labels_tsv

        save_labels_tsv(out / "detections.tsv", {f"{cid}.wav": evs for cid, evs in dets.items()})
        with open(out / "metrics.json", "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def evaluate_model(
    model,
    dataset,
    feat_cfg,
    cfg: EvalConfig,
    scenarios=("scenario1", "scenario2"),
    out_dir=None,
) -> dict:
    """Run the model over the strong-labeled subset and score it."""
    if model.n_classes != len(dataset.classes):
        raise EvalError(
            f"checkpoint has {model.n_classes} classes, dataset has {len(dataset.classes)}"
        )
    indices = dataset.indices("strong")
    if not indices:
        raise EvalError("dataset has no strong-labeled clips to evaluate")
    probs = _predict_probs(model, dataset, feat_cfg, indices)
    refs = {dataset.records[i].clip_id: dataset.records[i].events for i in indices}
    durations = {dataset.records[i].clip_id: dataset.records[i].duration for i in indices}
    frame_rate = dataset.frame_rate(feat_cfg)
    return evaluate_probs(
        probs, refs, dataset.classes, durations, frame_rate, cfg, scenarios, out_dir
    )


def evaluate_detections_tsv(
    dets_by_clip: dict[str, EventList],
    refs_by_clip: dict[str, EventList],
    classes: list[str],
    durations: dict[str, float],
    cfg: EvalConfig,
) -> dict:
    """Score an externally produced detection list (confidence-thresholded)."""
    cfg.validate()
    dets_per_threshold = []
    for thr in cfg.thresholds:
        dets_per_threshold.append(
            {
                cid: [e for e in evs if (e.confidence is None or e.confidence >= thr)]
                for cid, evs in dets_by_clip.items()
            }
        )
    report = {}
    for key, params in (("psds1", cfg.psds1), ("psds2", cfg.psds2)):
        score, _ = psds(dets_per_threshold, refs_by_clip, classes, durations, params)
        report[key] = score
    f1, per_class = event_f1(dets_by_clip, refs_by_clip, classes, cfg.f1_collar)
    report["f1_event"] = f1
    report["per_class"] = {c: {"f1": per_class[c]} for c in classes}
    return report
