"""Hot inner-loop kernels: numba-jitted with a pure-numpy fallback.

The jitted path is selected at import time unless the environment variable
``SEDLAB_NO_NUMBA=1`` is set (or numba is unavailable), in which case the
numpy implementations are used. Both paths compute identical results; the
equality is covered by tests and ``benchmarks/bench_kernels.py`` compares
their speed.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("SEDLAB_NO_NUMBA", "").strip().lower()
_WANT_NUMBA = _FLAG not in ("1", "true", "yes")

try:  # pragma: no cover - exercised via env flag in tests
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by SEDLAB_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # fall back to numpy implementations
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _pad_edges(x: np.ndarray, half: int) -> np.ndarray:
    return np.pad(x, (half, half), mode="edge")


def median_filter_1d_numpy(x: np.ndarray, win: int) -> np.ndarray:
    """Sliding median with edge replication. ``win`` must be odd."""
    if win == 1:
        return x.copy()
    half = win // 2
    padded = _pad_edges(x, half)
    view = np.lib.stride_tricks.sliding_window_view(padded, win)
    return np.median(view, axis=-1).astype(x.dtype, copy=False)


def maximum_filter_1d_numpy(x: np.ndarray, win: int) -> np.ndarray:
    """Sliding maximum with edge replication. ``win`` must be odd."""
    if win == 1:
        return x.copy()
    half = win // 2
    padded = _pad_edges(x, half)
    view = np.lib.stride_tricks.sliding_window_view(padded, win)
    return view.max(axis=-1).astype(x.dtype, copy=False)


def find_runs_numpy(active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximal runs of True. Returns (starts, ends) with frames [start, end)."""
    a = np.asarray(active, dtype=bool)
    if a.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    edges = np.diff(a.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if a[0]:
        starts = np.concatenate(([0], starts))
    if a[-1]:
        ends = np.concatenate((ends, [a.size]))
    return starts.astype(np.int64), ends.astype(np.int64)


def _union_overlap(lo: float, hi: float, starts: np.ndarray, ends: np.ndarray) -> float:
    """Length of [lo, hi) covered by the union of the given intervals."""
    clipped = []
    for s, e in zip(starts, ends):
        s2, e2 = max(s, lo), min(e, hi)
        if e2 > s2:
            clipped.append((s2, e2))
    clipped.sort()
    total = 0.0
    cur_s = cur_e = None
    for s, e in clipped:
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def match_counts_numpy(
    det_on: np.ndarray,
    det_off: np.ndarray,
    det_cls: np.ndarray,
    ref_on: np.ndarray,
    ref_off: np.ndarray,
    ref_cls: np.ndarray,
    n_classes: int,
    dtc: float,
    gtc: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Intersection-criteria matching for one clip at one operating point.

    A detection passes the tolerance criterion when the union of its
    same-class ground-truth overlaps covers at least ``dtc`` of its duration.
    A ground-truth event counts as a true positive when criterion-passing
    detections cover at least ``gtc`` of it. Failing detections are false
    positives, attributed as cross-triggers to every other class whose
    ground truth they touch.

    Returns (tp[c], fp[c], ct[c, other]) as int64 arrays.
    """
    tp = np.zeros(n_classes, dtype=np.int64)
    fp = np.zeros(n_classes, dtype=np.int64)
    ct = np.zeros((n_classes, n_classes), dtype=np.int64)

    dtc_ok = np.zeros(len(det_on), dtype=bool)
    for i in range(len(det_on)):
        c = det_cls[i]
        dur = det_off[i] - det_on[i]
        same = ref_cls == c
        inter = _union_overlap(det_on[i], det_off[i], ref_on[same], ref_off[same])
        if dur > 0 and inter >= dtc * dur:
            dtc_ok[i] = True
        else:
            fp[c] += 1
            for c2 in range(n_classes):
                if c2 == c:
                    continue
                other = ref_cls == c2
                touched = np.any(
                    (np.minimum(ref_off[other], det_off[i]) - np.maximum(ref_on[other], det_on[i]))
                    > 0
                )
                if touched:
                    ct[c, c2] += 1

    for j in range(len(ref_on)):
        c = ref_cls[j]
        dur = ref_off[j] - ref_on[j]
        picked = dtc_ok & (det_cls == c)
        covered = _union_overlap(ref_on[j], ref_off[j], det_on[picked], det_off[picked])
        if dur > 0 and covered >= gtc * dur:
            tp[c] += 1
    return tp, fp, ct


# ---------------------------------------------------------------------------
# numba implementations (compiled lazily, cached on disk)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _median_filter_1d_jit(x, win):  # pragma: no cover - jitted
        n = x.shape[0]
        out = np.empty_like(x)
        half = win // 2
        buf = np.empty(win, dtype=x.dtype)
        for t in range(n):
            for k in range(win):
                idx = t - half + k
                if idx < 0:
                    idx = 0
                elif idx >= n:
                    idx = n - 1
                buf[k] = x[idx]
            out[t] = np.median(buf)
        return out

    @njit(cache=True)
    def _maximum_filter_1d_jit(x, win):  # pragma: no cover - jitted
        n = x.shape[0]
        out = np.empty_like(x)
        half = win // 2
        for t in range(n):
            lo = t - half
            if lo < 0:
                lo = 0
            hi = t + half + 1
            if hi > n:
                hi = n
            m = x[lo]
            for idx in range(lo, hi):
                if x[idx] > m:
                    m = x[idx]
            out[t] = m
        return out

    @njit(cache=True)
    def _find_runs_jit(active):  # pragma: no cover - jitted
        n = active.shape[0]
        starts = np.empty(n // 2 + 1, dtype=np.int64)
        ends = np.empty(n // 2 + 1, dtype=np.int64)
        count = 0
        inside = False
        for t in range(n):
            if active[t] and not inside:
                starts[count] = t
                inside = True
            elif not active[t] and inside:
                ends[count] = t
                count += 1
                inside = False
        if inside:
            ends[count] = n
            count += 1
        return starts[:count], ends[:count]

    @njit(cache=True)
    def _union_overlap_jit(lo, hi, starts, ends, mask):  # pragma: no cover
        m = starts.shape[0]
        cs = np.empty(m, dtype=np.float64)
        ce = np.empty(m, dtype=np.float64)
        cnt = 0
        for j in range(m):
            if not mask[j]:
                continue
            s = starts[j] if starts[j] > lo else lo
            e = ends[j] if ends[j] < hi else hi
            if e > s:
                cs[cnt] = s
                ce[cnt] = e
                cnt += 1
        # insertion sort by start
        for a in range(1, cnt):
            ks, ke = cs[a], ce[a]
            b = a - 1
            while b >= 0 and cs[b] > ks:
                cs[b + 1] = cs[b]
                ce[b + 1] = ce[b]
                b -= 1
            cs[b + 1] = ks
            ce[b + 1] = ke
        total = 0.0
        cur_s = 0.0
        cur_e = -1.0
        started = False
        for a in range(cnt):
            if not started or cs[a] > cur_e:
                if started:
                    total += cur_e - cur_s
                cur_s = cs[a]
                cur_e = ce[a]
                started = True
            elif ce[a] > cur_e:
                cur_e = ce[a]
        if started:
            total += cur_e - cur_s
        return total

    @njit(cache=True)
    def _match_counts_jit(
        det_on, det_off, det_cls, ref_on, ref_off, ref_cls, n_classes, dtc, gtc
    ):  # pragma: no cover - jitted
        nd = det_on.shape[0]
        nr = ref_on.shape[0]
        tp = np.zeros(n_classes, dtype=np.int64)
        fp = np.zeros(n_classes, dtype=np.int64)
        ct = np.zeros((n_classes, n_classes), dtype=np.int64)
        dtc_ok = np.zeros(nd, dtype=np.bool_)
        mask = np.empty(nr, dtype=np.bool_)
        for i in range(nd):
            c = det_cls[i]
            dur = det_off[i] - det_on[i]
            for j in range(nr):
                mask[j] = ref_cls[j] == c
            inter = _union_overlap_jit(det_on[i], det_off[i], ref_on, ref_off, mask)
            if dur > 0 and inter >= dtc * dur:
                dtc_ok[i] = True
            else:
                fp[c] += 1
                for c2 in range(n_classes):
                    if c2 == c:
                        continue
                    for j in range(nr):
                        if ref_cls[j] == c2:
                            lo = det_on[i] if det_on[i] > ref_on[j] else ref_on[j]
                            hi = det_off[i] if det_off[i] < ref_off[j] else ref_off[j]
                            if hi > lo:
                                ct[c, c2] += 1
                                break
        dmask = np.empty(nd, dtype=np.bool_)
        for j in range(nr):
            c = ref_cls[j]
            dur = ref_off[j] - ref_on[j]
            for i in range(nd):
                dmask[i] = dtc_ok[i] and det_cls[i] == c
            covered = _union_overlap_jit(ref_on[j], ref_off[j], det_on, det_off, dmask)
            if dur > 0 and covered >= gtc * dur:
                tp[c] += 1
        return tp, fp, ct

    def median_filter_1d_numba(x: np.ndarray, win: int) -> np.ndarray:
        return _median_filter_1d_jit(np.ascontiguousarray(x), win)

    def maximum_filter_1d_numba(x: np.ndarray, win: int) -> np.ndarray:
        return _maximum_filter_1d_jit(np.ascontiguousarray(x), win)

    def find_runs_numba(active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _find_runs_jit(np.ascontiguousarray(active, dtype=np.bool_))

    def match_counts_numba(det_on, det_off, det_cls, ref_on, ref_off, ref_cls, n_classes, dtc, gtc):
        return _match_counts_jit(
            np.ascontiguousarray(det_on, dtype=np.float64),
            np.ascontiguousarray(det_off, dtype=np.float64),
            np.ascontiguousarray(det_cls, dtype=np.int64),
            np.ascontiguousarray(ref_on, dtype=np.float64),
            np.ascontiguousarray(ref_off, dtype=np.float64),
            np.ascontiguousarray(ref_cls, dtype=np.int64),
            n_classes,
            dtc,
            gtc,
        )

else:
    median_filter_1d_numba = None
    maximum_filter_1d_numba = None
    find_runs_numba = None
    match_counts_numba = None


IMPL = "numba" if HAVE_NUMBA else "numpy"

if HAVE_NUMBA:
    median_filter_1d = median_filter_1d_numba
    maximum_filter_1d = maximum_filter_1d_numba
    find_runs = find_runs_numba
    match_counts = match_counts_numba
else:
    median_filter_1d = median_filter_1d_numpy
    maximum_filter_1d = maximum_filter_1d_numpy
    find_runs = find_runs_numpy
    match_counts = match_counts_numpy
