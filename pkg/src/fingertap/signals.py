"""Finger-tapping angle and wrist-motion time series.

The pipeline for one recording is

    build_angle_series -> interpolate_missing -> extract_largest_visible_segment
        -> detect_peaks -> trim_first_last_tap

and ``process_recording`` runs it end to end, carrying the wrist-motion deltas along
for the frames that survive trimming. Missing frames are marked with the sentinel -1.0.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import INDEX_TIP, THUMB_CMC, THUMB_TIP, WRIST, SCORE_THRESHOLD, VideoRecording, select_target_hand

log = logging.getLogger(__name__)

MISSING = -1.0


class DegenerateGeometry(ValueError):
    """Two key points coincide, so an angle or a normalization is undefined."""


class EmptySignal(ValueError):
    """No frame of the recording contains the target hand."""


@dataclass(frozen=True)
class AngleSeries:
    """Per-frame finger-tapping angle in degrees, -1.0 where the hand is missing.

    ``frames`` holds each sample's position in the source recording and
    ``interpolated`` flags samples filled in by interpolate_missing.
    """
    values: np.ndarray
    fps: float
    frames: np.ndarray = None
    interpolated: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.frames is None:
            object.__setattr__(self, "frames", np.arange(len(values)))
        if self.interpolated is None:
            object.__setattr__(self, "interpolated", np.zeros(len(values), dtype=bool))
        if not self.fps > 0:
            raise ValueError("fps must be positive")

    def __len__(self):
        return len(self.values)

    @property
    def t_frame(self):
        return 1.0 / self.fps

    @property
    def missing(self):
        return self.values < 0

    def slice(self, start, stop):
        return AngleSeries(self.values[start:stop].copy(), self.fps,
                           self.frames[start:stop].copy(), self.interpolated[start:stop].copy())


@dataclass(frozen=True)
class WristSeries:
    """Per-frame wrist displacement relative to the previous frame.

    Entry i compares frame i with frame i-1, in units of the wrist to thumb-CMC distance.
    Entries where either frame lacks the hand are NaN and ``valid`` is False.
    """
    dx: np.ndarray
    dy: np.ndarray
    d: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class TapSegmentation:
    peak_indices: np.ndarray
    analysis_window: tuple
    valid: bool

    @property
    def n_peaks(self):
        return len(self.peak_indices)


@dataclass(frozen=True)
class PeakConfig:
    """Peak detector tunables.

    min_period_s bounds the fastest tapping rate (0.133 s is 7.5 taps/s). When
    ``min_drop`` is None the required peak-to-trough drop is
    ``drop_fraction * (P90 - P10)`` of the signal.
    """
    min_period_s: float = 0.133
    floor_percentile: float = 25.0
    drop_fraction: float = 0.25
    min_drop: float | None = None


# -- geometry -----------------------------------------------------------------

def compute_angle(wrist, thumb_tip, index_tip) -> float:
    """Angle in degrees at the wrist between the thumb-tip and index-tip directions.

    Evaluated as atan2(|u x v|, u . v), which equals arccos of the normalized dot
    product but stays accurate near 0 and 180 degrees.
    """
    w = np.asarray(wrist, dtype=float)
    u = np.asarray(thumb_tip, dtype=float) - w
    v = np.asarray(index_tip, dtype=float) - w
    if not (np.any(u != 0) and np.any(v != 0)):
        raise DegenerateGeometry("wrist coincides with a fingertip")
    cross = abs(u[0] * v[1] - u[1] * v[0])
    dot = u[0] * v[0] + u[1] * v[1]
    return min(180.0, max(0.0, math.degrees(math.atan2(cross, dot))))


def build_angle_series(rec: VideoRecording, threshold: float = SCORE_THRESHOLD) -> AngleSeries:
    values = np.full(rec.n_frames, MISSING)
    for i, fr in enumerate(rec.frames):
        hand = select_target_hand(fr, rec.hand, threshold)
        if hand is None:
            continue
        try:
            values[i] = compute_angle(hand.points[WRIST], hand.points[THUMB_TIP], hand.points[INDEX_TIP])
        except DegenerateGeometry:
            log.warning("%s: degenerate hand geometry at frame %d, treated as missing",
                        rec.video_id, fr.frame_index)
    return AngleSeries(values, rec.fps)


def compute_wrist_deltas(rec: VideoRecording, threshold: float = SCORE_THRESHOLD) -> WristSeries:
    n = rec.n_frames
    pos = np.full((n, 2), np.nan)
    for i, fr in enumerate(rec.frames):
        hand = select_target_hand(fr, rec.hand, threshold)
        if hand is None:
            continue
        wrist = hand.points[WRIST]
        scale = float(np.hypot(*(hand.points[THUMB_CMC] - wrist)))
        if scale == 0.0:
            log.warning("%s: wrist and thumb CMC coincide at frame %d", rec.video_id, fr.frame_index)
            continue
        pos[i] = wrist / scale
    dx = np.full(n, np.nan)
    dy = np.full(n, np.nan)
    diff = pos[1:] - pos[:-1]
    dx[1:] = np.abs(diff[:, 0])
    dy[1:] = np.abs(diff[:, 1])
    d = np.hypot(dx, dy)
    valid = np.isfinite(d)
    return WristSeries(dx, dy, d, valid)


# -- noise reduction ----------------------------------------------------------

def interpolate_missing(s: AngleSeries, neighbor_radius: int = 5, fit_radius: int = 15,
                        degree: int = 2) -> AngleSeries:
    """Fill missing samples whose neighborhood is mostly visible.

    A sentinel at i is filled when strictly more than half of the existing samples in
    [i - neighbor_radius, i + neighbor_radius] (excluding i) are visible. The fill value
    is a least-squares polynomial of ``degree`` through the visible samples within
    ``fit_radius``, clipped to their range. Decisions use the input's visibility, so
    filled values never feed later fills.
    """
    x = s.values
    n = len(x)
    visible = x >= 0
    if visible.all() or not visible.any():
        return s
    out = x.copy()
    filled = s.interpolated.copy()
    for i in np.flatnonzero(~visible):
        lo, hi = max(0, i - neighbor_radius), min(n, i + neighbor_radius + 1)
        n_neighbors = hi - lo - 1
        n_visible = int(visible[lo:hi].sum())
        if not 2 * n_visible > n_neighbors:
            continue
        lo, hi = max(0, i - fit_radius), min(n, i + fit_radius + 1)
        idx = np.arange(lo, hi)[visible[lo:hi]]
        y = x[idx]
        deg = min(degree, len(idx) - 1)
        coef = np.polynomial.polynomial.polyfit(idx - i, y, deg)
        out[i] = float(np.clip(coef[0], y.min(), y.max()))
        filled[i] = True
    return AngleSeries(out, s.fps, s.frames.copy(), filled)


def visible_runs(values):
    """(start, stop) of every maximal run of non-negative samples, in order."""
    visible = np.concatenate([[False], np.asarray(values) >= 0, [False]])
    edges = np.flatnonzero(np.diff(visible.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def extract_largest_visible_segment(s: AngleSeries) -> AngleSeries:
    runs = visible_runs(s.values)
    if not runs:
        raise EmptySignal("no visible frame in the angle series")
    # max() keeps the first of equally long runs
    start, stop = max(runs, key=lambda r: r[1] - r[0])
    return s.slice(start, stop)


# -- peaks --------------------------------------------------------------------

def _local_maxima(x):
    """Indices of strict local maxima; a flat-topped maximum reports its middle sample."""
    n = len(x)
    out = []
    i = 1
    while i < n - 1:
        if x[i] > x[i - 1]:
            j = i
            while j + 1 < n and x[j + 1] == x[i]:
                j += 1
            if j + 1 < n and x[j + 1] < x[i]:
                out.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return out


def min_separation(fps, cfg: PeakConfig = PeakConfig()) -> int:
    return max(1, int(round(fps * cfg.min_period_s)))


def detect_peaks(s: AngleSeries, cfg: PeakConfig = PeakConfig()) -> TapSegmentation:
    """Find one peak per tap.

    Candidates are local maxima above the ``floor_percentile`` of the signal. They are
    accepted greedily from the highest down (earlier index first on ties); a candidate is
    rejected if it falls within the minimum separation of an accepted peak, or if the
    signal does not dip by at least the required drop between it and either neighboring
    accepted peak.
    """
    x = np.asarray(s.values, dtype=float)
    if np.any(x < 0):
        raise ValueError("detect_peaks needs a sentinel-free series")
    n = len(x)
    if n < 3:
        return TapSegmentation(np.array([], dtype=int), (0, n), False)
    floor = np.percentile(x, cfg.floor_percentile)
    if cfg.min_drop is None:
        p10, p90 = np.percentile(x, [10, 90])
        drop = cfg.drop_fraction * (p90 - p10)
    else:
        drop = cfg.min_drop
    sep = min_separation(s.fps, cfg)
    candidates = [i for i in _local_maxima(x) if x[i] > floor]
    candidates.sort(key=lambda i: (-x[i], i))
    accepted = []
    for c in candidates:
        level = x[c] - drop
        k = bisect.bisect_left(accepted, c)
        if k > 0:
            left = accepted[k - 1]
            if c - left < sep or x[left:c + 1].min() > level:
                continue
        if k < len(accepted):
            right = accepted[k]
            if right - c < sep or x[c:right + 1].min() > level:
                continue
        accepted.insert(k, c)
    peaks = np.asarray(accepted, dtype=int)
    return TapSegmentation(peaks, (0, n), len(peaks) >= 4)


def trim_first_last_tap(s: AngleSeries, seg: TapSegmentation):
    """Keep the signal from the second peak through the second-to-last peak.

    With fewer than four peaks the input is returned unchanged and marked invalid.
    """
    peaks = np.asarray(seg.peak_indices, dtype=int)
    if len(peaks) < 4:
        return s, TapSegmentation(peaks, (0, len(s)), False)
    start, stop = int(peaks[1]), int(peaks[-2]) + 1
    return s.slice(start, stop), TapSegmentation(peaks[1:-1] - start, (start, stop), True)


# -- whole recording ----------------------------------------------------------

@dataclass
class ProcessedSignal:
    """Every intermediate of the signal pipeline for one recording."""
    raw: AngleSeries
    filled: AngleSeries
    segment: AngleSeries
    segmentation: TapSegmentation      # on ``segment``
    trimmed: AngleSeries
    trimmed_segmentation: TapSegmentation  # on ``trimmed``
    wrist: WristSeries                 # restricted to the trimmed frames
    meta: dict = field(default_factory=dict)


def process_recording(rec: VideoRecording, peak_cfg: PeakConfig = PeakConfig(),
                      threshold: float = SCORE_THRESHOLD) -> ProcessedSignal:
    raw = build_angle_series(rec, threshold)
    filled = interpolate_missing(raw)
    segment = extract_largest_visible_segment(filled)
    seg = detect_peaks(segment, peak_cfg)
    trimmed, tseg = trim_first_last_tap(segment, seg)
    wrist = compute_wrist_deltas(rec, threshold)
    # delta i pairs frames i-1 and i, so the first trimmed frame has no in-window partner
    frames = trimmed.frames
    keep = np.zeros(rec.n_frames, dtype=bool)
    keep[frames[1:]] = True
    mask = keep & wrist.valid
    windowed = WristSeries(wrist.dx[mask], wrist.dy[mask], wrist.d[mask], np.ones(mask.sum(), dtype=bool))
    meta = {"video_id": rec.video_id, "participant_id": rec.participant_id, "hand": rec.hand,
            "fps": rec.fps, "n_frames": rec.n_frames}
    return ProcessedSignal(raw, filled, segment, seg, trimmed, tseg, windowed, meta)


def write_debug_signal(proc: ProcessedSignal, path):
    """Dump (frame, angle, is_interpolated, is_peak) over the whole recording."""
    peaks = set(proc.segment.frames[proc.segmentation.peak_indices].tolist())
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "angle", "is_interpolated", "is_peak"])
        for i, (a, interp) in enumerate(zip(proc.filled.values, proc.filled.interpolated)):
            w.writerow([i, repr(float(a)), int(interp), int(i in peaks)])
