"""Kinematic and rhythm features of one finger-tapping recording.

The catalog holds 65 named features in a fixed order:

* speed, acceleration, period, frequency, amplitude x 7 aggregates (35)
* nine whole-signal rhythm features (aperiodicity, interruptions, freezing, period
  linearity and fit complexity, amplitude decrement)
* three auxiliary features (amplitude decrement slope, normalized period variance,
  total number of taps)
* wrist dx, dy, d x 6 aggregates, no entropy (18)

Per-tap features are NaN when fewer than four taps were detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stats
from .signals import AngleSeries, ProcessedSignal, TapSegmentation

CATALOG_VERSION = "ft65-1"

AGGREGATES = ("median", "iqr", "mean", "min", "max", "std", "entropy")
WRIST_AGGREGATES = AGGREGATES[:-1]
TAP_METRICS = ("speed", "acceleration", "period", "frequency", "amplitude")
WRIST_METRICS = ("wrist_dx", "wrist_dy", "wrist_d")
WHOLE_SIGNAL = ("aperiodicity", "n_interruptions", "n_freezing", "longest_freezing_s",
                "period_linearity_r2", "period_linearity_slope", "period_fit_complexity",
                "amp_decrement_end_minus_mean", "amp_decrement_end_minus_start")
AUXILIARY = ("amp_decrement_slope", "period_variance_norm", "total_taps")

FEATURE_NAMES = tuple(
    [f"{m}_{a}" for m in TAP_METRICS for a in AGGREGATES]
    + list(WHOLE_SIGNAL) + list(AUXILIARY)
    + [f"{m}_{a}" for m in WRIST_METRICS for a in WRIST_AGGREGATES]
)
assert len(FEATURE_NAMES) == 65

ENTROPY_BINS = 16
SPEED_THRESHOLD = 50.0       # deg/s
INTERRUPTION_MIN_S = 0.010   # run lasts at least this long
FREEZING_MIN_S = 0.020       # run lasts strictly longer than this
FIT_R2 = 0.9
MAX_FIT_DEGREE = 10

_NAN = float("nan")


@dataclass
class FeatureVector:
    video_id: str
    participant_id: str
    hand: str
    values: dict

    def as_array(self, names=FEATURE_NAMES):
        return np.array([self.values[n] for n in names], dtype=float)


# -- elementary metrics -------------------------------------------------------

def per_frame_kinematics(s: AngleSeries):
    """Absolute angular speed (deg/s) and acceleration (deg/s^2) between frames."""
    x = np.asarray(s.values, dtype=float)
    if len(x) < 3:
        raise ValueError("kinematics need at least 3 frames")
    v = np.abs(np.diff(x)) * s.fps
    a = np.abs(np.diff(v)) * s.fps
    return v, a


def per_tap_metrics(s: AngleSeries, seg: TapSegmentation):
    """Periods and frequencies between consecutive peaks, and the angle at every peak."""
    peaks = np.asarray(seg.peak_indices, dtype=int)
    if len(peaks) < 2:
        raise ValueError("per-tap metrics need at least 2 peaks")
    periods = np.diff(peaks) * s.t_frame
    return periods, 1.0 / periods, s.values[peaks].astype(float)


def shannon_entropy(x, bins: int = ENTROPY_BINS) -> float:
    """Entropy (nats) of the sample histogram over ``bins`` equal bins spanning [min, max]."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("entropy of an empty sample")
    lo, hi = x.min(), x.max()
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / x.size
    return float(-(p * np.log(p)).sum())


def aggregate_stats(x, bins: int = ENTROPY_BINS) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("aggregate of an empty sample")
    q25, q50, q75 = np.percentile(x, [25, 50, 75])
    return {"median": float(q50), "iqr": float(q75 - q25), "mean": float(x.mean()),
            "min": float(x.min()), "max": float(x.max()), "std": float(x.std()),
            "entropy": shannon_entropy(x, bins)}


def aperiodicity(s) -> float:
    """Entropy (nats) of the normalized power spectrum, DC excluded."""
    x = np.asarray(getattr(s, "values", s), dtype=float)
    if len(x) < 8:
        raise ValueError("aperiodicity needs at least 8 samples")
    power = np.abs(np.fft.rfft(x - x.mean()))[1:] ** 2
    total = power.sum()
    if total <= 0:
        return 0.0
    p = power[power > 0] / total
    return float(-(p * np.log(p)).sum())


def interruptions_and_freezing(speed, fps, threshold=SPEED_THRESHOLD,
                               interruption_s=INTERRUPTION_MIN_S, freezing_s=FREEZING_MIN_S):
    """Count slow-movement runs.

    A run is a maximal stretch of speed samples below ``threshold`` and lasts
    ``len(run) / fps`` seconds. Runs of at least ``interruption_s`` are interruptions,
    runs longer than ``freezing_s`` are freezes. Returns
    (n_interruptions, n_freezing, longest_freezing_s).
    """
    slow = np.concatenate([[False], np.asarray(speed) < threshold, [False]])
    edges = np.flatnonzero(np.diff(slow.astype(np.int8)))
    durations = (edges[1::2] - edges[::2]) / fps
    # a hair of slack so 0.010 s built from 1/fps steps is not lost to rounding
    n_int = int(np.sum(durations >= interruption_s - 1e-12))
    freezes = durations[durations > freezing_s + 1e-12]
    return n_int, int(freezes.size), float(freezes.max()) if freezes.size else 0.0


def period_linearity(periods):
    """(R^2, slope) of an OLS line through the periods against tap index."""
    y = np.asarray(periods, dtype=float)
    if len(y) < 3:
        return _NAN, _NAN
    x = np.arange(len(y), dtype=float)
    if np.ptp(y) == 0:
        return 1.0, 0.0
    slope, intercept = np.polyfit(x, y, 1)
    r2 = stats.r_squared(y, intercept + slope * x)
    return float(r2), float(slope)


def period_fit_complexity(periods, r2_threshold: float = FIT_R2, max_degree: int = MAX_FIT_DEGREE):
    """Smallest polynomial degree reaching R^2 >= threshold, or max_degree + 1 if none does."""
    y = np.asarray(periods, dtype=float)
    if len(y) < 3:
        return _NAN
    if np.ptp(y) == 0:
        return 1
    x = np.arange(len(y), dtype=float)
    for deg in range(1, min(max_degree, len(y) - 1) + 1):
        fit = np.polynomial.Polynomial.fit(x, y, deg)
        if stats.r_squared(y, fit(x)) >= r2_threshold:
            return deg
    return max_degree + 1


def amplitude_decrement(amplitudes):
    """(last - mean, last - first, OLS slope per tap) of the peak amplitudes."""
    a = np.asarray(amplitudes, dtype=float)
    if len(a) < 3:
        return _NAN, _NAN, _NAN
    slope = np.polyfit(np.arange(len(a), dtype=float), a, 1)[0]
    return float(a[-1] - a.mean()), float(a[-1] - a[0]), float(slope)


# -- assembly -----------------------------------------------------------------

def _put(values, prefix, aggs, x, names):
    if x is None or len(x) == 0:
        for n in names:
            values[f"{prefix}_{n}"] = _NAN
        return
    for n in names:
        values[f"{prefix}_{n}"] = aggs[n]


def assemble_feature_vector(proc: ProcessedSignal) -> FeatureVector:
    s, seg = proc.trimmed, proc.trimmed_segmentation
    values = {}
    v, a = per_frame_kinematics(s)
    for name, x in (("speed", v), ("acceleration", a)):
        _put(values, name, aggregate_stats(x), x, AGGREGATES)

    per_tap_ok = seg.valid and seg.n_peaks >= 2
    if per_tap_ok:
        periods, freqs, amps = per_tap_metrics(s, seg)
    else:
        periods = freqs = amps = None
    for name, x in (("period", periods), ("frequency", freqs), ("amplitude", amps)):
        _put(values, name, aggregate_stats(x) if x is not None else None, x, AGGREGATES)

    values["aperiodicity"] = aperiodicity(s) if len(s) >= 8 else _NAN
    n_int, n_frz, longest = interruptions_and_freezing(v, s.fps)
    values["n_interruptions"] = float(n_int)
    values["n_freezing"] = float(n_frz)
    values["longest_freezing_s"] = longest
    if per_tap_ok:
        r2, slope = period_linearity(periods)
        complexity = period_fit_complexity(periods)
        d_mean, d_start, d_slope = amplitude_decrement(amps)
        var_norm = float(np.var(periods) / np.mean(periods))
    else:
        r2 = slope = complexity = d_mean = d_start = d_slope = var_norm = _NAN
    values["period_linearity_r2"] = r2
    values["period_linearity_slope"] = slope
    values["period_fit_complexity"] = float(complexity)
    values["amp_decrement_end_minus_mean"] = d_mean
    values["amp_decrement_end_minus_start"] = d_start
    values["amp_decrement_slope"] = d_slope
    values["period_variance_norm"] = var_norm
    values["total_taps"] = float(proc.segmentation.n_peaks)

    w = proc.wrist
    for name, x in (("wrist_dx", w.dx), ("wrist_dy", w.dy), ("wrist_d", w.d)):
        _put(values, name, aggregate_stats(x) if len(x) else None, x, WRIST_AGGREGATES)

    ordered = {n: float(values[n]) for n in FEATURE_NAMES}
    m = proc.meta
    return FeatureVector(m.get("video_id", ""), m.get("participant_id", ""), m.get("hand", ""), ordered)


# -- feature table analyses ---------------------------------------------------

def prune_correlated(matrix, names=FEATURE_NAMES, threshold: float = 0.85):
    """Greedy removal of redundant features.

    Pairs are scanned in catalog order; when two still-retained features have
    |Pearson r| > threshold (pairwise NaN deletion), the later one is dropped. Pairs with
    an undefined r (constant column or fewer than 3 shared rows) are skipped.
    Returns the retained names in catalog order.
    """
    X = np.asarray(matrix, dtype=float)
    m = X.shape[1]
    if len(names) != m:
        raise ValueError("names do not match the matrix width")
    finite = np.isfinite(X)
    retained = [True] * m
    for i in range(m):
        if not retained[i]:
            continue
        for j in range(i + 1, m):
            if not retained[j]:
                continue
            ok = finite[:, i] & finite[:, j]
            if ok.sum() < 3:
                continue
            r = stats.pearson_r(X[ok, i], X[ok, j])
            if math.isfinite(r) and abs(r) > threshold:
                retained[j] = False
    return [n for n, keep in zip(names, retained) if keep]


def feature_target_correlations(matrix, labels, names=FEATURE_NAMES, alpha: float = 0.01):
    """Pearson r and two-sided p of every feature against the labels, ranked by |r|.

    Features with fewer than 4 paired observations or zero variance are listed last with
    r and p set to NaN and a note.
    """
    X = np.asarray(matrix, dtype=float)
    y = np.asarray(labels, dtype=float)
    rows = []
    for j, name in enumerate(names):
        ok = np.isfinite(X[:, j]) & np.isfinite(y)
        note = ""
        if ok.sum() < 4:
            r = p = _NAN
            note = "fewer than 4 observations"
        else:
            r, p = stats.pearson_with_p(X[ok, j], y[ok])
            if not math.isfinite(r):
                note = "zero variance"
        rows.append({"feature": name, "r": r, "p": p, "n": int(ok.sum()),
                     "significant": bool(math.isfinite(p) and p < alpha), "note": note})
    defined = sorted((r for r in rows if math.isfinite(r["r"])), key=lambda r: (-abs(r["r"]), names.index(r["feature"])))
    undefined = [r for r in rows if not math.isfinite(r["r"])]
    for rank, row in enumerate(defined, start=1):
        row["rank"] = rank
    for row in undefined:
        row["rank"] = None
    return defined + undefined
