"""Synthetic finger-tapping landmark recordings with graded impairments.

The angle at the wrist between thumb tip and index tip follows a raised-cosine tap
train: each tap peaks exactly on a frame at its scheduled amplitude and closes to a
fixed resting angle between taps, so peak angles, periods and inserted freezes are
known analytically. A 21-point hand is then posed around that angle with a drifting
wrist, a rotated and scaled hand frame, optional keypoint jitter and missing frames.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ingest import HANDS, HandObservation, LandmarkFrame, VideoRecording, write_landmark_file

COORD_DECIMALS = 6
SCORE_DECIMALS = 4
MIN_PERIOD_FRAMES = 5


@dataclass(frozen=True)
class SynthParams:
    taps: int = 10
    base_amplitude_deg: float = 50.0
    base_frequency_hz: float = 2.5
    amplitude_decrement_per_tap_deg: float = 0.0
    period_jitter_frac: float = 0.0
    freeze_events: tuple = ()          # (after_tap, duration_s), taps counted from 1
    dropout_frac: float = 0.0
    fps: float = 30.0
    seed: int = 0
    amplitude_jitter_frac: float = 0.0
    closed_angle_deg: float = 3.0
    hand: str = "Right"
    video_id: str = "synthetic"
    participant_id: str = "synthetic"
    absent_s: float = 0.3              # no hand at either end
    rest_s: float = 0.4                # closed fingers before the first and after the last tap
    hand_scale: float = 0.25           # wrist to index tip, normalized image units
    rotation_deg: float = 0.0
    wrist_drift: float = 0.0           # amplitude of slow wrist wander, normalized units
    wrist_tremor: float = 0.0          # per-frame wrist jitter sd, normalized units
    keypoint_jitter: float = 0.0       # per-coordinate jitter sd on the other landmarks
    score_low: float = 0.95
    score_high: float = 0.99

    def validate(self):
        if self.taps < 1:
            raise ValueError("taps must be at least 1")
        if not self.base_frequency_hz > 0:
            raise ValueError("base_frequency_hz must be positive")
        if not 0 < self.base_amplitude_deg <= 180:
            raise ValueError(f"amplitude {self.base_amplitude_deg} deg is impossible geometry (0, 180]")
        if not 0 <= self.closed_angle_deg < self.base_amplitude_deg:
            raise ValueError("closed_angle_deg must lie in [0, base_amplitude_deg)")
        if not 0 <= self.dropout_frac <= 0.5:
            raise ValueError("dropout_frac must lie in [0, 0.5]")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if self.hand not in HANDS:
            raise ValueError(f"hand must be one of {HANDS}")
        if not 0 <= self.score_low <= self.score_high <= 1:
            raise ValueError("scores must satisfy 0 <= score_low <= score_high <= 1")
        for after, dur in self.freeze_events:
            if not 1 <= after < self.taps or dur < 0:
                raise ValueError(f"freeze event ({after}, {dur}) must follow a tap other than the last")
        return self


@dataclass
class SynthOracle:
    """Analytic truths of one generated recording (frame indices are absolute)."""
    video_id: str
    fps: float
    peak_frames: list
    amplitudes_deg: list
    periods_s: list
    freezes: list = field(default_factory=list)   # (start_frame, n_frames, duration_s)
    dropped_frames: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _schedule(p: SynthParams, rng):
    """Peak frames, peak amplitudes and per-gap hold lengths (frames)."""
    fps = p.fps
    base_period = 1.0 / p.base_frequency_hz
    periods = base_period * (1.0 + p.period_jitter_frac * rng.standard_normal(max(p.taps - 1, 0)))
    periods = np.clip(periods, 0.5 * base_period, 1.5 * base_period)
    holds = np.zeros(max(p.taps - 1, 0))
    for after, dur in p.freeze_events:
        holds[after - 1] += dur
    start = p.absent_s + p.rest_s + 0.5 * base_period
    times = start + np.concatenate([[0.0], np.cumsum(periods + holds)])
    peaks = np.round(times * fps).astype(int)
    hold_frames = np.round(holds * fps).astype(int)
    for k in range(1, len(peaks)):
        peaks[k] = max(peaks[k], peaks[k - 1] + hold_frames[k - 1] + MIN_PERIOD_FRAMES)
    amps = p.base_amplitude_deg - p.amplitude_decrement_per_tap_deg * np.arange(p.taps)
    amps = amps * (1.0 + p.amplitude_jitter_frac * rng.standard_normal(p.taps))
    amps = np.clip(amps, p.closed_angle_deg + 2.0, 180.0)
    return peaks, amps, hold_frames


def _angle_track(p: SynthParams, peaks, amps, hold_frames, n_frames):
    c = p.closed_angle_deg
    theta = np.full(n_frames, c, dtype=float)
    i = np.arange(n_frames, dtype=float)
    half0 = 0.5 * p.fps / p.base_frequency_hz
    # opening before the first tap and closing after the last
    lo = peaks[0] - half0
    m = (i >= lo) & (i <= peaks[0])
    theta[m] = c + (amps[0] - c) * 0.5 * (1 + np.cos(math.pi * (peaks[0] - i[m]) / half0))
    m = (i >= peaks[-1]) & (i <= peaks[-1] + half0)
    theta[m] = c + (amps[-1] - c) * 0.5 * (1 + np.cos(math.pi * (i[m] - peaks[-1]) / half0))
    for k in range(len(peaks) - 1):
        a, b = peaks[k], peaks[k + 1]
        half = 0.5 * (b - a - hold_frames[k])
        m = (i >= a) & (i <= a + half)
        theta[m] = c + (amps[k] - c) * 0.5 * (1 + np.cos(math.pi * (i[m] - a) / half))
        m = (i >= b - half) & (i <= b)
        theta[m] = c + (amps[k + 1] - c) * 0.5 * (1 + np.cos(math.pi * (b - i[m]) / half))
    return theta


# fixed hand-frame layout of the landmarks that do not move with the tap, as
# (angle from the hand axis in degrees, distance in units of hand_scale)
_STATIC = {1: (-45.0, 0.22), 2: (-40.0, 0.35), 3: (-33.0, 0.45), 5: (10.0, 0.42),
           9: (0.0, 0.42), 10: (-5.0, 0.52), 11: (-12.0, 0.55), 12: (-20.0, 0.52),
           13: (-10.0, 0.40), 14: (-16.0, 0.50), 15: (-24.0, 0.52), 16: (-30.0, 0.48),
           17: (-20.0, 0.36), 18: (-26.0, 0.44), 19: (-32.0, 0.46), 20: (-37.0, 0.43)}


def _pose(theta_deg, scale, rot_deg):
    """21 points in a hand frame centred on the wrist; thumb and index tips straddle the axis."""
    pts = np.zeros((21, 2))
    axis = math.radians(90.0 + rot_deg)

    def at(offset_deg, dist):
        a = axis + math.radians(offset_deg)
        return np.array([math.cos(a), math.sin(a)]) * dist * scale

    for idx, (off, dist) in _STATIC.items():
        pts[idx] = at(off, dist)
    half = 0.5 * theta_deg
    thumb_len, index_len = 0.62, 1.0
    pts[4] = at(-half, thumb_len)
    pts[8] = at(half, index_len)
    pts[3] = 0.5 * (pts[2] + pts[4])
    pts[6] = pts[5] + 0.45 * (pts[8] - pts[5])
    pts[7] = pts[5] + 0.75 * (pts[8] - pts[5])
    return pts


def generate_recording(params: SynthParams):
    """Build a VideoRecording from ``params``; returns (recording, oracle)."""
    p = params.validate()
    rng = _rng(p.seed)
    peaks, amps, hold_frames = _schedule(p, rng)
    half0 = 0.5 * p.fps / p.base_frequency_hz
    absent = int(round(p.absent_s * p.fps))
    tail = int(math.ceil(peaks[-1] + half0)) + int(round(p.rest_s * p.fps)) + 1
    n_frames = tail + absent
    theta = _angle_track(p, peaks, amps, hold_frames, n_frames)

    visible = np.zeros(n_frames, dtype=bool)
    visible[absent:tail] = True
    dropped = []
    if p.dropout_frac > 0:
        idx = np.flatnonzero(visible)
        k = int(round(p.dropout_frac * idx.size))
        dropped = sorted(int(v) for v in rng.choice(idx, size=k, replace=False))
        visible[dropped] = False

    t = np.arange(n_frames) / p.fps
    phase = rng.uniform(0, 2 * math.pi, size=2)
    wander = p.wrist_drift * np.stack([np.sin(2 * math.pi * 0.15 * t + phase[0]),
                                       np.sin(2 * math.pi * 0.11 * t + phase[1])], axis=1)
    tremor = p.wrist_tremor * rng.standard_normal((n_frames, 2))
    jitter = p.keypoint_jitter * rng.standard_normal((n_frames, 21, 2))
    scores = rng.uniform(p.score_low, p.score_high, size=n_frames)
    origin = np.array([0.5, 0.75])
    wrist = origin + wander + tremor

    frames = []
    for i in range(n_frames):
        hands = ()
        if visible[i]:
            pts = _pose(theta[i], p.hand_scale, p.rotation_deg)
            pts[1:] += jitter[i, 1:]
            # the consumed tips carry no jitter of their own so the angle stays exact
            pts[4] -= jitter[i, 4]
            pts[8] -= jitter[i, 8]
            pts += wrist[i]
            pts = np.round(pts, COORD_DECIMALS)
            hands = (HandObservation(p.hand, round(float(scores[i]), SCORE_DECIMALS), pts),)
        frames.append(LandmarkFrame(i, round(i / p.fps, 9), hands))
    rec = VideoRecording(p.video_id, p.participant_id, p.hand, frames)

    freezes = []
    for k, h in enumerate(hold_frames):
        if h > 0:
            start = int(peaks[k] + math.ceil(0.5 * (peaks[k + 1] - peaks[k] - h)))
            freezes.append((start, int(h), float(h / p.fps)))
    oracle = SynthOracle(p.video_id, p.fps, [int(v) for v in peaks], [float(a) for a in amps],
                         [float(v) for v in np.diff(peaks) / p.fps], freezes, dropped)
    return rec, oracle


# -- severity grades ----------------------------------------------------------

# grade -> (frequency Hz, peak angle deg, decrement deg/tap, period jitter,
#           amplitude jitter, freezes, freeze duration s, dropout)
GRADE_PRESETS = {
    0: (3.2, 62.0, 0.0, 0.03, 0.03, 0, 0.0, 0.00),
    1: (2.6, 50.0, 0.5, 0.07, 0.06, 0, 0.0, 0.01),
    2: (2.1, 40.0, 1.0, 0.12, 0.10, 1, 0.3, 0.02),
    3: (1.6, 31.0, 1.4, 0.18, 0.14, 2, 0.5, 0.03),
    4: (1.2, 23.0, 1.8, 0.25, 0.18, 3, 0.8, 0.04),
}


def grade_params(grade: int, rng, hand="Right", video_id="v", participant_id="p",
                 participant_effect=(1.0, 1.0), seed=0) -> SynthParams:
    """Sample recording parameters for one grade with within-grade variation."""
    if grade not in GRADE_PRESETS:
        raise ValueError(f"grade must be one of {sorted(GRADE_PRESETS)}")
    freq, amp, dec, pj, aj, n_freeze, freeze_s, dropout = GRADE_PRESETS[grade]
    f_eff, a_eff = participant_effect
    freq = freq * f_eff * math.exp(0.04 * rng.standard_normal())
    amp = amp * a_eff * math.exp(0.04 * rng.standard_normal())
    taps = int(rng.integers(10, 15))
    freezes = []
    if n_freeze:
        after = sorted(int(v) for v in rng.choice(np.arange(2, taps - 1), size=n_freeze, replace=False))
        freezes = [(a, freeze_s * float(rng.uniform(0.8, 1.2))) for a in after]
    return SynthParams(taps=taps, base_amplitude_deg=amp, base_frequency_hz=freq,
                       amplitude_decrement_per_tap_deg=dec * float(rng.uniform(0.7, 1.3)),
                       period_jitter_frac=pj, amplitude_jitter_frac=aj,
                       freeze_events=tuple(freezes), dropout_frac=dropout, fps=30.0, seed=seed,
                       hand=hand, video_id=video_id, participant_id=participant_id,
                       hand_scale=float(rng.uniform(0.18, 0.32)),
                       rotation_deg=float(rng.uniform(-30, 30)),
                       wrist_drift=float(0.004 + 0.003 * grade) * float(rng.uniform(0.5, 1.5)),
                       wrist_tremor=0.0004 * (1 + grade),
                       keypoint_jitter=0.0005,
                       score_low=0.93, score_high=0.995)


@dataclass
class SynthDataset:
    recordings: list
    oracles: list
    labels: list           # dicts: video_id, participant_id, hand, ground_truth
    demographics: list     # dicts per participant
    ratings: list          # dicts per (video, rater)


def severity_grade_dataset(n_participants: int, grades=(0, 1, 2, 3, 4), seed: int = 42,
                           both_hands: bool = False) -> SynthDataset:
    """``n_participants`` per grade, each recorded at that grade.

    A participant contributes one recording, hands alternating Right/Left, or a Left and
    a Right recording with ``both_hands``.
    """
    if n_participants < 1:
        raise ValueError("n_participants must be at least 1")
    if len(grades) * n_participants < 3:
        raise ValueError("a dataset needs at least 3 participants")
    rng = _rng(seed)
    recordings, oracles, labels, demographics, ratings = [], [], [], [], []
    pid_no = 0
    for g in grades:
        for _ in range(n_participants):
            pid = f"S{pid_no:04d}"
            pid_no += 1
            effect = (math.exp(0.05 * rng.standard_normal()), math.exp(0.05 * rng.standard_normal()))
            demographics.append({
                "participant_id": pid, "age": int(rng.integers(45, 86)),
                "sex": ("female", "male")[int(rng.integers(2))],
                "race": ("White", "Black", "Asian", "Other")[int(rng.choice(4, p=[0.7, 0.1, 0.1, 0.1]))],
                "pd_status": "pd" if g > 0 or rng.random() < 0.3 else "control",
                "environment": ("home", "clinic")[int(rng.integers(2))]})
            hands = HANDS if both_hands else (("Right", "Left")[(pid_no - 1) % 2],)
            for hand in hands:
                vid = f"{pid}_{hand[0]}"
                rec_seed = int(rng.integers(2 ** 62))
                params = grade_params(g, rng, hand, vid, pid, effect, rec_seed)
                rec, oracle = generate_recording(params)
                recordings.append(rec)
                oracles.append(oracle)
                labels.append({"video_id": vid, "participant_id": pid, "hand": hand, "ground_truth": g})
                ratings.extend(_synthetic_ratings(vid, pid, hand, g, rng))
    return SynthDataset(recordings, oracles, labels, demographics, ratings)


def _synthetic_ratings(vid, pid, hand, grade, rng):
    """Three experts whose consensus is ``grade`` plus one noisier non-expert."""
    values = [grade, grade, grade]
    if rng.random() < 0.35:
        values[int(rng.integers(3))] = int(np.clip(grade + (1 if rng.random() < 0.5 else -1), 0, 4))
    difficult = bool(rng.random() < 0.1)
    rows = [{"video_id": vid, "participant_id": pid, "hand": hand, "rater_id": f"E{k + 1}",
             "rater_role": "expert", "rating": v, "difficult": int(difficult)} for k, v in enumerate(values)]
    nonexpert = int(np.clip(grade + int(rng.integers(-1, 2)), 0, 4))
    rows.append({"video_id": vid, "participant_id": pid, "hand": hand, "rater_id": "N1",
                 "rater_role": "nonexpert", "rating": nonexpert, "difficult": int(difficult)})
    return rows


def _write_csv(path, rows, columns, comment=None):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})


def write_dataset(ds: SynthDataset, out_dir, comment=None):
    """Lay the dataset out as landmarks/, oracle/, labels.csv, ratings.csv, demographics.csv."""
    out = Path(out_dir)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    (out / "oracle").mkdir(parents=True, exist_ok=True)
    for rec, oracle in zip(ds.recordings, ds.oracles):
        write_landmark_file(rec, out / "landmarks" / f"{rec.video_id}.jsonl")
        (out / "oracle" / f"{rec.video_id}.json").write_text(
            json.dumps(oracle.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _write_csv(out / "labels.csv", ds.labels, ["video_id", "participant_id", "hand", "ground_truth"], comment)
    _write_csv(out / "ratings.csv", ds.ratings,
               ["video_id", "participant_id", "hand", "rater_id", "rater_role", "rating", "difficult"], comment)
    _write_csv(out / "demographics.csv", ds.demographics,
               ["participant_id", "age", "sex", "race", "pd_status", "environment"], comment)


# -- keypoint noise -----------------------------------------------------------

SCORE_FLOOR = 0.5
SCORE_SLOPE = 8.0


def degrade_score(score, sigma, e):
    """Detection score after noise: ``max(0.5, score - 8 * sigma * e)`` with e >= 0.

    With e drawn from a unit exponential the mean loss is 8 * sigma, and the loss is
    monotone in sigma for every fixed draw.
    """
    return max(SCORE_FLOOR, score - SCORE_SLOPE * sigma * e)


def inject_keypoint_noise(rec: VideoRecording, sigma: float, seed: int = 0) -> VideoRecording:
    """Add N(0, sigma^2) offsets to every landmark coordinate and degrade detection scores.

    The same seed reuses the same standard-normal and exponential draws for every sigma,
    so a sweep over sigma scales one noise pattern.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return rec
    rng = _rng(seed)
    frames = []
    for fr in rec.frames:
        hands = []
        for h in fr.hands:
            z = rng.standard_normal((21, 2))
            e = rng.exponential()
            pts = np.round(h.points + sigma * z, COORD_DECIMALS)
            score = round(degrade_score(h.score, sigma, e), SCORE_DECIMALS)
            hands.append(replace(h, points=pts, score=score))
        frames.append(LandmarkFrame(fr.frame_index, fr.timestamp_s, tuple(hands)))
    return VideoRecording(rec.video_id, rec.participant_id, rec.hand, frames)
