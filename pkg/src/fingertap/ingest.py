"""Landmark, rating and demographic file readers.

Landmark files are JSON Lines: a header record ``{"video_id", "participant_id", "hand"}``
followed by one record per frame::

    {"frame": 0, "t": 0.0, "hands": [{"label": "Left", "score": 0.97, "points": [[x, y], ...]}]}

Points follow the 21-point hand schema; only the wrist (0), thumb CMC (1), thumb tip (4)
and index tip (8) are consumed downstream. A third coordinate, if present, is dropped.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_POINTS = 21
WRIST, THUMB_CMC, THUMB_TIP, INDEX_TIP = 0, 1, 4, 8
HANDS = ("Left", "Right")
SCORE_THRESHOLD = 0.9


class DataError(ValueError):
    """Input data violates a file schema or a record-level constraint."""


@dataclass(frozen=True)
class HandObservation:
    label: str
    score: float
    points: np.ndarray  # (21, 2)

    def __post_init__(self):
        if self.label not in HANDS:
            raise DataError(f"hand label must be one of {HANDS}, got {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"hand score must lie in [0, 1], got {self.score}")
        pts = self.points
        if pts.shape != (N_POINTS, 2):
            raise DataError(f"expected {N_POINTS} points of (x, y), got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("hand points must be finite")

    def point(self, index):
        return self.points[index]


@dataclass(frozen=True)
class LandmarkFrame:
    frame_index: int
    timestamp_s: float
    hands: tuple = ()


@dataclass
class VideoRecording:
    video_id: str
    participant_id: str
    hand: str
    frames: list
    fps: float = field(init=False)

    def __post_init__(self):
        if self.hand not in HANDS:
            raise DataError(f"recording hand must be one of {HANDS}, got {self.hand!r}")
        if len(self.frames) < 2:
            raise DataError(f"recording {self.video_id!r} has fewer than 2 frames")
        duration = self.frames[-1].timestamp_s - self.frames[0].timestamp_s
        if duration <= 0:
            raise DataError(f"recording {self.video_id!r} has non-positive duration")
        self.fps = (len(self.frames) - 1) / duration

    @property
    def n_frames(self):
        return len(self.frames)


@dataclass(frozen=True)
class RatingRecord:
    video_id: str
    participant_id: str
    hand: str
    rater_id: str
    rater_role: str
    rating: int
    difficult: bool = False


@dataclass(frozen=True)
class ParticipantInfo:
    participant_id: str
    age: float | None
    sex: str
    race: str
    pd_status: str
    environment: str


# -- landmark files -----------------------------------------------------------

def _parse_hand(obj, lineno):
    try:
        pts = np.asarray([p[:2] for p in obj["points"]], dtype=float)
        if len(obj["points"]) != N_POINTS:
            raise DataError(f"expected {N_POINTS} points, got {len(obj['points'])}")
        return HandObservation(label=obj["label"], score=float(obj["score"]), points=pts)
    except DataError as exc:
        raise DataError(f"line {lineno}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"line {lineno}: malformed hand record ({exc})") from None


def parse_landmark_file(path) -> VideoRecording:
    """Read a landmark JSONL file into a VideoRecording.

    Frames must have strictly increasing ``frame`` and nondecreasing ``t``. The frame
    rate is ``(n_frames - 1) / (t_last - t_first)``.
    """
    path = Path(path)
    header = None
    frames = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if header is None:
                try:
                    header = (str(obj["video_id"]), str(obj["participant_id"]), obj["hand"])
                except (KeyError, TypeError):
                    raise DataError(f"{path}: line {lineno}: header needs video_id, participant_id, hand") from None
                continue
            try:
                index = int(obj["frame"])
                t = float(obj["t"])
                raw_hands = obj.get("hands", [])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: malformed frame record ({exc})") from None
            try:
                hands = tuple(_parse_hand(h, lineno) for h in raw_hands)
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
            if frames:
                prev = frames[-1]
                if index <= prev.frame_index:
                    raise DataError(f"{path}: line {lineno}: frame index {index} not increasing")
                if t < prev.timestamp_s:
                    raise DataError(f"{path}: line {lineno}: timestamp {t} decreases")
            if not math.isfinite(t):
                raise DataError(f"{path}: line {lineno}: non-finite timestamp")
            frames.append(LandmarkFrame(index, t, hands))
    if header is None:
        raise DataError(f"{path}: empty landmark file")
    try:
        return VideoRecording(video_id=header[0], participant_id=header[1], hand=header[2], frames=frames)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_landmark_file(rec: VideoRecording, path):
    """Serialize a recording in the landmark JSONL format (inverse of parse_landmark_file)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"video_id": rec.video_id, "participant_id": rec.participant_id,
                             "hand": rec.hand}) + "\n")
        for fr in rec.frames:
            hands = [{"label": h.label, "score": float(h.score),
                      "points": [[float(x), float(y)] for x, y in h.points]} for h in fr.hands]
            fh.write(json.dumps({"frame": fr.frame_index, "t": fr.timestamp_s, "hands": hands}) + "\n")


# -- target hand --------------------------------------------------------------

def hand_size(hand: HandObservation) -> float:
    """Wrist to thumb-tip distance, used to rank same-label detections."""
    return float(np.hypot(*(hand.points[THUMB_TIP] - hand.points[WRIST])))


def select_target_hand(frame: LandmarkFrame, target: str,
                       threshold: float = SCORE_THRESHOLD) -> HandObservation | None:
    """Pick the hand to analyze in one frame, or None when the target hand is missing.

    Candidates carry the target label and a score strictly above ``threshold``. Among
    several candidates the largest one (wrist to thumb-tip distance) wins; exact ties go to
    the candidate listed first.
    """
    best = None
    best_size = -1.0
    for hand in frame.hands:
        if hand.label != target or not hand.score > threshold:
            continue
        size = hand_size(hand)
        if size > best_size:
            best, best_size = hand, size
    return best


def mean_presence_score(rec: VideoRecording) -> float:
    """Average detection score of the target-label hand, ignoring leading/trailing absence.

    No score gate is applied; the highest-scoring target-label detection of each frame
    counts, and frames inside the span without one count as 0.
    """
    scores = []
    for fr in rec.frames:
        labelled = [h.score for h in fr.hands if h.label == rec.hand]
        scores.append(max(labelled) if labelled else None)
    present = [i for i, s in enumerate(scores) if s is not None]
    if not present:
        return float("nan")
    span = scores[present[0]:present[-1] + 1]
    return float(np.mean([0.0 if s is None else s for s in span]))


# -- ground truth -------------------------------------------------------------

def derive_ground_truth(ratings) -> int:
    """Consensus severity from exactly three expert ratings.

    ``ratings`` is either a sequence of RatingRecord or of plain integers. Two or more
    equal ratings decide; otherwise the mean is rounded to the nearest integer.
    """
    values = []
    for r in ratings:
        if isinstance(r, RatingRecord):
            if r.rater_role != "expert":
                raise DataError(f"non-expert rating from {r.rater_id!r} passed to derive_ground_truth")
            values.append(r.rating)
        else:
            values.append(int(r))
    if len(values) != 3:
        raise DataError(f"ground truth needs exactly 3 expert ratings, got {len(values)}")
    for v in values:
        if v not in (0, 1, 2, 3, 4):
            raise DataError(f"rating {v} outside 0-4")
    a, b, c = values
    if a == b or a == c:
        return a
    if b == c:
        return b
    # distinct triple: mean is k/3, never a half
    return int(math.floor(sum(values) / 3.0 + 0.5))


# -- CSV tables ---------------------------------------------------------------

def _csv_rows(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    # header occupies the first non-comment line
    for offset, row in enumerate(reader, start=2):
        yield offset, row


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "y", "t"):
        return True
    if t in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_ratings(path) -> list[RatingRecord]:
    """Read ratings.csv; extra columns are ignored."""
    records = []
    seen = {}
    for lineno, row in _csv_rows(path):
        try:
            rating = int(row["rating"])
            role = row["rater_role"].strip().lower()
            rec = RatingRecord(video_id=row["video_id"].strip(),
                               participant_id=row["participant_id"].strip(),
                               hand=row["hand"].strip(),
                               rater_id=row["rater_id"].strip(),
                               rater_role=role,
                               rating=rating,
                               difficult=_parse_bool(row.get("difficult", "") or ""))
        except (KeyError, ValueError, AttributeError) as exc:
            raise DataError(f"{path}: line {lineno}: malformed rating row ({exc})") from None
        if rating not in (0, 1, 2, 3, 4):
            raise DataError(f"{path}: line {lineno}: rating {rating} outside 0-4")
        if role not in ("expert", "nonexpert"):
            raise DataError(f"{path}: line {lineno}: rater_role must be expert or nonexpert")
        key = (rec.video_id, rec.rater_id)
        if key in seen:
            raise DataError(f"{path}: duplicate rating for video {key[0]!r} by rater {key[1]!r} "
                            f"on lines {seen[key]} and {lineno}")
        seen[key] = lineno
        records.append(rec)
    return records


def load_demographics(path) -> list[ParticipantInfo]:
    """Read demographics.csv; extra columns are ignored, a blank age means unknown."""
    out = []
    for lineno, row in _csv_rows(path):
        try:
            age_text = (row.get("age") or "").strip()
            age = float(age_text) if age_text else None
            if age is not None and age < 0:
                raise ValueError(f"negative age {age}")
            out.append(ParticipantInfo(participant_id=row["participant_id"].strip(),
                                       age=age,
                                       sex=(row.get("sex") or "unknown").strip().lower(),
                                       race=(row.get("race") or "").strip(),
                                       pd_status=(row.get("pd_status") or "unknown").strip().lower(),
                                       environment=(row.get("environment") or "unknown").strip().lower()))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: malformed demographics row ({exc})") from None
    return out


def ground_truth_table(ratings):
    """Per-video consensus labels from a list of RatingRecord.

    Returns a list of dicts with video_id, participant_id, hand, ground_truth, rule
    ('majority' or 'average') and difficult (any expert flagged the video).
    """
    by_video = {}
    for r in ratings:
        if r.rater_role == "expert":
            by_video.setdefault(r.video_id, []).append(r)
    rows = []
    for vid in sorted(by_video):
        recs = sorted(by_video[vid], key=lambda r: r.rater_id)
        try:
            gt = derive_ground_truth(recs)
        except DataError as exc:
            raise DataError(f"video {vid!r}: {exc}") from None
        values = [r.rating for r in recs]
        rule = "majority" if len(set(values)) < 3 else "average"
        rows.append({"video_id": vid, "participant_id": recs[0].participant_id,
                     "hand": recs[0].hand, "ground_truth": gt, "rule": rule,
                     "difficult": any(r.difficult for r in recs)})
    return rows
