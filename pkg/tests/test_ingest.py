import itertools
import json
import math

import numpy as np
import pytest

from fingertap import ingest
from fingertap.ingest import DataError, derive_ground_truth, select_target_hand

from conftest import make_hand, make_recording


def test_landmark_roundtrip(tmp_path):
    rec = make_recording([[make_hand()], [], [make_hand(score=0.5), make_hand("Left")]])
    path = tmp_path / "v1.jsonl"
    ingest.write_landmark_file(rec, path)
    back = ingest.parse_landmark_file(path)
    assert back.video_id == "v1" and back.hand == "Right" and back.n_frames == 3
    assert back.fps == pytest.approx(30.0)
    for a, b in zip(rec.frames, back.frames):
        assert len(a.hands) == len(b.hands)
        for ha, hb in zip(a.hands, b.hands):
            assert ha.label == hb.label and ha.score == hb.score
            np.testing.assert_array_equal(ha.points, hb.points)


def test_fps_uses_frame_intervals():
    rec = make_recording([[]] * 31, fps=30.0)
    assert rec.fps == pytest.approx(30.0)


def test_z_coordinate_dropped(tmp_path):
    path = tmp_path / "a.jsonl"
    pts = [[0.1 * i, 0.2, 0.7] for i in range(21)]
    lines = [{"video_id": "a", "participant_id": "p", "hand": "Left"},
             {"frame": 0, "t": 0.0, "hands": [{"label": "Left", "score": 0.99, "points": pts}]},
             {"frame": 1, "t": 0.1, "hands": []}]
    path.write_text("\n".join(json.dumps(x) for x in lines))
    rec = ingest.parse_landmark_file(path)
    assert rec.frames[0].hands[0].points.shape == (21, 2)


@pytest.mark.parametrize("frame_line,needle", [
    ('{"frame": 0, "t": 0.0, "hands": [{"label": "Left", "score": 0.9, "points": [[0, 0]]}]}', "line 3"),
    ('{"frame": 0, "t": 0.0}', "not increasing"),
    ('not json', "line 3: invalid JSON"),
    ('{"frame": 5, "t": 0.0, "hands": [{"label": "Middle", "score": 0.9, "points": []}]}', "line 3"),
])
def test_malformed_lines_name_the_line(tmp_path, frame_line, needle):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"video_id": "b", "participant_id": "p", "hand": "Left"}\n'
                    '{"frame": 0, "t": 0.0, "hands": []}\n' + frame_line + "\n")
    with pytest.raises(DataError, match=needle):
        ingest.parse_landmark_file(path)


def test_score_gate_is_strict():
    frame = ingest.LandmarkFrame(0, 0.0, (make_hand(score=0.9),))
    assert select_target_hand(frame, "Right") is None
    frame = ingest.LandmarkFrame(0, 0.0, (make_hand(score=0.9000001),))
    assert select_target_hand(frame, "Right") is not None


def test_largest_candidate_wins_and_ties_go_first():
    small = make_hand(thumb=(0.48, 0.75))
    big = make_hand(thumb=(0.1, 0.2))
    frame = ingest.LandmarkFrame(0, 0.0, (small, big, make_hand("Left", thumb=(0.0, 0.0))))
    assert select_target_hand(frame, "Right") is big
    twin_a, twin_b = make_hand(score=0.95), make_hand(score=0.99)
    frame = ingest.LandmarkFrame(0, 0.0, (twin_a, twin_b))
    assert select_target_hand(frame, "Right") is twin_a


def test_wrong_label_is_missing():
    frame = ingest.LandmarkFrame(0, 0.0, (make_hand("Left"),))
    assert select_target_hand(frame, "Right") is None


def test_mean_presence_score_ignores_leading_and_trailing_absence():
    rec = make_recording([[], [make_hand(score=0.9)], [], [make_hand(score=0.6)], []])
    assert ingest.mean_presence_score(rec) == pytest.approx((0.9 + 0.0 + 0.6) / 3)


def _oracle_ground_truth(a, b, c):
    counts = {v: [a, b, c].count(v) for v in (a, b, c)}
    for v, n in counts.items():
        if n >= 2:
            return v
    return int(math.floor((a + b + c) / 3 + 0.5))


def test_ground_truth_exhaustive():
    for triple in itertools.product(range(5), repeat=3):
        assert derive_ground_truth(list(triple)) == _oracle_ground_truth(*triple), triple


def test_ground_truth_examples():
    assert derive_ground_truth([1, 1, 3]) == 1
    assert derive_ground_truth([0, 2, 4]) == 2
    assert derive_ground_truth([1, 2, 4]) == 2   # mean 7/3 rounds to 2
    assert derive_ground_truth([0, 1, 3]) == 1   # mean 4/3


def test_ground_truth_rejects_wrong_count_and_nonexperts():
    with pytest.raises(DataError):
        derive_ground_truth([1, 2])
    r = ingest.RatingRecord("v", "p", "Left", "N1", "nonexpert", 2)
    with pytest.raises(DataError, match="non-expert"):
        derive_ground_truth([r, r, r])


RATINGS = """video_id,participant_id,hand,rater_id,rater_role,rating,difficult
v1,p1,Left,E1,expert,2,0
v1,p1,Left,E2,expert,2,1
v1,p1,Left,E3,expert,3,0
v1,p1,Left,N1,nonexpert,1,0
v2,p1,Right,E1,expert,0,0
v2,p1,Right,E2,expert,1,0
v2,p1,Right,E3,expert,4,0
"""


def test_ratings_and_ground_truth_table(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("# comment\n" + RATINGS)
    recs = ingest.load_ratings(path)
    assert len(recs) == 7
    rows = ingest.ground_truth_table(recs)
    assert [(r["video_id"], r["ground_truth"], r["rule"], r["difficult"]) for r in rows] == [
        ("v1", 2, "majority", True), ("v2", 2, "average", False)]


def test_duplicate_rating_names_both_lines(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text(RATINGS + "v1,p1,Left,E1,expert,3,0\n")
    with pytest.raises(DataError, match=r"lines 2 and 9"):
        ingest.load_ratings(path)


@pytest.mark.parametrize("row,needle", [("v9,p1,Left,E1,expert,5,0", "outside 0-4"),
                                        ("v9,p1,Left,E1,boss,2,0", "expert or nonexpert"),
                                        ("v9,p1,Left,E1,expert,x,0", "malformed")])
def test_bad_rating_rows(tmp_path, row, needle):
    path = tmp_path / "ratings.csv"
    path.write_text(RATINGS + row + "\n")
    with pytest.raises(DataError, match=needle):
        ingest.load_ratings(path)


def test_demographics(tmp_path):
    path = tmp_path / "demo.csv"
    path.write_text("participant_id,age,sex,race,pd_status,environment\np1,61,Female,White,pd,home\np2,,male,,control,clinic\n")
    people = ingest.load_demographics(path)
    assert people[0].age == 61 and people[0].sex == "female"
    assert people[1].age is None and people[1].pd_status == "control"
