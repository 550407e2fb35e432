import numpy as np
import pytest

from fingertap.ingest import HandObservation, LandmarkFrame, VideoRecording


def make_hand(label="Right", score=0.95, wrist=(0.5, 0.8), thumb=(0.4, 0.6), index=(0.6, 0.5), cmc=(0.45, 0.75)):
    pts = np.tile(np.asarray(wrist, dtype=float), (21, 1)) + 0.01 * np.arange(21)[:, None]
    pts[0], pts[1], pts[4], pts[8] = wrist, cmc, thumb, index
    return HandObservation(label, score, pts)


def make_recording(hand_lists, fps=30.0, hand="Right", vid="v1", pid="p1"):
    frames = [LandmarkFrame(i, i / fps, tuple(h)) for i, h in enumerate(hand_lists)]
    return VideoRecording(vid, pid, hand, frames)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, title, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
