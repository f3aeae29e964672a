import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import windows_enum
from stcae.windowing import (
    VideoTooShort,
    WindowConfig,
    make_windows,
    total_windows,
    window_count,
    window_ranges,
    windows_for_videos,
)


def test_count_examples():
    assert window_count(8) == 1
    assert window_count(100) == 93
    with pytest.raises(VideoTooShort):
        window_count(7)


def test_random_cases_match_enumerator():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        T = int(rng.integers(1, 20))
        B = int(rng.integers(1, 10))
        V = int(rng.integers(T, 400))
        cfg = WindowConfig(T, B)
        expected = windows_enum(V, T, B)
        assert window_count(V, cfg) == len(expected)
        assert window_ranges(V, cfg) == expected


@given(st.lists(st.integers(8, 5000), min_size=9, max_size=9))
def test_nine_video_identity(lengths):
    assert total_windows(lengths) == sum(lengths) - 9 * 7


def test_thermal_adl_total():
    rng = np.random.default_rng(1)
    for _ in range(100):
        cuts = np.sort(rng.choice(np.arange(1, 22_116 - 9 * 8), 8, replace=False))
        lengths = np.diff(np.r_[0, cuts, 22_116 - 9 * 8]) + 8  # every video >= 8 frames
        assert lengths.sum() == 22_116
        assert total_windows(lengths.tolist()) == 22_053


def test_window_contents():
    frames = np.random.default_rng(2).normal(size=(10, 3, 3, 1)).astype(np.float32)
    ws = make_windows(frames)
    assert ws.frame_ranges == [(1, 8), (2, 9), (3, 10)]
    for w, (a, b) in zip(ws.windows, ws.frame_ranges):
        np.testing.assert_array_equal(w, frames[a - 1:b])


def test_windows_never_span_videos():
    a = np.zeros((8, 2, 2, 1), np.float32)
    b = np.ones((8, 2, 2, 1), np.float32)
    sets = windows_for_videos([("a", a), ("b", b)])
    assert [len(s) for s in sets] == [1, 1]
    assert not sets[0].windows.any() and sets[1].windows.all()


def test_short_video_skipped(caplog):
    sets = windows_for_videos([("short", np.zeros((5, 2, 2, 1), np.float32))])
    assert sets == []
    assert "short" in caplog.text
