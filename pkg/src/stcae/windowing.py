"""Temporal sliding windows over per-video frame sequences.

Frames are numbered from 1. With window length T and stride B, window i
(1-based) covers frames 1 + (i-1)B through (i-1)B + T. Videos are windowed
independently; no window spans two videos.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from stcae.errors import ContractError

log = logging.getLogger(__name__)


class VideoTooShort(ContractError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    length: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.length < 1 or self.stride < 1:
            raise ContractError(f"window length and stride must be >= 1, got {self}")


@dataclass
class WindowSet:
    video_id: str
    windows: np.ndarray  # (D, T, H, W, C)
    frame_ranges: list  # (first, last) 1-based inclusive per window

    def __len__(self):
        return len(self.frame_ranges)


def window_count(num_frames, cfg=WindowConfig()):
    """D = floor((V - T) / B) + 1."""
    if num_frames < cfg.length:
        raise VideoTooShort(f"video shorter than window: {num_frames} frames < T={cfg.length}")
    return (num_frames - cfg.length) // cfg.stride + 1


def window_ranges(num_frames, cfg=WindowConfig()):
    d = window_count(num_frames, cfg)
    return [(1 + i * cfg.stride, i * cfg.stride + cfg.length) for i in range(d)]


def make_windows(frames, cfg=WindowConfig(), video_id=""):
    """Stack the windows of one video; frames is (V, H, W, C)."""
    frames = np.asarray(frames, dtype=np.float32)
    ranges = window_ranges(len(frames), cfg)
    starts = np.array([a - 1 for a, _ in ranges])
    idx = starts[:, None] + np.arange(cfg.length)[None, :]
    return WindowSet(video_id, frames[idx], ranges)


def windows_for_videos(videos, cfg=WindowConfig()):
    """Window each (video_id, frames) pair; videos shorter than T are skipped with a warning."""
    out = []
    for vid, frames in videos:
        if len(frames) < cfg.length:
            log.warning("skipping video %s: %d frames < window length %d", vid, len(frames), cfg.length)
            continue
        out.append(make_windows(frames, cfg, vid))
    return out


def total_windows(frame_counts, cfg=WindowConfig()):
    return sum(window_count(v, cfg) for v in frame_counts if v >= cfg.length)
