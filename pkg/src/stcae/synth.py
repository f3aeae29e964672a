"""Seeded synthetic fall dataset.

Each frame shows one bright elliptical blob (a person silhouette) over a
dark, slightly noisy floor scene. Training videos contain only normal
activity: walking, standing, slow crouching. Test videos begin with normal
activity and then collapse abruptly: within a few frames the blob tips over
to horizontal and drops to the floor. It lies there for a while, gets back
up and carries on. The collapse, lying and recovery frames are annotated as
fall.

Frames are written as 8-bit PGM files in the on-disk dataset layout read by
:mod:`stcae.dataset`.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

SIZE = 64
FLOOR = 56
BACKGROUND = 40
PERSON = 210
NOISE = 3.0
HEIGHT = 14.0  # upright semi-axis
WIDTH = 5.0
XMIN, XMAX = 16, 48  # walking range of the body centre


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 12
    n_test: int = 4
    train_frames: int = 16
    test_frames: int = 44
    collapse_frames: int = 4
    size: int = SIZE


def render(cx, cy, half_len, half_wid, angle, rng, size=SIZE):
    """uint8 frame with a soft-edged ellipse; angle 0 is upright."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    c, s = math.cos(angle), math.sin(angle)
    u = dx * s + dy * c  # along the body axis
    v = dx * c - dy * s
    r = np.sqrt((u / half_len) ** 2 + (v / half_wid) ** 2)
    body = 1.0 / (1.0 + np.exp((r - 1.0) * 8.0))
    img = BACKGROUND + (PERSON - BACKGROUND) * body + rng.normal(0.0, NOISE, (size, size))
    img[FLOOR + 2:, :] += 15.0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _adl_track(n, rng, cx=None):
    """Per-frame (cx, half_len) for normal activity."""
    cx = rng.uniform(XMIN + 4, XMAX - 4) if cx is None else float(np.clip(cx, XMIN, XMAX))
    vx = rng.choice([-1, 1]) * rng.uniform(0.8, 1.8)
    half_len = HEIGHT
    mode = "walk"
    left = int(rng.integers(6, 14))
    out = []
    for _ in range(n):
        if left == 0:
            mode = rng.choice(["walk", "stand", "crouch"], p=[0.6, 0.2, 0.2])
            left = int(rng.integers(6, 14))
            if mode == "walk":
                vx = rng.choice([-1, 1]) * rng.uniform(0.8, 1.8)
        left -= 1
        if mode == "walk":
            cx += vx
            if cx < XMIN or cx > XMAX:
                vx = -vx
                cx += 2 * vx
        target = 10.0 if mode == "crouch" else HEIGHT
        half_len += float(np.clip(target - half_len, -0.8, 0.8))
        out.append((cx, half_len))
    return out


def adl_video(n, rng):
    frames = []
    for cx, hl in _adl_track(n, rng):
        frames.append(render(cx, FLOOR - hl, hl, WIDTH, 0.0, rng))
    return np.stack(frames)


def _tipped(cx, hl, direction, t, rng):
    """Body rotated a fraction t of the way from upright to lying on the floor."""
    angle = direction * t * math.pi / 2
    cy = (FLOOR - hl) * (1 - t) + (FLOOR - WIDTH) * t
    x = cx + direction * t * (HEIGHT - WIDTH)
    return render(x, cy, hl + (HEIGHT - hl) * t, WIDTH, angle, rng)


def fall_video(n, rng, collapse_frames=4, lying_frames=10):
    """Normal activity, an abrupt collapse, a spell on the floor, getting up, more normal activity.

    Returns (frames, (first, last)) with the 1-based range covering the
    collapse, the lying spell and the recovery.
    """
    episode = 2 * collapse_frames + lying_frames
    onset = int(rng.integers(n // 3 - 3, n // 3 + 3))
    if onset < 1 or onset + episode > n:
        raise ValueError(f"{n} frames too short for a fall episode of {episode} frames")
    track = _adl_track(onset, rng)
    frames = [render(cx, FLOOR - hl, hl, WIDTH, 0.0, rng) for cx, hl in track]
    cx, hl = track[-1]
    direction = rng.choice([-1, 1])
    for k in range(1, collapse_frames + 1):
        frames.append(_tipped(cx, hl, direction, k / collapse_frames, rng))
    for _ in range(lying_frames):
        frames.append(_tipped(cx, hl, direction, 1.0, rng))
    for k in range(collapse_frames - 1, -1, -1):  # getting back up
        frames.append(_tipped(cx, HEIGHT, direction, k / collapse_frames, rng))
    for x, h in _adl_track(n - len(frames), rng, cx):
        frames.append(render(x, FLOOR - h, h, WIDTH, 0.0, rng))
    return np.stack(frames), (onset + 1, onset + episode)


def generate(cfg: SynthConfig):
    """In-memory dataset: (train videos, test videos) as lists of (id, uint8 frames, fall ranges)."""
    root = np.random.SeedSequence(cfg.seed)
    seqs = root.spawn(cfg.n_train + cfg.n_test)
    train, test = [], []
    for k in range(cfg.n_train):
        rng = np.random.default_rng(seqs[k])
        train.append((f"adl{k + 1:02d}", adl_video(cfg.train_frames, rng), []))
    for k in range(cfg.n_test):
        rng = np.random.default_rng(seqs[cfg.n_train + k])
        frames, rng_fall = fall_video(cfg.test_frames, rng, cfg.collapse_frames)
        test.append((f"fall{k + 1:02d}", frames, [rng_fall]))
    return train, test


def write_pgm(path, img):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_dataset(root, cfg: SynthConfig, fps=25):
    """Write the generated videos in the manifest/annotation layout; returns frame counts by id."""
    train, test = generate(cfg)
    os.makedirs(os.path.join(root, "videos"), exist_ok=True)
    counts = {}
    with open(os.path.join(root, "manifest.csv"), "w", newline="") as mf, \
            open(os.path.join(root, "annotations.csv"), "w", newline="") as af:
        mw, aw = csv.writer(mf), csv.writer(af)
        mw.writerow(["id", "role", "fps"])
        aw.writerow(["id", "start", "end"])
        for role, videos in (("train_adl", train), ("test_fall", test)):
            for vid, frames, falls in videos:
                d = os.path.join(root, "videos", vid)
                os.makedirs(d, exist_ok=True)
                for i, img in enumerate(frames, start=1):
                    write_pgm(os.path.join(d, f"frame_{i:06d}.pgm"), img)
                mw.writerow([vid, role, fps])
                for a, b in falls:
                    aw.writerow([vid, a, b])
                counts[vid] = len(frames)
    return counts
