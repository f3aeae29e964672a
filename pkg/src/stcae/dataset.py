"""On-disk dataset layout, frame decoding and preprocessing.

Layout under a dataset root::

    manifest.csv        id,role,fps     (role: train_adl | test_fall)
    annotations.csv     id,start,end    (1-based inclusive fall-frame ranges)
    videos/<id>/frame_000001.png        (or .pgm), in temporal order

Frames are converted to 8-bit grayscale, resized to 64x64 with bilinear
interpolation, scaled to [0, 1] and shifted to zero per-frame mean.
"""

from __future__ import annotations

import csv
import glob
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from stcae.errors import DataError

log = logging.getLogger(__name__)

ROLES = ("train_adl", "test_fall")
FRAME_SIZE = 64
HOLE_FRACTION = 0.05


@dataclass
class VideoManifest:
    video_id: str
    role: str
    frame_paths: list
    fps: float = 0.0

    @property
    def num_frames(self):
        return len(self.frame_paths)


@dataclass
class FallAnnotation:
    video_id: str
    ranges: list = field(default_factory=list)  # sorted, non-overlapping (start, end)

    def frame_labels(self, num_frames):
        labels = np.zeros(num_frames, dtype=bool)
        for a, b in self.ranges:
            labels[a - 1:b] = True
        return labels


def _read_csv(path, header):
    if not os.path.exists(path):
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != header:
        raise DataError(f"{path}:1: expected header {','.join(header)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{n}: expected {len(header)} fields, got {len(row)}")
        out.append((n, [c.strip() for c in row]))
    return out


def list_frames(video_dir):
    paths = glob.glob(os.path.join(video_dir, "frame_*.png")) + \
        glob.glob(os.path.join(video_dir, "frame_*.pgm"))
    return sorted(paths)


def load_manifest(root):
    """Parse manifest.csv and annotations.csv; returns (manifests, {id: FallAnnotation})."""
    mpath = os.path.join(root, "manifest.csv")
    apath = os.path.join(root, "annotations.csv")
    manifests = []
    seen = set()
    for n, (vid, role, fps) in _read_csv(mpath, ["id", "role", "fps"]):
        if role not in ROLES:
            raise DataError(f"{mpath}:{n}: role must be one of {ROLES}, got {role!r}")
        if vid in seen:
            raise DataError(f"{mpath}:{n}: duplicate video id {vid!r}")
        seen.add(vid)
        try:
            fps_v = float(fps) if fps else 0.0
        except ValueError:
            raise DataError(f"{mpath}:{n}: fps {fps!r} is not a number") from None
        vdir = os.path.join(root, "videos", vid)
        frames = list_frames(vdir)
        if not frames:
            raise DataError(f"{mpath}:{n}: no frame files in {vdir}")
        manifests.append(VideoManifest(vid, role, frames, fps_v))

    counts = {m.video_id: m.num_frames for m in manifests}
    annotations = {m.video_id: FallAnnotation(m.video_id) for m in manifests}
    raw = {}
    for n, (vid, a, b) in _read_csv(apath, ["id", "start", "end"]):
        if vid not in counts:
            raise DataError(f"{apath}:{n}: unknown video id {vid!r}")
        try:
            start, end = int(a), int(b)
        except ValueError:
            raise DataError(f"{apath}:{n}: start/end must be integers") from None
        if not 1 <= start <= end <= counts[vid]:
            raise DataError(
                f"{apath}:{n}: range ({start}, {end}) outside frames 1..{counts[vid]} of {vid}")
        raw.setdefault(vid, []).append((start, end, n))
    for vid, items in raw.items():
        items.sort()
        for (s0, e0, _), (s1, e1, n1) in zip(items, items[1:]):
            if s1 <= e0:
                raise DataError(f"{apath}:{n1}: range ({s1}, {e1}) overlaps ({s0}, {e0}) of {vid}")
        annotations[vid].ranges = [(s, e) for s, e, _ in items]
    return manifests, annotations


def decode_frame(path):
    """8-bit grayscale pixmap (H, W); colour uses Y = 0.299 R + 0.587 G + 0.114 B."""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                return np.array(img, dtype=np.uint8)
            if mode in ("1", "LA"):
                return np.array(img.convert("L"), dtype=np.uint8)
            if mode in ("RGB", "RGBA", "P", "PA"):
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
            else:
                raise DataError(f"{path}: unsupported image mode {mode}")
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def resize_bilinear(pix, out_h=FRAME_SIZE, out_w=FRAME_SIZE):
    """Bilinear resize with pixel-centre alignment and edge clamping."""
    src = np.asarray(pix, dtype=np.float64)
    if src.ndim != 2 or src.size == 0:
        raise DataError(f"cannot resize pixmap of shape {src.shape}")
    h, w = src.shape

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, wy = axis(h, out_h)
    x0, x1, wx = axis(w, out_w)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy)[:, None] + bot * wy[:, None]


def normalize(pix):
    """x / 255 minus the frame mean; returns float32 (H, W, 1) in [-1, 1]."""
    x = np.asarray(pix, dtype=np.float64) / 255.0
    x = x - x.mean()
    return x[..., None].astype(np.float32)


def hole_fraction(pix):
    return float(np.mean(np.asarray(pix) == 0))


def preprocess_frame(path, expect_filled=False):
    pix = decode_frame(path)
    if expect_filled and hole_fraction(pix) > HOLE_FRACTION:
        log.warning("%s: %.1f%% zero pixels, depth holes may be unfilled",
                    path, 100 * hole_fraction(pix))
    return normalize(resize_bilinear(pix))


def load_video(manifest: VideoManifest, expect_filled=False):
    """(V, 64, 64, 1) float32 frames of one video."""
    return np.stack([preprocess_frame(p, expect_filled) for p in manifest.frame_paths])


def load_split(root, role, expect_filled=False):
    """[(video_id, frames, frame_labels)] for one role, in manifest order."""
    manifests, annotations = load_manifest(root)
    out = []
    for m in manifests:
        if m.role != role:
            continue
        frames = load_video(m, expect_filled)
        out.append((m.video_id, frames, annotations[m.video_id].frame_labels(m.num_frames)))
    return out
