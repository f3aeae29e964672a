"""Reconstruction errors and the cross-context / within-context anomaly scores.

For a video windowed with length T and stride 1, window i (0-based here)
holds frames i .. i+T-1. ``R[i, k]`` is the squared reconstruction error of
frame ``i + k`` inside window ``i``.

Cross-context scores aggregate, per frame, the errors from every window that
contains the frame; within-context scores aggregate, per window, the errors of
its T frames. Standard deviations are population deviations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from stcae.errors import ContractError


@dataclass
class ReconErrorMatrix:
    video_id: str
    values: np.ndarray  # (D, T), row i holds frames i .. i+T-1

    @property
    def num_windows(self):
        return self.values.shape[0]

    @property
    def window_length(self):
        return self.values.shape[1]

    @property
    def num_frames(self):
        return self.num_windows + self.window_length - 1

    def get(self, i, j):
        """Error of frame j in window i (both 0-based); None if j is not in window i."""
        k = j - i
        if 0 <= k < self.window_length and 0 <= i < self.num_windows:
            return float(self.values[i, k])
        return None

    def dense(self):
        """(D, V) array with NaN where frame j is not in window i."""
        D, T = self.values.shape
        out = np.full((D, self.num_frames), np.nan)
        for i in range(D):
            out[i, i:i + T] = self.values[i]
        return out


@dataclass
class FrameScoreSeries:
    video_id: str
    c_mu: np.ndarray
    c_sigma: np.ndarray
    labels: Optional[np.ndarray] = None


@dataclass
class WindowScoreSeries:
    video_id: str
    w_mu: np.ndarray
    w_sigma: np.ndarray
    fall_counts: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None


def recon_error_matrix(outputs, inputs, video_id=""):
    """Per-frame squared L2 residual of every window: inputs/outputs are (D, T, H, W, C)."""
    outputs = np.asarray(outputs)
    inputs = np.asarray(inputs)
    if outputs.shape != inputs.shape or outputs.ndim != 5:
        raise ContractError(f"reconstruction shape {outputs.shape} != input shape {inputs.shape}")
    diff = inputs.astype(np.float64) - outputs.astype(np.float64)
    return ReconErrorMatrix(video_id, np.einsum("dthwc,dthwc->dt", diff, diff))


def frame_errors(outputs, inputs):
    """Per-frame squared residual for 2D models: (V, H, W, C) -> (V,)."""
    outputs = np.asarray(outputs)
    inputs = np.asarray(inputs)
    if outputs.shape != inputs.shape:
        raise ContractError(f"reconstruction shape {outputs.shape} != input shape {inputs.shape}")
    diff = (inputs.astype(np.float64) - outputs.astype(np.float64)).reshape(len(inputs), -1)
    return np.einsum("vn,vn->v", diff, diff)


def cross_context_scores(R: ReconErrorMatrix, labels=None):
    """Mean and std of each frame's errors over the windows containing it."""
    D, T = R.values.shape
    V = R.num_frames
    total = np.zeros(V)
    count = np.zeros(V)
    for k in range(T):
        total[k:k + D] += R.values[:, k]
        count[k:k + D] += 1
    mu = total / count
    sq = np.zeros(V)
    for k in range(T):
        d = R.values[:, k] - mu[k:k + D]
        sq[k:k + D] += d * d
    sigma = np.sqrt(sq / count)
    return FrameScoreSeries(R.video_id, mu, sigma,
                            None if labels is None else np.asarray(labels, dtype=bool))


def within_context_scores(R: ReconErrorMatrix):
    """Mean and std over the T frame errors of each window."""
    v = R.values
    mu = v.mean(axis=1)
    sigma = np.sqrt(((v - mu[:, None]) ** 2).mean(axis=1))
    return WindowScoreSeries(R.video_id, mu, sigma)


def window_fall_counts(frame_labels, window_length):
    labels = np.asarray(frame_labels, dtype=np.int64)
    if len(labels) < window_length:
        raise ContractError(f"{len(labels)} frame labels < window length {window_length}")
    c = np.concatenate([[0], np.cumsum(labels)])
    return c[window_length:] - c[:-window_length]


def label_windows(frame_labels, window_length, alpha):
    """A window is a fall when it holds at least ``alpha`` fall frames."""
    if not 1 <= alpha <= window_length:
        raise ContractError(f"alpha must be in 1..{window_length}, got {alpha}")
    counts = window_fall_counts(frame_labels, window_length)
    return counts >= alpha, counts
