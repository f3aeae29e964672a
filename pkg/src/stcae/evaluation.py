"""Per-video ROC AUC with fall as the positive class, and report emission."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from stcae import scoring
from stcae.architectures import model_forward
from stcae.errors import ContractError, DegenerateLabels
from stcae.windowing import WindowConfig, make_windows

log = logging.getLogger(__name__)

CROSS_KINDS = ("c_mu", "c_sigma", "frame")
WITHIN_KINDS = ("w_mu", "w_sigma")


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise DegenerateLabels("degenerate labels: need at least one positive and one negative")
    return scores, labels


def auc(scores, labels):
    """P(pos > neg) + 0.5 P(pos == neg) via midranks."""
    scores, labels = _check(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    r = np.empty(len(s))
    r[order] = ranks
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    u = r[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """ROC points (fpr, tpr, threshold) with one threshold per distinct score.

    The first point is (0, 0) at threshold +inf; a sample is predicted
    positive when its score >= threshold.
    """
    scores, labels = _check(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tpr = np.r_[0.0, tp[last] / tp[-1]]
    fpr = np.r_[0.0, fp[last] / fp[-1]]
    thr = np.r_[np.inf, s[last]]
    return fpr, tpr, thr


def trapezoid_auc(fpr, tpr):
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class RocResult:
    video_id: str
    fpr: list
    tpr: list
    thresholds: list
    auc: float


@dataclass
class AggregateReport:
    model: str
    score_kind: str
    per_video: list = field(default_factory=list)  # RocResult
    alpha: Optional[int] = None
    skipped: list = field(default_factory=list)
    mean_auc: float = float("nan")
    std_auc: float = float("nan")
    scores: dict = field(default_factory=dict)  # video id -> (scores, labels), for CSV export

    def finalize(self):
        a = np.array([r.auc for r in self.per_video], dtype=np.float64)
        if len(a):
            self.mean_auc = float(a.mean())
            self.std_auc = float(a.std())
        return self

    def summary(self):
        out = {"model": self.model, "score_kind": self.score_kind}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        out["per_video"] = [{"id": r.video_id, "auc": r.auc} for r in self.per_video]
        out["mean_auc"] = self.mean_auc
        out["std_auc"] = self.std_auc
        if self.skipped:
            out["skipped"] = list(self.skipped)
        return out


def roc_result(video_id, scores, labels):
    fpr, tpr, thr = roc_curve(scores, labels)
    return RocResult(video_id, fpr.tolist(), tpr.tolist(), thr.tolist(), auc(scores, labels))


def aggregate(model, score_kind, series, alpha=None):
    """Build a report from (video_id, scores, labels) triples, skipping single-class videos."""
    rep = AggregateReport(model, score_kind, alpha=alpha)
    for vid, s, y in series:
        rep.scores[vid] = (np.asarray(s, dtype=np.float64), np.asarray(y, dtype=bool))
        try:
            rep.per_video.append(roc_result(vid, s, y))
        except DegenerateLabels:
            log.warning("video %s skipped from %s aggregate: single-class labels", vid, score_kind)
            rep.skipped.append(vid)
    return rep.finalize()


# -- model-driven evaluation ------------------------------------------------------

def _reconstruct(spec, params, x, batch_size):
    out = np.empty_like(x)
    for a in range(0, len(x), batch_size):
        out[a:a + batch_size], _ = model_forward(spec, params, x[a:a + batch_size], training=False)
    return out


def video_recon_errors(spec, params, frames, batch_size=16, video_id=""):
    """ReconErrorMatrix for a 3D model or per-frame errors for a 2D model."""
    frames = np.asarray(frames, dtype=np.float32)
    if spec.is_3d:
        ws = make_windows(frames, WindowConfig(spec.input_shape[0]), video_id)
        out = _reconstruct(spec, params, ws.windows, batch_size)
        return scoring.recon_error_matrix(out, ws.windows, video_id)
    out = _reconstruct(spec, params, frames, batch_size)
    return scoring.frame_errors(out, frames)


def evaluate_cross_context(spec, params, videos, score_kind="c_sigma", batch_size=16, model_name=None):
    """One AUC per test video from per-frame scores.

    ``videos`` yields (video_id, frames, frame_labels). 3D models use the
    cross-context mean or std; 2D models use the frame reconstruction error.
    """
    score_kind = score_kind.lower()
    if score_kind not in CROSS_KINDS:
        raise ContractError(f"cross-context score kind must be one of {CROSS_KINDS}")
    if spec.is_3d and score_kind == "frame":
        raise ContractError("3D models score frames with c_mu or c_sigma")
    if not spec.is_3d:
        score_kind = "frame"
    series = []
    for vid, frames, labels in videos:
        if labels is None:
            raise ContractError(f"video {vid}: missing fall annotations")
        labels = np.asarray(labels, dtype=bool)
        if spec.is_3d:
            R = video_recon_errors(spec, params, frames, batch_size, vid)
            fs = scoring.cross_context_scores(R, labels)
            s = fs.c_mu if score_kind == "c_mu" else fs.c_sigma
        else:
            s = video_recon_errors(spec, params, frames, batch_size, vid)
        series.append((vid, s, labels))
    return aggregate(model_name or spec.variant, score_kind, series)


def within_series(spec, params, videos, batch_size=16):
    """Per video: (id, WindowScoreSeries without labels, frame labels)."""
    out = []
    for vid, frames, labels in videos:
        if labels is None:
            raise ContractError(f"video {vid}: missing fall annotations")
        R = video_recon_errors(spec, params, frames, batch_size, vid)
        out.append((vid, scoring.within_context_scores(R), np.asarray(labels, dtype=bool)))
    return out


def within_report(model, series, score_kind, alpha, window_length):
    rows = []
    for vid, ws, labels in series:
        y, _ = scoring.label_windows(labels, window_length, alpha)
        s = ws.w_mu if score_kind == "w_mu" else ws.w_sigma
        rows.append((vid, s, y))
    return aggregate(model, score_kind, rows, alpha=alpha)


def evaluate_within_context(spec, params, videos, score_kind="w_mu", alpha=8, batch_size=16,
                            model_name=None):
    """One AUC per test video from per-window scores against alpha-derived window labels."""
    score_kind = score_kind.lower()
    if not spec.is_3d:
        raise ContractError("within-context scores exist only for the DSTCAE variants")
    if score_kind not in WITHIN_KINDS:
        raise ContractError(f"within-context score kind must be one of {WITHIN_KINDS}")
    T = spec.input_shape[0]
    if not 1 <= alpha <= T:
        raise ContractError(f"alpha must be in 1..{T}, got {alpha}")
    series = within_series(spec, params, videos, batch_size)
    return within_report(model_name or spec.variant, series, score_kind, alpha, T)


def alpha_sweep(spec, params, videos, score_kind="w_mu", batch_size=16, model_name=None):
    """Reports for alpha = 1..T, reusing one pass of reconstructions."""
    if not spec.is_3d:
        raise ContractError("within-context scores exist only for the DSTCAE variants")
    T = spec.input_shape[0]
    series = within_series(spec, params, videos, batch_size)
    return [within_report(model_name or spec.variant, series, score_kind, a, T)
            for a in range(1, T + 1)]


# -- emission --------------------------------------------------------------------

def _stem(report):
    stem = report.score_kind
    if report.alpha is not None:
        stem += f"_alpha{report.alpha}"
    return stem


def summary_json(report):
    return json.dumps(report.summary(), indent=2, sort_keys=False) + "\n"


def emit_report(report, outdir):
    """Write <stem>.json plus <stem>_roc.csv and <stem>_scores.csv; returns the paths."""
    stem = _stem(report)
    paths = {
        "summary": os.path.join(outdir, f"{stem}.json"),
        "roc": os.path.join(outdir, f"{stem}_roc.csv"),
        "scores": os.path.join(outdir, f"{stem}_scores.csv"),
    }
    try:
        os.makedirs(outdir, exist_ok=True)
        with open(paths["summary"], "w") as fh:
            fh.write(summary_json(report))
        with open(paths["roc"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["video", "threshold", "fpr", "tpr"])
            for r in report.per_video:
                for t, f, p in zip(r.thresholds, r.fpr, r.tpr):
                    w.writerow([r.video_id, repr(float(t)), repr(float(f)), repr(float(p))])
        with open(paths["scores"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["video", "index", "score", "label"])
            for vid, (s, y) in report.scores.items():
                for i, (a, b) in enumerate(zip(s, y), start=1):
                    w.writerow([vid, i, repr(float(a)), int(b)])
    except OSError as exc:
        raise OSError(f"cannot write report to {outdir}: {exc}") from exc
    return paths


def load_summary(path):
    with open(path) as fh:
        return json.load(fh)


def write_recon_matrix_csv(R, path):
    """One row per (window, frame) entry: window, frame (1-based), error."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "frame", "error"])
        D, T = R.values.shape
        for i in range(D):
            for k in range(T):
                w.writerow([i + 1, i + k + 1, repr(float(R.values[i, k]))])


__all__ = [
    "AggregateReport", "RocResult", "auc", "roc_curve", "trapezoid_auc", "aggregate",
    "evaluate_cross_context", "evaluate_within_context", "alpha_sweep", "emit_report",
    "summary_json", "load_summary", "video_recon_errors", "write_recon_matrix_csv",
]
