"""Calibration, discrimination and screening summaries for binary tasks.

All functions take probabilities in [0, 1] and hard 0/1 labels as flat
arrays. Multi-task matrices with NaN for missing cells go through
macro_average, which applies a single-task metric per column and
averages the columns that were defined.

Binning convention, used everywhere: B equal-width bins over the stated
range; a value lands in bin floor(t * B) of the unit-scaled coordinate
t, clamped so the top of the range falls in the final bin (final bin
right-closed, others half-open).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DataError

THRESHOLD = 0.5


def _validate(probs, labels=None, name: str = "probabilities"):
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if probs.size == 0:
        raise DataError(f"no {name} given")
    if not np.all(np.isfinite(probs)):
        raise DataError(f"{name} contain non-finite values")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise DataError(f"{name} outside [0, 1]")
    if labels is None:
        return probs
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if labels.shape != probs.shape:
        raise DataError(f"{labels.size} labels for {probs.size} {name}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise DataError("labels must be 0 or 1")
    return probs, labels


def _bin_index(t: np.ndarray, n_bins: int) -> np.ndarray:
    # t is the unit-scaled coordinate in [0, 1]
    return np.minimum((t * n_bins).astype(np.int64), n_bins - 1)


# ---------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationReport:
    n_bins: int
    bin_low: np.ndarray
    bin_high: np.ndarray
    bin_count: np.ndarray
    bin_confidence: np.ndarray   # mean confidence, 0 for empty bins
    bin_accuracy: np.ndarray     # empirical accuracy, 0 for empty bins
    ece: float


def ece(probs, labels, n_bins: int = 10) -> CalibrationReport:
    """Expected calibration error over equal-width confidence bins.

    Confidence is max(p, 1-p) in [0.5, 1]; the predicted class is
    [p >= 0.5]; ECE = sum_b (n_b / N) |accuracy_b - confidence_b| with
    empty bins contributing nothing.
    """
    probs, labels = _validate(probs, labels)
    if n_bins < 1:
        raise DataError("need at least one bin")
    confidence = np.maximum(probs, 1.0 - probs)
    correct = ((probs >= THRESHOLD) == (labels == 1.0)).astype(np.float64)
    idx = _bin_index((confidence - 0.5) * 2.0, n_bins)
    count = np.bincount(idx, minlength=n_bins).astype(np.int64)
    conf_sum = np.bincount(idx, weights=confidence, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    filled = count > 0
    mean_conf = np.where(filled, conf_sum / np.maximum(count, 1), 0.0)
    mean_acc = np.where(filled, acc_sum / np.maximum(count, 1), 0.0)
    value = float(np.sum(count / probs.size
                         * np.abs(mean_acc - mean_conf)))
    grid = np.arange(n_bins + 1) / n_bins
    return CalibrationReport(
        n_bins=n_bins, bin_low=0.5 + 0.5 * grid[:-1],
        bin_high=0.5 + 0.5 * grid[1:], bin_count=count,
        bin_confidence=mean_conf, bin_accuracy=mean_acc, ece=value)


# ---------------------------------------------------------------------------
# discrimination


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # 1-based mid-rank
        i = j + 1
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic with mid-rank ties.

    Equals P(score_pos > score_neg) + 0.5 P(score_pos == score_neg)
    over all positive-negative pairs.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DataError("no scores given")
    if scores.shape != labels.shape:
        raise DataError(f"{labels.size} labels for {scores.size} scores")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise DataError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("single-class input: auroc undefined, "
                        "report the cell as missing")
    ranks = _midranks(scores)
    u = ranks[labels == 1.0].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_predicted_positives: bool


def classification_metrics(probs, labels,
                           threshold: float = THRESHOLD
                           ) -> ClassificationMetrics:
    """Threshold metrics; degenerate ratios fall back to 0 with a flag."""
    probs, labels = _validate(probs, labels)
    pred = probs >= threshold
    pos = labels == 1.0
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    no_pred_pos = (tp + fp) == 0
    precision = 0.0 if no_pred_pos else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 \
        else 2.0 * precision * recall / (precision + recall)
    return ClassificationMetrics(
        accuracy=(tp + tn) / probs.size, precision=precision,
        recall=recall, f1=f1, tp=tp, fp=fp, tn=tn, fn=fn,
        zero_predicted_positives=no_pred_pos)


# ---------------------------------------------------------------------------
# histograms


@dataclass
class ConfusionHistogram:
    bin_low: np.ndarray
    bin_high: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.bin_low.size

    def totals(self) -> dict[str, int]:
        return {k: int(getattr(self, k).sum())
                for k in ("tp", "fp", "tn", "fn")}


def confusion_histogram(probs, labels, n_bins: int = 20
                        ) -> ConfusionHistogram:
    """Per-probability-bin outcome counts at the 0.5 threshold."""
    probs, labels = _validate(probs, labels)
    if n_bins < 1:
        raise DataError("need at least one bin")
    idx = _bin_index(probs, n_bins)
    pred = probs >= THRESHOLD
    pos = labels == 1.0
    grid = np.arange(n_bins + 1) / n_bins

    def count(mask):
        return np.bincount(idx[mask], minlength=n_bins).astype(np.int64)

    return ConfusionHistogram(
        bin_low=grid[:-1], bin_high=grid[1:],
        tp=count(pred & pos), fp=count(pred & ~pos),
        tn=count(~pred & ~pos), fn=count(~pred & pos))


@dataclass
class ScreeningSummary:
    n_total: int
    n_below: int
    n_above: int
    low: float
    high: float
    bin_low: np.ndarray
    bin_high: np.ndarray
    counts: np.ndarray

    @property
    def extreme_fraction(self) -> float:
        return (self.n_below + self.n_above) / self.n_total


def screening_summary(probs, low: float = 0.05, high: float = 0.95,
                      n_bins: int = 20) -> ScreeningSummary:
    """How much of an unlabeled library gets an extreme probability."""
    probs = _validate(probs)
    idx = _bin_index(probs, n_bins)
    grid = np.arange(n_bins + 1) / n_bins
    return ScreeningSummary(
        n_total=probs.size,
        n_below=int(np.sum(probs < low)),
        n_above=int(np.sum(probs > high)),
        low=low, high=high, bin_low=grid[:-1], bin_high=grid[1:],
        counts=np.bincount(idx, minlength=n_bins).astype(np.int64))


# ---------------------------------------------------------------------------
# multi-task aggregation


def macro_average(metric: Callable[[np.ndarray, np.ndarray], float],
                  probs, labels
                  ) -> tuple[float, list[Optional[float]]]:
    """Column-wise metric over non-missing cells, averaged across tasks.

    NaN labels mark missing cells. Tasks where the metric is undefined
    (e.g. single-class auroc) are skipped and reported as None; at least
    one task must be defined.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.ndim != 2 or probs.shape != labels.shape:
        raise DataError(f"need matching (n, tasks) matrices, got "
                        f"{probs.shape} and {labels.shape}")
    per_task: list[Optional[float]] = []
    for t in range(probs.shape[1]):
        present = ~np.isnan(labels[:, t])
        if not present.any():
            per_task.append(None)
            continue
        try:
            per_task.append(float(metric(probs[present, t],
                                         labels[present, t])))
        except DataError:
            per_task.append(None)
    defined = [v for v in per_task if v is not None]
    if not defined:
        raise DataError("metric undefined for every task")
    return float(np.mean(defined)), per_task


def aggregate_across_seeds(per_seed: Sequence[dict]) -> dict:
    """Mean and std (sample std for n > 1) per metric name across runs."""
    if not per_seed:
        raise DataError("no per-seed metrics to aggregate")
    names = sorted({k for d in per_seed for k in d
                    if isinstance(d[k], (int, float)) and d[k] is not True
                    and d[k] is not False})
    out = {}
    for name in names:
        vals = np.array([float(d[name]) for d in per_seed if name in d])
        out[name] = {"mean": float(vals.mean()),
                     "std": float(vals.std(ddof=1)) if vals.size > 1
                     else 0.0,
                     "n": int(vals.size)}
    return out


# ---------------------------------------------------------------------------
# report writers


def write_metrics_json(path: str, payload: dict) -> None:
    def clean(x):
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        if isinstance(x, np.ndarray):
            return x.tolist()
        return x

    with open(path, "w") as fh:
        json.dump(clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(path: str, hist: ConfusionHistogram) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "tp", "fp", "tn", "fn"])
        for i in range(hist.n_bins):
            writer.writerow([f"{hist.bin_low[i]:g}",
                             f"{hist.bin_high[i]:g}",
                             int(hist.tp[i]), int(hist.fp[i]),
                             int(hist.tn[i]), int(hist.fn[i])])


_PALETTE = ("#2a9d8f", "#e76f51", "#457b9d", "#e9c46a",
            "#8d5a97", "#6c757d")


def render_histogram_svg(path: str, bin_low, bin_high,
                         series: dict[str, np.ndarray],
                         title: str = "") -> None:
    """Hand-rolled stacked bar chart; one bar per bin, one layer per series."""
    bin_low = np.asarray(bin_low, dtype=np.float64)
    bin_high = np.asarray(bin_high, dtype=np.float64)
    names = list(series)
    stacks = np.stack([np.asarray(series[n], dtype=np.float64)
                       for n in names])
    if stacks.shape[1] != bin_low.size:
        raise DataError("series length does not match bin count")
    width, height, margin = 720, 360, 48
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    top = max(float(stacks.sum(axis=0).max()), 1.0)
    n = bin_low.size
    bar_w = plot_w / n
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        parts.append(f'<text x="{width / 2}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{title}'
                     f'</text>')
    for k, name in enumerate(names):
        x = margin + 110 * k
        color = _PALETTE[k % len(_PALETTE)]
        parts.append(f'<rect x="{x}" y="{height - 20}" width="12" '
                     f'height="12" fill="{color}"/>')
        parts.append(f'<text x="{x + 16}" y="{height - 9}" '
                     f'font-family="sans-serif" font-size="12">{name}'
                     f'</text>')
    for i in range(n):
        y_cursor = margin + plot_h
        for k in range(len(names)):
            h = stacks[k, i] / top * plot_h
            if h <= 0:
                continue
            y_cursor -= h
            parts.append(
                f'<rect x="{margin + i * bar_w + 1:.2f}" '
                f'y="{y_cursor:.2f}" width="{bar_w - 2:.2f}" '
                f'height="{h:.2f}" '
                f'fill="{_PALETTE[k % len(_PALETTE)]}"/>')
        if n <= 25:
            parts.append(
                f'<text x="{margin + (i + 0.5) * bar_w:.2f}" '
                f'y="{margin + plot_h + 14}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="9">'
                f'{bin_low[i]:g}</text>')
    parts.append(f'<line x1="{margin}" y1="{margin + plot_h}" '
                 f'x2="{margin + plot_w}" y2="{margin + plot_h}" '
                 f'stroke="black"/>')
    parts.append("</svg>")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    os.replace(tmp, path)
