"""Hard-mask evaluation: per-class Dice/IOU, confusion matrix, pixel accuracy."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


@dataclass
class SegmentationResult:
    dice: np.ndarray  # [K], NaN where the class is undefined (absent in both masks)
    iou: np.ndarray
    mean_dice: float
    mean_iou: float
    confusion: np.ndarray  # [K, K], rows = truth, cols = prediction
    pixel_acc: np.ndarray  # [K], NaN where a class has no ground-truth pixels

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)


def confusion_matrix(pred, truth, k: int) -> np.ndarray:
    pred = np.asarray(pred).ravel().astype(np.int64)
    truth = np.asarray(truth).ravel().astype(np.int64)
    return np.bincount(truth * k + pred, minlength=k * k).reshape(k, k)


def _pixel_acc(conf):
    rows = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(conf) / np.maximum(rows, 1), np.nan)


def scores_from_confusion(conf: np.ndarray):
    """Per-class Dice and IOU; NaN for classes absent from both masks."""
    tp = np.diag(conf).astype(np.float64)
    p = conf.sum(axis=0).astype(np.float64)
    g = conf.sum(axis=1).astype(np.float64)
    defined = (p + g) > 0
    dice = np.full(conf.shape[0], np.nan)
    iou = np.full(conf.shape[0], np.nan)
    dice[defined] = 2 * tp[defined] / (p[defined] + g[defined])
    iou[defined] = tp[defined] / (p[defined] + g[defined] - tp[defined])
    return dice, iou


def _foreground_mean(values):
    fg = values[1:]
    fg = fg[~np.isnan(fg)]
    # no instrument in either mask: nothing was missed or hallucinated
    return float(fg.mean()) if fg.size else 1.0


def evaluate(pred, truth, k: int) -> SegmentationResult:
    """Score a predicted class mask against ground truth.

    Means cover foreground classes present in the truth or the prediction;
    background enters only the confusion matrix and pixel accuracy.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    for name, m in (("pred", pred), ("truth", truth)):
        if m.size and (m.min() < 0 or m.max() >= k):
            raise ValueError(f"{name} holds ids outside [0, {k})")
    conf = confusion_matrix(pred, truth, k)
    dice, iou = scores_from_confusion(conf)
    return SegmentationResult(dice, iou, _foreground_mean(dice), _foreground_mean(iou), conf, _pixel_acc(conf))


@dataclass
class Report:
    mean_dice: float
    mean_iou: float
    dice: np.ndarray
    iou: np.ndarray
    confusion: np.ndarray
    pixel_acc: np.ndarray
    num_images: int = field(default=1)

    @property
    def support(self):
        return self.confusion.sum(axis=1)


def aggregate(results: Sequence[SegmentationResult]) -> Report:
    """Dataset report: per-image means averaged, confusion matrices summed."""
    results = list(results)
    if not results:
        raise ValueError("aggregate needs at least one result")
    conf = sum(r.confusion for r in results)
    with warnings.catch_warnings():
        # classes undefined in every image stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        dice = np.nanmean(np.stack([r.dice for r in results]), axis=0)
        iou = np.nanmean(np.stack([r.iou for r in results]), axis=0)
    return Report(
        mean_dice=float(np.mean([r.mean_dice for r in results])),
        mean_iou=float(np.mean([r.mean_iou for r in results])),
        dice=dice,
        iou=iou,
        confusion=conf,
        pixel_acc=_pixel_acc(conf),
        num_images=len(results),
    )


def evaluate_batch(pred, truth, k: int) -> List[SegmentationResult]:
    return [evaluate(p, t, k) for p, t in zip(pred, truth)]


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.6f}"


def write_report_csv(report: Report, path, class_names=None) -> None:
    """One row per class plus a summary row: class,dice,iou,pixel_acc,support."""
    k = report.confusion.shape[0]
    names = class_names or [str(c) for c in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "dice", "iou", "pixel_acc", "support"])
        for c in range(k):
            writer.writerow([names[c], _fmt(float(report.dice[c])), _fmt(float(report.iou[c])),
                             _fmt(float(report.pixel_acc[c])), int(report.support[c])])
        writer.writerow(["mean", _fmt(report.mean_dice), _fmt(report.mean_iou),
                         _fmt(float(np.trace(report.confusion) / max(1, report.confusion.sum()))),
                         int(report.confusion.sum())])
