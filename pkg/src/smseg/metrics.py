"""Confusion-matrix segmentation metrics: per-class IoU, sIoU/uIoU, hIoU."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalConfig:
    num_classes: int
    seen_ids: tuple
    unseen_ids: tuple
    ignore_id: int = 255

    def __post_init__(self):
        seen = tuple(int(i) for i in self.seen_ids)
        unseen = tuple(int(i) for i in self.unseen_ids)
        object.__setattr__(self, "seen_ids", seen)
        object.__setattr__(self, "unseen_ids", unseen)
        if set(seen) & set(unseen):
            raise ValueError("seen and unseen class ids overlap")
        ids = set(seen) | set(unseen)
        if ids and not ids <= set(range(self.num_classes)):
            raise ValueError(f"class ids outside [0, {self.num_classes})")
        if 0 <= self.ignore_id < self.num_classes:
            raise ValueError("ignore_id must lie outside the class range")


@dataclass
class MetricsReport:
    per_class_iou: np.ndarray        # f64, NaN where a class never occurs
    siou: float
    uiou: float
    hiou: float
    percent: bool = True

    def to_dict(self):
        per_class = [None if math.isnan(v) else float(v) for v in self.per_class_iou]
        return {"per_class_iou": per_class, "sIoU": self.siou,
                "uIoU": self.uiou, "hIoU": self.hiou,
                "scale": "percent" if self.percent else "fraction"}


def confusion_matrix(pred, gt, cfg):
    """counts[g][p] over pixels whose ground truth is not ignored."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    n = cfg.num_classes
    valid = gt != cfg.ignore_id
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if g.size and (g.min() < 0 or g.max() >= n):
        raise ValueError(f"gt labels outside [0, {n})")
    if p.size and (p.min() < 0 or p.max() >= n):
        raise ValueError(f"pred labels outside [0, {n})")
    return np.bincount(g * n + p, minlength=n * n).reshape(n, n)


def iou_per_class(cm):
    """TP / (TP + FP + FN) per class; NaN when a class never occurs."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore"):
        return np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), np.nan)


def subset_miou(cm, ids):
    """Mean IoU over the given ids, skipping classes absent from gt and pred."""
    ids = list(ids)
    if not ids:
        raise ValueError("subset_miou needs a non-empty id set")
    vals = iou_per_class(cm)[ids]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else 0.0


def hiou(siou, uiou):
    """Harmonic mean of seen and unseen mIoU; 0 when both are 0."""
    if siou < 0 or uiou < 0:
        raise ValueError("IoU values must be non-negative")
    if siou + uiou == 0:
        return 0.0
    return 2.0 * siou * uiou / (siou + uiou)


def evaluate(pred, gt, cfg, percent=True):
    cm = confusion_matrix(pred, gt, cfg)
    scale = 100.0 if percent else 1.0
    siou = scale * subset_miou(cm, cfg.seen_ids) if cfg.seen_ids else 0.0
    uiou = scale * subset_miou(cm, cfg.unseen_ids) if cfg.unseen_ids else 0.0
    return MetricsReport(per_class_iou=scale * iou_per_class(cm),
                         siou=siou, uiou=uiou, hiou=hiou(siou, uiou),
                         percent=percent)
