"""Confusion-matrix accumulation and IoU reporting.

IoU for class c is TP / (TP + FP + FN). A class with an all-zero
denominator (never in the ground truth, never predicted) is undefined
and excluded from every mean rather than scored 0 or 1. Group and
overall means average the defined classes only; background (id 0)
participates unless explicitly excluded.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class IoUReport:
    per_class: dict  # class id -> IoU in [0, 1]; undefined classes absent
    group_miou: dict  # group label -> mean IoU over the group's defined classes
    overall: float  # mean over all defined (possibly background-excluded) classes


def new_confusion(num_classes):
    if num_classes < 1:
        raise ContractViolation("confusion matrix needs >= 1 class")
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(cm, gt, pred):
    """Add one prediction/ground-truth pair into cm (rows gt, cols pred)."""
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    if gt.shape != pred.shape:
        raise ContractViolation("gt and prediction shapes differ")
    k = cm.shape[0]
    if gt.min() < 0 or gt.max() >= k or pred.min() < 0 or pred.max() >= k:
        raise ContractViolation(f"labels outside [0, {k})")
    counts = np.bincount(gt * k + pred, minlength=k * k)
    cm += counts.reshape(k, k)
    return cm


def iou_per_class(cm):
    """(iou, defined) arrays of length K; iou is 0.0 where undefined."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - np.diag(cm)
    fn = cm.sum(axis=1) - np.diag(cm)
    denom = tp + fp + fn
    defined = denom > 0
    iou = np.zeros(cm.shape[0])
    iou[defined] = tp[defined] / denom[defined]
    return iou, defined


def class_range_label(class_ids):
    """Compact label for a class group: "1-3" when contiguous, else "4,7"."""
    ids = sorted(class_ids)
    if not ids:
        raise ContractViolation("empty class group")
    if len(ids) == 1:
        return str(ids[0])
    if ids == list(range(ids[0], ids[-1] + 1)):
        return f"{ids[0]}-{ids[-1]}"
    return ",".join(str(i) for i in ids)


def iou_report(cm, groups=None, include_background=True):
    """Summarize a confusion matrix; means skip undefined classes.

    groups maps a display label to a set of class ids. Means over groups
    ignore the background flag (groups are explicit id sets).
    """
    iou, defined = iou_per_class(cm)
    k = cm.shape[0]
    per_class = {c: float(iou[c]) for c in range(k) if defined[c]}
    group_miou = {}
    for label, ids in (groups or {}).items():
        if any(c < 0 or c >= k for c in ids):
            raise ContractViolation(f"group {label!r} references unknown classes")
        vals = [per_class[c] for c in sorted(ids) if c in per_class]
        if vals:
            group_miou[label] = float(np.mean(vals))
    pool = [v for c, v in per_class.items() if include_background or c != 0]
    if not pool:
        raise ContractViolation("no defined classes to average")
    return IoUReport(per_class, group_miou, float(np.mean(pool)))


def _pct(x):
    return f"{100.0 * x:.1f}"


def write_iou_csv(cm, path, groups=None, class_names=None, include_background=True):
    """One row per class id with raw counts; group/overall footer rows.

    Undefined classes keep their counts but leave the IoU cell empty.
    """
    iou, defined = iou_per_class(cm)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    report = iou_report(cm, groups, include_background)
    names = dict(class_names or {})
    names.setdefault(0, "background")
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id", "name", "tp", "fp", "fn", "iou_pct"])
        for c in range(cm.shape[0]):
            w.writerow(
                [
                    c,
                    names.get(c, f"class_{c}"),
                    int(tp[c]),
                    int(fp[c]),
                    int(fn[c]),
                    _pct(iou[c]) if defined[c] else "",
                ]
            )
        for label in report.group_miou:
            w.writerow(["", f"group:{label}", "", "", "", _pct(report.group_miou[label])])
        w.writerow(["", "overall", "", "", "", _pct(report.overall)])
