"""Confusion-matrix segmentation metrics with class-group averages."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import ValidationError

SCANNET20 = (
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
    "bookshelf", "picture", "counter", "desk", "curtain", "refrigerator",
    "shower curtain", "toilet", "sink", "bathtub", "otherfurniture",
)

# Class partition used when reporting ScanNet v2 results by geometric difficulty.
SCANNET20_GROUPS = {
    "geometrically_distinguishable": (
        "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "bookshelf",
    ),
    "geometrically_challenging": (
        "door", "window", "picture", "curtain", "refrigerator", "shower curtain",
    ),
}


@dataclass
class Taxonomy:
    names: tuple[str, ...]
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.names)
        for group, members in self.groups.items():
            unknown = [m for m in members if m not in known]
            if unknown:
                raise ValidationError(f"group {group!r} names unknown classes: {unknown}")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def ungrouped(self) -> tuple[str, ...]:
        grouped = {m for members in self.groups.values() for m in members}
        return tuple(n for n in self.names if n not in grouped)


def scannet20() -> Taxonomy:
    return Taxonomy(SCANNET20, dict(SCANNET20_GROUPS))


def load_taxonomy(spec: str) -> Taxonomy:
    """``"scannet20"``, ``"classes:N"`` or a JSON file ``{"names": [...], "groups": {...}}``."""
    if spec == "scannet20":
        return scannet20()
    if spec.startswith("classes:"):
        n = int(spec.split(":", 1)[1])
        return Taxonomy(tuple(f"class_{i}" for i in range(n)))
    data = json.loads(Path(spec).read_text())
    return Taxonomy(tuple(data["names"]), {k: tuple(v) for k, v in data.get("groups", {}).items()})


class ConfusionMatrix:
    """Counts indexed ``[predicted, true]``."""

    def __init__(self, num_classes: int, counts=None):
        self.num_classes = num_classes
        self.counts = (
            np.zeros((num_classes, num_classes), dtype=np.int64)
            if counts is None else np.asarray(counts, dtype=np.int64).copy()
        )
        if self.counts.shape != (num_classes, num_classes):
            raise ValidationError("confusion matrix shape does not match class count")
        if np.any(self.counts < 0):
            raise ValidationError("negative confusion counts")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValidationError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def update(self, pred, true, ignore_id: int | None = None) -> "ConfusionMatrix":
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        true = np.asarray(true, dtype=np.int64).reshape(-1)
        if pred.shape != true.shape:
            raise ValidationError(f"{len(pred)} predictions for {len(true)} labels")
        keep = np.ones(len(true), dtype=bool) if ignore_id is None else true != ignore_id
        pred, true = pred[keep], true[keep]
        c = self.num_classes
        if np.any((true < 0) | (true >= c)) or np.any((pred < 0) | (pred >= c)):
            raise ValidationError(f"label id outside [0, {c})")
        self.counts += np.bincount(pred * c + true, minlength=c * c).reshape(c, c)
        return self


def accumulate(pred, true, num_classes: int, ignore_id: int | None = None) -> ConfusionMatrix:
    return ConfusionMatrix(num_classes).update(pred, true, ignore_id)


def per_class_scores(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU, accuracy and support per class; NaN where the class has no support."""
    m = cm.counts.astype(np.float64)
    tp = np.diag(m)
    predicted = m.sum(axis=1)
    support = m.sum(axis=0)
    has = support > 0
    union = predicted + support - tp
    iou = np.where(has, tp / np.where(has, union, 1.0), np.nan)
    acc = np.where(has, tp / np.where(has, support, 1.0), np.nan)
    return iou, acc, support


def group_means(per_class_iou: dict[str, float], groups: dict[str, tuple[str, ...]]) -> dict[str, float]:
    """Mean IoU of each group over its members that have a score."""
    out = {}
    for group, members in groups.items():
        vals = [per_class_iou[m] for m in members if per_class_iou.get(m) is not None]
        vals = [v for v in vals if not np.isnan(v)]
        out[group] = float(np.mean(vals)) if vals else float("nan")
    return out


def summarize(cm: ConfusionMatrix, taxonomy: Taxonomy | None = None) -> dict:
    if cm.total == 0:
        raise ValidationError("cannot summarize an empty confusion matrix")
    if taxonomy is None:
        taxonomy = Taxonomy(tuple(f"class_{i}" for i in range(cm.num_classes)))
    if taxonomy.num_classes != cm.num_classes:
        raise ValidationError("taxonomy size does not match confusion matrix")
    iou, acc, support = per_class_scores(cm)
    has = support > 0
    per_class = {
        name: {
            "iou": None if np.isnan(iou[i]) else float(iou[i]),
            "acc": None if np.isnan(acc[i]) else float(acc[i]),
            "support": int(support[i]),
        }
        for i, name in enumerate(taxonomy.names)
    }
    ious = {name: (float(iou[i]) if has[i] else None) for i, name in enumerate(taxonomy.names)}
    groups = dict(taxonomy.groups)
    if groups and taxonomy.ungrouped:
        groups["ungrouped"] = taxonomy.ungrouped
    return {
        "per_class": per_class,
        "absent_classes": [n for i, n in enumerate(taxonomy.names) if not has[i]],
        "mIoU": float(np.mean(iou[has])),
        "mAcc": float(np.mean(acc[has])),
        "OA": float(np.trace(cm.counts) / cm.total),
        "groups": {k: (None if np.isnan(v) else v) for k, v in group_means(ious, groups).items()},
        "scored_points": cm.total,
    }
