"""Proposal post-processing: greedy NMS, top-K, and anchor labelling."""

from __future__ import annotations

from dataclasses import dataclass

from .core import BoundingBox, iou

DEFAULT_NMS_THRESHOLD = 0.7
DEFAULT_TOP_K = 80
POSITIVE_IOU = 0.7
NEGATIVE_IOU = 0.3

POSITIVE, NEGATIVE, IGNORE = "positive", "negative", "ignore"


@dataclass(frozen=True)
class Proposal:
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not isinstance(self.box, BoundingBox):
            object.__setattr__(self, "box", BoundingBox(*self.box))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _rank_key(p: Proposal):
    b = p.box
    # Ties on score go to the earlier row-major origin, then the smaller box.
    return (-p.score, b.y0, b.x0, b.y1, b.x1)


def ranked(props) -> list[Proposal]:
    return sorted(props, key=_rank_key)


def nms(props, iou_threshold: float = DEFAULT_NMS_THRESHOLD) -> list[Proposal]:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    remaining = ranked(props)
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [p for p in remaining if iou(top.box, p.box) <= iou_threshold]
    return kept


def top_k(props, k: int = DEFAULT_TOP_K) -> list[Proposal]:
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    return ranked(props)[:k]


def assign_samples(anchors, gt, pos_thresh: float = POSITIVE_IOU,
                   neg_thresh: float = NEGATIVE_IOU) -> list[str]:
    """Strict thresholds: > pos_thresh is positive, < neg_thresh is negative."""
    if not pos_thresh > neg_thresh:
        raise ValueError("pos_thresh must exceed neg_thresh")
    gt = list(gt)
    if not gt:
        return [NEGATIVE for _ in anchors]
    out = []
    for a in anchors:
        best = max(iou(a, g) for g in gt)
        if best > pos_thresh:
            out.append(POSITIVE)
        elif best < neg_thresh:
            out.append(NEGATIVE)
        else:
            out.append(IGNORE)
    return out
