"""Salient-instance evaluation (AP^r, AP) and the training losses as pure functions.

AP^r at threshold a is the mean over images of (GT instances matched at
mask IoU >= a) / (GT instances). AP averages AP^r over a = 0.50, 0.55, ..., 0.95.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, as_mask

ALPHAS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
PROB_CLAMP = 1e-8


@dataclass(frozen=True)
class InstancePrediction:
    mask: np.ndarray = field(repr=False)
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mask", as_mask(self.mask))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Match:
    pred: int
    gt: int
    iou: float


def iou_matrix(preds, gts) -> np.ndarray:
    """Mask IoU for every (prediction, GT) pair; empty unions give 0."""
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    p = np.stack([as_mask(x.mask if isinstance(x, InstancePrediction) else x).ravel()
                  for x in preds]).astype(np.float64)
    g = np.stack([as_mask(x).ravel() for x in gts]).astype(np.float64)
    if p.shape[1] != g.shape[1]:
        raise ValueError("prediction and GT masks differ in size")
    inter = p @ g.T
    union = p.sum(1)[:, None] + g.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
    return out


def _score_order(preds):
    return sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))


def _greedy(ious, order, alpha):
    taken = set()
    matches = []
    for i in order:
        best_j, best = -1, -1.0
        for j in range(ious.shape[1]):
            if j not in taken and ious[i, j] > best:
                best_j, best = j, ious[i, j]
        if best_j >= 0 and best >= alpha:
            taken.add(best_j)
            matches.append(Match(i, best_j, float(best)))
    return matches


def match_instances(preds, gts, alpha: float) -> list[Match]:
    """Score-descending greedy one-to-one matching at mask IoU >= alpha."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    preds = [p if isinstance(p, InstancePrediction) else InstancePrediction(p) for p in preds]
    return _greedy(iou_matrix(preds, gts), _score_order(preds), alpha)


def optimal_match_count(ious: np.ndarray, alpha: float) -> int:
    """Largest number of disjoint pairs with IoU >= alpha, by enumeration."""
    n_p, n_g = ious.shape
    best = 0
    for k in range(min(n_p, n_g), 0, -1):
        for ps in itertools.combinations(range(n_p), k):
            for gs in itertools.permutations(range(n_g), k):
                if all(ious[p, g] >= alpha for p, g in zip(ps, gs)):
                    return k
    return best


def _normalize_dataset(dataset):
    items = []
    for k, entry in enumerate(dataset):
        if len(entry) == 3:
            name, preds, gts = entry
        else:
            (preds, gts), name = entry, f"image_{k}"
        preds = [p if isinstance(p, InstancePrediction) else InstancePrediction(p) for p in preds]
        items.append((str(name), preds, [as_mask(g) for g in gts]))
    return items


@dataclass
class EvalReport:
    ap: float
    ap_r: dict[float, float]
    rows: list[dict]
    excluded: list[str]

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "alphas": list(self.ap_r.keys()),
            "ap_r": list(self.ap_r.values()),
            "images": self.rows,
            "excluded_images": self.excluded,
        }

    def table(self) -> str:
        head = "image".ljust(24) + "".join(f"{a:>7.2f}" for a in self.ap_r)
        lines = [head, "-" * len(head)]
        for row in self.rows:
            lines.append(row["image"][:24].ljust(24) + "".join(f"{p:>7.3f}" for p in row["precision"]))
        lines.append("-" * len(head))
        lines.append("AP^r".ljust(24) + "".join(f"{v:>7.3f}" for v in self.ap_r.values()))
        lines.append(f"AP = {self.ap:.4f}")
        if self.excluded:
            lines.append(f"excluded (no GT): {', '.join(self.excluded)}")
        return "\n".join(lines)


def evaluate(dataset, alphas=ALPHAS) -> EvalReport:
    items = _normalize_dataset(dataset)
    rows, excluded = [], []
    for name, preds, gts in items:
        if not gts:
            excluded.append(name)
            continue
        ious = iou_matrix(preds, gts)
        order = _score_order(preds)
        matched = [len(_greedy(ious, order, a)) for a in alphas]
        rows.append({
            "image": name,
            "n_gt": len(gts),
            "n_pred": len(preds),
            "matched": matched,
            "precision": [m / len(gts) for m in matched],
        })
    if not rows:
        raise ValueError("dataset has no image with ground-truth instances")
    ap_r = {a: sum(r["precision"][k] for r in rows) / len(rows) for k, a in enumerate(alphas)}
    ap = sum(ap_r.values()) / len(ap_r)
    return EvalReport(ap, ap_r, rows, excluded)


def ap_r(dataset, alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return evaluate(dataset, alphas=(alpha,)).ap_r[alpha]


def ap(dataset) -> EvalReport:
    return evaluate(dataset, ALPHAS)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def seg_loss(probs, target) -> float:
    """Mean binary cross-entropy of foreground probabilities against a mask."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = as_mask(target).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"probs {p.shape} and target {g.shape} differ in size")
    return float(-np.mean(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)))


def box_deltas(pred: BoundingBox, gt: BoundingBox) -> np.ndarray:
    """(dx, dy, dw, dh): centre offsets over size, log size ratios."""
    pw, ph = pred.width, pred.height
    px, py = pred.x0 + 0.5 * pw, pred.y0 + 0.5 * ph
    gx, gy = gt.x0 + 0.5 * gt.width, gt.y0 + 0.5 * gt.height
    return np.array([(gx - px) / pw, (gy - py) / ph, math.log(gt.width / pw), math.log(gt.height / ph)])


def smooth_l1(x) -> np.ndarray:
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


def box_losses(pred_boxes, gt_boxes, pred_cls_probs, gt_cls) -> tuple[float, float]:
    """Two-class log loss and smooth-L1 box loss.

    The box loss sums the four delta coordinates and averages over boxes.
    """
    pred_boxes, gt_boxes = list(pred_boxes), list(gt_boxes)
    probs = np.asarray(pred_cls_probs, dtype=np.float64).reshape(-1)
    labels = np.asarray(gt_cls, dtype=np.float64).reshape(-1)
    if len(pred_boxes) != len(gt_boxes) or probs.size != labels.size:
        raise ValueError("box and class lists must be aligned")
    cls = 0.0
    if probs.size:
        p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
        cls = float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))
    reg = 0.0
    if pred_boxes:
        deltas = np.stack([box_deltas(p, g) for p, g in zip(pred_boxes, gt_boxes)])
        reg = float(smooth_l1(deltas).sum(axis=1).mean())
    return cls, reg


def total_loss(cls: float, reg: float, seg: float, upd: float) -> float:
    return (cls + reg) + seg + upd
