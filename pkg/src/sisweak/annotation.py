"""Coarse instance labels from a salient-region mask and per-instance boxes.

Two priors keep the labels unambiguous:

* a box holds a single enclosed salient region, and
* when several closed regions fall inside one box, only the largest survives.

Pixels shared by overlapping boxes belong to the smallest box that keeps them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, as_mask, connected_components


@dataclass(frozen=True)
class Instance:
    id: int
    box: BoundingBox
    mask: np.ndarray = field(repr=False, compare=False)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def degenerate(self) -> bool:
        return self.area == 0


@dataclass(frozen=True)
class CoarseAnnotation:
    height: int
    width: int
    instances: tuple[Instance, ...]

    def label_map(self) -> np.ndarray:
        ids = np.zeros((self.height, self.width), dtype=np.int64)
        for inst in self.instances:
            ids[inst.mask] = inst.id
        return ids

    def masks(self) -> list[np.ndarray]:
        return [inst.mask for inst in self.instances]

    def boxes(self) -> list[BoundingBox]:
        return [inst.box for inst in self.instances]

    def degenerate_ids(self) -> list[int]:
        return [inst.id for inst in self.instances if inst.degenerate]


@dataclass(frozen=True)
class ExcludedSet:
    """Per-instance pixels discarded by the priors, aligned with instance order."""

    masks: tuple[np.ndarray, ...]

    def total(self) -> int:
        return int(sum(np.count_nonzero(m) for m in self.masks))

    def union(self, shape) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        for m in self.masks:
            out |= m
        return out


@dataclass(frozen=True)
class Violation:
    kind: str  # "containment" | "connectivity" | "disjointness"
    ids: tuple[int, ...]
    pixels: tuple[tuple[int, int], ...]  # (y, x) evidence, truncated

    def __str__(self):
        return f"{self.kind} violation for instance(s) {self.ids}: e.g. pixels {list(self.pixels)}"


def _largest_component(region: np.ndarray, connectivity: int) -> np.ndarray:
    labels, k = connected_components(region, connectivity)
    if k == 0:
        return np.zeros_like(region)
    areas = np.bincount(labels.ravel(), minlength=k + 1)[1:]
    # argmax returns the first maximum; labels are in first-pixel order,
    # so ties go to the component starting earliest in row-major scan.
    return labels == (int(np.argmax(areas)) + 1)


def synthesize(s, boxes, connectivity: int = 8) -> tuple[CoarseAnnotation, ExcludedSet]:
    s = as_mask(s)
    h, w = s.shape
    boxes = [b if isinstance(b, BoundingBox) else BoundingBox(*b) for b in boxes]
    for i, b in enumerate(boxes):
        if not b.fits(h, w):
            raise ValueError(f"box {i + 1} {b.as_tuple()} lies outside the {h}x{w} image")

    # Smallest boxes claim their regions first, so shared pixels go to the
    # tightest box; later boxes apply the priors to whatever is left.
    order = sorted(range(len(boxes)), key=lambda i: (boxes[i].area, i))
    claimed = np.zeros((h, w), dtype=bool)
    kept: list[np.ndarray | None] = [None] * len(boxes)
    excluded: list[np.ndarray | None] = [None] * len(boxes)
    for i in order:
        inside = s & boxes[i].to_mask(h, w)
        k = _largest_component(inside & ~claimed, connectivity)
        kept[i] = k
        excluded[i] = inside & ~k
        claimed |= k

    instances = tuple(Instance(i + 1, b, kept[i]) for i, b in enumerate(boxes))
    return CoarseAnnotation(h, w, instances), ExcludedSet(tuple(excluded))


def _evidence(m: np.ndarray, limit: int = 8) -> tuple[tuple[int, int], ...]:
    ys, xs = np.nonzero(m)
    return tuple((int(y), int(x)) for y, x in zip(ys[:limit], xs[:limit]))


def validate(a: CoarseAnnotation, connectivity: int = 8) -> list[Violation]:
    """Every broken containment / connectivity / disjointness invariant, with pixels."""
    out: list[Violation] = []
    for inst in a.instances:
        outside = inst.mask & ~inst.box.to_mask(a.height, a.width)
        if outside.any():
            out.append(Violation("containment", (inst.id,), _evidence(outside)))
        labels, k = connected_components(inst.mask, connectivity)
        if k > 1:
            out.append(Violation("connectivity", (inst.id,), _evidence(labels > 1)))
    for i, p in enumerate(a.instances):
        for q in a.instances[i + 1:]:
            both = p.mask & q.mask
            if both.any():
                out.append(Violation("disjointness", (p.id, q.id), _evidence(both)))
    return out


def ambiguity_flags(s, boxes, connectivity: int = 8) -> list[str]:
    """Human-readable notes about inputs the priors had to disambiguate."""
    s = as_mask(s)
    h, w = s.shape
    boxes = [b if isinstance(b, BoundingBox) else BoundingBox(*b) for b in boxes]
    flags = []
    for i, a in enumerate(boxes):
        for j in range(i + 1, len(boxes)):
            b = boxes[j]
            if min(a.x1, b.x1) > max(a.x0, b.x0) and min(a.y1, b.y1) > max(a.y0, b.y0):
                flags.append(f"boxes {i + 1} and {j + 1} overlap")
        _, k = connected_components(s & a.to_mask(h, w), connectivity)
        if k > 1:
            flags.append(f"box {i + 1} encloses {k} salient regions")
    return flags
