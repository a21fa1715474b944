"""Small synthetic datasets for exercising the pipeline end to end.

Each image has 2-3 coloured objects on a textured background. The salient
mask is the union of the objects plus a speck inside some boxes, and the
boxes are padded object extents. Instance predictions are soft, noisy
versions of the true masks, with one deliberately coarse prediction per image.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import BoundingBox, write_tensor
from .io import BoxRecord, write_boxes, write_image, write_label_map, write_mask

COLORS = np.array([
    (200, 40, 40), (40, 170, 60), (50, 80, 210), (220, 200, 40), (170, 60, 190),
], dtype=np.float64)


def _ellipse(h, w, cy, cx, ry, rx):
    ys, xs = np.mgrid[0:h, 0:w]
    return ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0


def make_image(rng: np.random.Generator, size: int = 32):
    h = w = size
    background = rng.uniform(90, 140, size=3)
    image = np.tile(background, (h, w, 1)) + rng.normal(0, 5, (h, w, 3))
    n = int(rng.integers(2, 4))
    colors = rng.permutation(len(COLORS))[:n]
    gt = np.zeros((h, w), dtype=np.int64)
    boxes = []
    # Objects live in separate vertical strips so their boxes stay disjoint.
    strip = w // n
    for k in range(n):
        rx = rng.uniform(2.5, strip / 2 - 1.5)
        ry = rng.uniform(3.0, h / 3)
        cx = k * strip + strip / 2 + rng.uniform(-0.5, 0.5)
        cy = rng.uniform(ry + 1, h - ry - 2)
        m = _ellipse(h, w, cy, cx, ry, rx) & (gt == 0)
        gt[m] = k + 1
        image[m] = COLORS[colors[k]] + rng.normal(0, 5, (int(m.sum()), 3))
        ys, xs = np.nonzero(m)
        boxes.append(BoundingBox(max(0, xs.min() - 1), max(0, ys.min() - 1),
                                 min(w, xs.max() + 2), min(h, ys.max() + 2)))
    salient = gt > 0
    # A detached speck inside the first box: the max-area prior must drop it.
    b = boxes[0]
    salient[b.y0, b.x0] = True
    salient[b.y0, min(b.x0 + 1, b.x1 - 1)] = True
    return np.clip(image, 0, 255), salient, boxes, gt


def make_predictions(rng, gt, boxes):
    preds = []
    for k, b in enumerate(boxes):
        true = (gt == k + 1).astype(np.float64)
        if k == 0:
            # Coarse: the whole box lights up, the object slightly more.
            coarse = b.to_mask(*gt.shape).astype(np.float64)
            p = 0.55 * coarse + 0.35 * true
        else:
            p = 0.15 + 0.7 * true
        p = p + rng.normal(0, 0.05, gt.shape)
        preds.append(np.clip(p, 0.0, 1.0))
    return preds


def make_dataset(root, n_images: int = 10, size: int = 32, seed: int = 0) -> Path:
    """Write images, masks, boxes, GT, predictions and ``manifest.json`` under ``root``."""
    root = Path(root)
    for sub in ("images", "masks", "boxes", "gt", "predictions"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_images):
        key = f"synth_{i:02d}"
        image, salient, boxes, gt = make_image(rng, size)
        preds = make_predictions(rng, gt, boxes)
        write_image(image, root / "images" / f"{key}.png")
        write_mask(salient, root / "masks" / f"{key}.png")
        scores = np.round(rng.uniform(0.6, 1.0, len(boxes)), 3)
        write_boxes([BoxRecord(k + 1, b, float(s)) for k, (b, s) in enumerate(zip(boxes, scores))],
                    root / "boxes" / f"{key}.txt")
        write_label_map(gt, root / "gt" / f"{key}.png")
        pred_paths = []
        for k, p in enumerate(preds):
            rel = f"predictions/{key}_{k + 1}.sisw"
            write_tensor(p.astype(np.float32), root / rel)
            pred_paths.append(rel)
        records.append({
            "image": f"images/{key}.png",
            "mask": f"masks/{key}.png",
            "boxes": f"boxes/{key}.txt",
            "gt": f"gt/{key}.png",
            "predictions": pred_paths,
        })
    (root / "manifest.json").write_text(json.dumps({"records": records}, indent=2) + "\n")
    return root / "manifest.json"
