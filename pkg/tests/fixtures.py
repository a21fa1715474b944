"""Random fixture builders shared by the unit and acceptance tests."""

import numpy as np

from sisweak.core import BoundingBox


def random_box(rng, h, w):
    x0, x1 = sorted(rng.choice(w + 1, size=2, replace=False))
    y0, y1 = sorted(rng.choice(h + 1, size=2, replace=False))
    return BoundingBox(int(x0), int(y0), int(x1), int(y1))


def random_scene(rng, max_size=16, max_boxes=4, density=None):
    """Random salient mask with a handful of (possibly overlapping) boxes."""
    h, w = (int(v) for v in rng.integers(3, max_size + 1, size=2))
    p = rng.uniform(0.2, 0.7) if density is None else density
    s = rng.random((h, w)) < p
    boxes = [random_box(rng, h, w) for _ in range(int(rng.integers(0, max_boxes + 1)))]
    return s, boxes


def random_image(rng, h, w, regions=2):
    """Piecewise-constant colour image with noise, 0-255 scale."""
    img = np.empty((h, w, 3))
    split = int(rng.integers(1, w)) if w > 1 else 1
    colors = rng.uniform(0, 255, size=(regions, 3))
    img[:, :split] = colors[0]
    img[:, split:] = colors[-1]
    img += rng.normal(0, 8, img.shape)
    return np.clip(img, 0, 255)


def random_unary(rng, h, w):
    fg = rng.uniform(0.02, 0.98, size=(h, w))
    return np.stack([1 - fg, fg], axis=2)
