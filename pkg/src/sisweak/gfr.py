"""Feature refining for one proposal: global (GFR), local (LFR) and ROI crop.

GFR keeps the current proposal and the background and overwrites every other
proposal's region with the per-channel global average. Pixels shared with the
current proposal keep their values. LFR does the same inside the proposal's
box grown by a fifth of its size on each side and averages everything beyond.

Both are linear in the feature map, so the backward pass is the adjoint:
gradients pass through copied pixels, and the gradient mass landing on
averaged pixels spreads evenly over the pixels the average was taken from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, as_feature_map

MODES = ("GFR", "LFR", "ROI")
FILLS = ("global", "background")


@dataclass(frozen=True)
class RefineSpec:
    mode: str
    proposals: tuple[BoundingBox, ...] = field(default_factory=tuple)
    current_index: int = 0
    fill: str = "global"

    def __post_init__(self):
        mode = self.mode.upper()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.fill not in FILLS:
            raise ValueError(f"fill must be one of {FILLS}, got {self.fill!r}")
        props = tuple(b if isinstance(b, BoundingBox) else BoundingBox(*b) for b in self.proposals)
        object.__setattr__(self, "proposals", props)
        if not 0 <= self.current_index < len(props):
            raise ValueError(f"current_index {self.current_index} outside {len(props)} proposals")

    @property
    def current(self) -> BoundingBox:
        return self.proposals[self.current_index]


def extended_box(box: BoundingBox, height: int, width: int) -> BoundingBox:
    """Grow each side by ceil(size / 5), clipped to the map."""
    dh = math.ceil(box.height / 5)
    dw = math.ceil(box.width / 5)
    return BoundingBox(max(0, box.x0 - dw), max(0, box.y0 - dh),
                       min(width, box.x1 + dw), min(height, box.y1 + dh))


def _regions(spec: RefineSpec, height: int, width: int):
    """Boolean masks (fill_region, mean_source) for a RefineSpec on an H x W map."""
    for i, b in enumerate(spec.proposals):
        if not b.fits(height, width):
            raise ValueError(f"proposal {i} {b.as_tuple()} outside {height}x{width} feature map")
    current = spec.current.to_mask(height, width)
    others = np.zeros((height, width), dtype=bool)
    any_prop = current.copy()
    for i, b in enumerate(spec.proposals):
        m = b.to_mask(height, width)
        any_prop |= m
        if i != spec.current_index:
            others |= m
    fill = others & ~current
    if spec.mode == "LFR":
        ext = extended_box(spec.current, height, width).to_mask(height, width)
        fill |= ~ext
    if spec.fill == "background" and (~any_prop).any():
        source = ~any_prop
    else:
        source = np.ones((height, width), dtype=bool)
    return fill, source


def _as_map(f):
    # float64 input stays float64 (gradient checks); everything else is float32.
    wide = np.asarray(f).dtype == np.float64
    arr = as_feature_map(f)
    return np.asarray(f, dtype=np.float64).reshape(arr.shape) if wide else arr


def _refine_forward(f, spec):
    f = _as_map(f)
    h, w, _ = f.shape
    fill, source = _regions(spec, h, w)
    mean = f[source].astype(np.float64).mean(axis=0)
    out = f.copy()
    out[fill] = mean.astype(f.dtype)
    return out


def gfr_forward(f, spec: RefineSpec) -> np.ndarray:
    if spec.mode != "GFR":
        raise ValueError(f"gfr_forward needs a GFR spec, got {spec.mode}")
    return _refine_forward(f, spec)


def lfr_forward(f, spec: RefineSpec) -> np.ndarray:
    if spec.mode != "LFR":
        raise ValueError(f"lfr_forward needs an LFR spec, got {spec.mode}")
    return _refine_forward(f, spec)


def refine_backward(f, spec: RefineSpec, upstream_grad) -> np.ndarray:
    """Gradient of ``sum(out * upstream_grad)`` with respect to ``f`` (GFR or LFR)."""
    f = as_feature_map(f)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.ndim == 2:
        g = g[..., None]
    if g.shape != f.shape:
        raise ValueError(f"upstream gradient {g.shape} does not match feature map {f.shape}")
    fill, source = _regions(spec, f.shape[0], f.shape[1])
    grad = g.copy()
    grad[fill] = 0.0
    spread = g[fill].sum(axis=0) / np.count_nonzero(source)
    grad[source] += spread
    return grad


def gfr_backward(f, spec: RefineSpec, upstream_grad) -> np.ndarray:
    if spec.mode not in ("GFR", "LFR"):
        raise ValueError(f"no backward pass for mode {spec.mode}")
    return refine_backward(f, spec, upstream_grad)


def _bilinear_grid(extent0, extent, size, limit):
    # align_corners=False: sample centres at (i + 0.5) / size of the extent,
    # shifted into pixel-index space where pixel k is centred at k.
    pos = extent0 + (np.arange(size) + 0.5) * extent / size - 0.5
    pos = np.clip(pos, 0.0, limit - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, limit - 1)
    return lo, hi, pos - lo


def roi_crop(f, box: BoundingBox, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of ``f`` inside ``box`` onto an ``out_h x out_w`` grid."""
    f = _as_map(f)
    if not isinstance(box, BoundingBox):
        box = BoundingBox(*box)
    h, w, _ = f.shape
    if not box.fits(h, w):
        raise ValueError(f"box {box.as_tuple()} outside {h}x{w} feature map")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    y0, y1, wy = _bilinear_grid(box.y0, box.height, out_h, h)
    x0, x1, wx = _bilinear_grid(box.x0, box.width, out_w, w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    f64 = f.astype(np.float64)
    top = f64[y0][:, x0] * (1 - wx) + f64[y0][:, x1] * wx
    bot = f64[y1][:, x0] * (1 - wx) + f64[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(f.dtype)


def refine(f, spec: RefineSpec, out_size: tuple[int, int] | None = None) -> np.ndarray:
    """Dispatch on ``spec.mode``; ROI needs ``out_size``."""
    if spec.mode == "GFR":
        return gfr_forward(f, spec)
    if spec.mode == "LFR":
        return lfr_forward(f, spec)
    if out_size is None:
        out_size = (spec.current.height, spec.current.width)
    return roi_crop(f, spec.current, *out_size)
