"""Shared types and helpers: boxes, masks, label maps, and the SISW tensor file."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MAGIC = b"SISW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIII")
# 2**31 float32 values is 8 GiB; anything larger is almost surely a corrupt header.
MAX_ELEMENTS = 2**31 - 1


class TensorFormatError(ValueError):
    """Base class for problems reading a SISW tensor file."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class DimensionOverflowError(TensorFormatError):
    pass


class TrailingDataError(TensorFormatError):
    pass


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open integer pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValueError(f"box coordinate {name}={v!r} is not an integer")
            object.__setattr__(self, name, int(v))
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(f"invalid box {self.as_tuple()}: need 0 <= x0 < x1 and 0 <= y0 < y1")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def fits(self, height: int, width: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def to_mask(self, height: int, width: int) -> np.ndarray:
        if not self.fits(height, width):
            raise ValueError(f"box {self.as_tuple()} outside {height}x{width} image")
        m = np.zeros((height, width), dtype=bool)
        m[self.y0:self.y1, self.x0:self.x1] = True
        return m

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def as_mask(m) -> np.ndarray:
    """Coerce to a 2-D boolean array; float masks must hold exactly 0/1."""
    arr = np.asarray(m)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("mask values must be exactly 0 or 1")
        arr = arr.astype(bool)
    return arr


def as_feature_map(f) -> np.ndarray:
    """Coerce to an ``(H, W, C)`` float32 array with finite values."""
    arr = np.asarray(f, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or 0 in arr.shape:
        raise ValueError(f"feature map must be non-empty (H, W, C), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature map contains NaN or Inf")
    return arr


def as_prob_map(p, atol: float = 1e-5) -> np.ndarray:
    """Coerce to an ``(H, W, L)`` float64 array of per-pixel distributions, L >= 2."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] < 2:
        raise ValueError(f"prob map must be (H, W, L) with L >= 2, got shape {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("prob map has negative or non-finite entries")
    if np.max(np.abs(arr.sum(axis=2) - 1.0)) > atol:
        raise ValueError("prob map is not normalized per pixel")
    return arr


def foreground_prob_map(fg) -> np.ndarray:
    """Build a 2-label map (background, foreground) from foreground probabilities."""
    fg = np.asarray(fg, dtype=np.float64)
    if fg.ndim == 3 and fg.shape[2] == 1:
        fg = fg[..., 0]
    if fg.ndim != 2:
        raise ValueError(f"foreground map must be 2-D, got shape {fg.shape}")
    if np.any(fg < 0) or np.any(fg > 1):
        raise ValueError("foreground probabilities must lie in [0, 1]")
    return np.stack([1.0 - fg, fg], axis=2)


def mask_iou(a, b) -> float:
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(m, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label connected regions of set bits as 1..k.

    Labels are ordered by each component's first pixel in row-major scan.
    Returns ``(labels, k)`` with ``labels`` an int32 ``(H, W)`` array.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = as_mask(m)
    labels, k = ndimage.label(m, structure=_STRUCTURES[connectivity])
    labels = labels.astype(np.int32, copy=False)
    if k > 1:
        # ndimage already scans in raster order, but relabel explicitly so the
        # ordering contract does not depend on scipy internals.
        flat = labels.ravel()
        nz = np.flatnonzero(flat)
        _, first = np.unique(flat[nz], return_index=True)
        order = np.argsort(nz[first], kind="stable")
        remap = np.zeros(k + 1, dtype=np.int32)
        remap[order + 1] = np.arange(1, k + 1, dtype=np.int32)
        labels = remap[labels]
    return labels, int(k)


def check_label_map(ids) -> np.ndarray:
    arr = np.asarray(ids)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("label map holds non-integer values")
    if np.any(arr < 0):
        raise ValueError("label map holds negative IDs")
    return arr.astype(np.int64)


# ---------------------------------------------------------------------------
# SISW tensor container
# ---------------------------------------------------------------------------


def encode_tensor(t) -> bytes:
    arr = np.asarray(t)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"tensor must be (H, W, C), got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    h, w, c = arr.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, h, w, c) + arr.tobytes()


def decode_tensor(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        if buf[:4] != MAGIC[: len(buf[:4])]:
            raise BadMagicError(f"{source}: bad magic bytes {buf[:4]!r}")
        raise TruncatedPayloadError(f"{source}: header truncated ({len(buf)} bytes)")
    magic, version, h, w, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported format version {version}")
    n = h * w * c
    if n > MAX_ELEMENTS:
        raise DimensionOverflowError(f"{source}: header declares {h}x{w}x{c} = {n} values")
    payload = len(buf) - _HEADER.size
    if payload < 4 * n:
        raise TruncatedPayloadError(
            f"{source}: header declares {n} values but payload holds {payload // 4}"
        )
    if payload > 4 * n:
        raise TrailingDataError(f"{source}: {payload - 4 * n} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size)
    return data.astype(np.float32).reshape(h, w, c)


def write_tensor(t, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_tensor(buf, source=os.fspath(path))
