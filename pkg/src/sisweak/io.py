"""Disk formats: PNG images/masks/label maps, box files, manifests, config files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BoundingBox, as_mask, check_label_map, read_tensor
from .densecrf import CrfParams


class BoxFileError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ManifestError(ValueError):
    pass


# --- images -----------------------------------------------------------------


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32)


def write_image(arr, path) -> None:
    Image.fromarray(np.clip(np.round(arr), 0, 255).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = arr[..., 0]
    return arr > 0


def write_mask(m, path) -> None:
    Image.fromarray(as_mask(m).astype(np.uint8) * 255).save(path)


def read_label_map(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    return check_label_map(arr)


def write_label_map(ids, path) -> None:
    ids = check_label_map(ids)
    if ids.max(initial=0) > 65535:
        raise ValueError("instance IDs exceed the 16-bit PNG range")
    Image.fromarray(ids.astype(np.uint16)).save(path)


def read_probability(path) -> np.ndarray:
    """Foreground probabilities from a tensor (C=1 or a C=2 ProbMap) or a grayscale PNG."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return arr
    t = read_tensor(path).astype(np.float64)
    if t.shape[2] == 1:
        fg = t[..., 0]
    elif t.shape[2] == 2:
        fg = t[..., 1]
    else:
        raise ValueError(f"{path}: prediction tensor must have 1 or 2 channels, got {t.shape[2]}")
    if np.any(fg < 0) or np.any(fg > 1):
        raise ValueError(f"{path}: probabilities outside [0, 1]")
    return fg


# --- box files ----------------------------------------------------------------


@dataclass(frozen=True)
class BoxRecord:
    id: int
    box: BoundingBox
    score: float | None = None


def parse_boxes(text: str, source: str = "<boxes>") -> list[BoxRecord]:
    """``id x0 y0 x1 y1 [score]`` per line; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (5, 6):
            raise BoxFileError(f"{source}:{lineno}: expected 5 or 6 fields, got {len(parts)}")
        try:
            ident, x0, y0, x1, y1 = (int(p) for p in parts[:5])
            score = float(parts[5]) if len(parts) == 6 else None
            box = BoundingBox(x0, y0, x1, y1)
        except ValueError as exc:
            raise BoxFileError(f"{source}:{lineno}: {exc}") from None
        if score is not None and not 0.0 <= score <= 1.0:
            raise BoxFileError(f"{source}:{lineno}: score {score} outside [0, 1]")
        out.append(BoxRecord(ident, box, score))
    return out


def read_boxes(path) -> list[BoxRecord]:
    return parse_boxes(Path(path).read_text(), source=os.fspath(path))


def format_boxes(records) -> str:
    lines = []
    for r in records:
        x0, y0, x1, y1 = r.box.as_tuple()
        line = f"{r.id} {x0} {y0} {x1} {y1}"
        if r.score is not None:
            line += f" {r.score:.6g}"
        lines.append(line)
    return "\n".join(lines) + ("\n" if lines else "")


def write_boxes(records, path) -> None:
    Path(path).write_text(format_boxes(records))


# --- config -------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    crf: CrfParams = field(default_factory=CrfParams)
    phi: float = 0.05
    sigma: float = 1e-6
    nms_thresh: float = 0.7
    top_k: int = 80
    connectivity: int = 8
    gap_fill: str = "global"
    crf_filter: str = "approximate"
    alpha: float | None = None
    workers: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not 0 < self.nms_thresh <= 1:
            raise ConfigError("nms_thresh must lie in (0, 1]")
        if self.top_k < 0:
            raise ConfigError("top_k must be >= 0")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.gap_fill not in ("global", "background"):
            raise ConfigError("gap_fill must be 'global' or 'background'")
        if self.crf_filter not in ("exact", "approximate"):
            raise ConfigError("crf_filter must be 'exact' or 'approximate'")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def override(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        crf_kw = {k: kw.pop(k) for k in list(kw) if k in _CRF_KEYS}
        cfg = replace(self, **kw)
        if crf_kw:
            cfg = replace(cfg, crf=replace(cfg.crf, **crf_kw))
        return cfg


_CRF_KEYS = {f.name: f.type for f in fields(CrfParams)}
_CFG_TYPES = {
    "phi": float, "sigma": float, "nms_thresh": float, "top_k": int, "connectivity": int,
    "gap_fill": str, "crf_filter": str, "alpha": float, "workers": int, "out_dir": str,
}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    """Flat ``key = value`` lines; any key may be omitted."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in _CRF_KEYS:
                values[key] = int(val) if key == "iterations" else float(val)
            elif key in _CFG_TYPES:
                values[key] = _CFG_TYPES[key](val)
            else:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {val!r}") from None
    try:
        return PipelineConfig().override(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text(), source=os.fspath(path))


def format_config(cfg: PipelineConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg.crf, f.name)}" for f in fields(CrfParams)]
    for key in _CFG_TYPES:
        val = getattr(cfg, key)
        if val is not None:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


# --- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    key: str
    image: Path
    mask: Path
    boxes: Path
    predictions: tuple[Path, ...] = ()
    gt: Path | None = None

    def missing(self, need_predictions=False, need_gt=False) -> list[str]:
        paths = [("image", self.image), ("mask", self.mask), ("boxes", self.boxes)]
        if need_predictions and not self.predictions:
            return ["predictions (none listed)"]
        paths += [(f"prediction {k + 1}", p) for k, p in enumerate(self.predictions)]
        if need_gt:
            if self.gt is None:
                return ["gt (not listed)"]
            paths.append(("gt", self.gt))
        return [f"{name} {p}" for name, p in paths if not p.is_file()]


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[Record, ...]


def load_manifest(path) -> DatasetManifest:
    """JSON ``{"records": [...]}``; relative paths resolve against the manifest's folder."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: {exc}") from None
    root = path.parent
    entries = data.get("records") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: expected a 'records' list")
    records, seen = [], set()
    for k, e in enumerate(entries):
        try:
            image = root / e["image"]
            rec = Record(
                key=e.get("id", Path(e["image"]).stem),
                image=image,
                mask=root / e["mask"],
                boxes=root / e["boxes"],
                predictions=tuple(root / p for p in e.get("predictions", [])),
                gt=(root / e["gt"]) if e.get("gt") else None,
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: record {k}: missing field {exc}") from None
        if rec.key in seen:
            raise ManifestError(f"{path}: duplicate record key {rec.key!r}")
        seen.add(rec.key)
        records.append(rec)
    return DatasetManifest(root, tuple(records))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
