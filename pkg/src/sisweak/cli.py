"""Command-line front-end: gen-labels, refine, update, eval, nms, gfr.

Every command reads inputs, never touches them, and writes under ``--out``.
Machine-readable outputs (JSON, PNG masks, tensors) are byte-identical for
identical inputs and configuration. The exit code is 0 iff no record failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import annotation as ann
from . import densecrf, gfr, io, metrics, proposals, updater
from .core import BoundingBox, read_tensor, write_tensor

log = logging.getLogger("sisweak")

PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
], dtype=np.float64)


def configure_logging() -> None:
    level = os.environ.get("SISWEAK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _run_records(fn, records, workers):
    """Apply ``fn`` per record; results come back in manifest order."""
    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, records))
    return [fn(r) for r in records]


def _guard(fn):
    def wrapped(rec):
        try:
            return fn(rec), None
        except (OSError, ValueError, KeyError) as exc:
            log.debug("record %s failed", rec.key, exc_info=True)
            return None, f"{rec.key}: {exc}"
    return wrapped


def _report_errors(errors) -> int:
    errors = [e for e in errors if e]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return 1 if errors else 0


def _check(rec, **need):
    missing = rec.missing(**need)
    if missing:
        raise ValueError("missing " + ", ".join(missing))


def _sidecar(rec, a: ann.CoarseAnnotation, excluded=None, flags=()):
    insts = []
    for k, inst in enumerate(a.instances):
        row = {"id": inst.id, "box": list(inst.box.as_tuple()), "area": inst.area,
               "degenerate": inst.degenerate}
        if excluded is not None:
            row["excluded_pixels"] = int(np.count_nonzero(excluded.masks[k]))
        insts.append(row)
    return {"image": rec.key, "height": a.height, "width": a.width,
            "instances": insts, "ambiguity": list(flags)}


def load_annotation(label_path: Path) -> ann.CoarseAnnotation:
    meta = json.loads(label_path.with_suffix(".json").read_text())
    ids = io.read_label_map(label_path)
    if ids.shape != (meta["height"], meta["width"]):
        raise ValueError(f"{label_path}: label map size does not match its sidecar")
    insts = tuple(ann.Instance(r["id"], BoundingBox(*r["box"]), ids == r["id"])
                  for r in meta["instances"])
    return ann.CoarseAnnotation(meta["height"], meta["width"], insts)


# --- commands -----------------------------------------------------------------


def cmd_gen_labels(manifest: io.DatasetManifest, cfg: io.PipelineConfig, out: Path) -> int:
    dest = out / "labels"
    dest.mkdir(parents=True, exist_ok=True)
    if not manifest.records:
        log.warning("manifest has no records; nothing to do")

    @_guard
    def one(rec):
        _check(rec)
        s = io.read_mask(rec.mask)
        boxes = [b.box for b in io.read_boxes(rec.boxes)]
        a, excluded = ann.synthesize(s, boxes, cfg.connectivity)
        flags = ann.ambiguity_flags(s, boxes, cfg.connectivity)
        io.write_label_map(a.label_map(), dest / f"{rec.key}.png")
        io.write_json(_sidecar(rec, a, excluded, flags), dest / f"{rec.key}.json")
        return rec.key, len(a.instances), excluded.total(), a.degenerate_ids(), flags

    results = _run_records(one, manifest.records, cfg.workers)
    for res, _ in results:
        if res:
            key, n, n_excl, degenerate, flags = res
            note = f" degenerate={degenerate}" if degenerate else ""
            note += f" ambiguous={len(flags)}" if flags else ""
            print(f"{key}: {n} instances, {n_excl} excluded pixels{note}")
    return _report_errors(e for _, e in results)


def _refined_paths(out: Path, rec, n):
    return [out / "refined" / f"{rec.key}_{k + 1}.png" for k in range(n)]


def _refine_record(rec, cfg, out):
    _check(rec, need_predictions=True)
    image = io.read_image(rec.image)
    masks = []
    for k, p in enumerate(rec.predictions):
        fg = io.read_probability(p)
        if fg.shape != image.shape[:2]:
            raise ValueError(f"prediction {k + 1} is {fg.shape}, image is {image.shape[:2]}")
        r_f, _ = densecrf.refine_mask(image, fg, cfg.crf, cfg.crf_filter)
        masks.append(r_f)
    paths = _refined_paths(out, rec, len(masks))
    for m, path in zip(masks, paths):
        io.write_mask(m, path)
    return masks


def cmd_refine(manifest, cfg, out: Path) -> int:
    (out / "refined").mkdir(parents=True, exist_ok=True)

    @_guard
    def one(rec):
        masks = _refine_record(rec, cfg, out)
        return rec.key, [int(m.sum()) for m in masks]

    results = _run_records(one, manifest.records, cfg.workers)
    for res, _ in results:
        if res:
            print(f"{res[0]}: refined {len(res[1])} instance masks, areas {res[1]}")
    return _report_errors(e for _, e in results)


def cmd_update(manifest, cfg, out: Path, labels_dir: Path | None = None) -> int:
    labels_dir = labels_dir or out / "labels"
    dest = out / "updated"
    dest.mkdir(parents=True, exist_ok=True)
    (out / "refined").mkdir(parents=True, exist_ok=True)

    @_guard
    def one(rec):
        _check(rec, need_predictions=True)
        label_path = labels_dir / f"{rec.key}.png"
        if not label_path.is_file():
            raise ValueError(f"missing annotation {label_path} (run gen-labels first)")
        a = load_annotation(label_path)
        if len(rec.predictions) != len(a.instances):
            raise ValueError(f"{len(rec.predictions)} predictions for {len(a.instances)} instances")
        image = io.read_image(rec.image)
        preds = [io.read_probability(p) for p in rec.predictions]
        paths = _refined_paths(out, rec, len(preds))
        if all(p.is_file() for p in paths):
            refined = [io.read_mask(p) for p in paths]
        else:
            refined = _refine_record(rec, cfg, out)
        nxt, decisions = updater.cycle(a, preds, image, cfg.crf, cfg.phi, cfg.sigma,
                                       cfg.crf_filter, refined=refined)
        io.write_label_map(nxt.label_map(), dest / f"{rec.key}.png")
        io.write_json(_sidecar(rec, nxt), dest / f"{rec.key}.json")
        return [{"image": rec.key, "instance": inst.id, "k1": d.k1, "k2": d.k2,
                 "delta": d.delta, "phi": d.phi, "accepted": d.accepted}
                for inst, d in zip(a.instances, decisions)]

    results = _run_records(one, manifest.records, cfg.workers)
    rows = [row for res, _ in results if res for row in res]
    io.write_json({"decisions": rows}, dest / "decisions.json")
    for row in rows:
        verdict = "replace" if row["accepted"] else "keep"
        print(f"{row['image']}#{row['instance']}: k2-k1={row['delta']:.6f} -> {verdict}")
    return _report_errors(e for _, e in results)


def render_overlay(image, masks, boxes, alpha=0.5) -> np.ndarray:
    out = np.asarray(image, dtype=np.float64).copy()
    h, w = out.shape[:2]
    for k, m in enumerate(masks):
        out[m] = (1 - alpha) * out[m] + alpha * PALETTE[k % len(PALETTE)]
    for k, b in enumerate(boxes):
        color = PALETTE[k % len(PALETTE)]
        x1, y1 = min(b.x1, w) - 1, min(b.y1, h) - 1
        out[b.y0, b.x0:x1 + 1] = color
        out[y1, b.x0:x1 + 1] = color
        out[b.y0:y1 + 1, b.x0] = color
        out[b.y0:y1 + 1, x1] = color
    return out


def cmd_eval(manifest, cfg, out: Path) -> int:
    dest = out / "eval"
    (dest / "overlays").mkdir(parents=True, exist_ok=True)

    @_guard
    def one(rec):
        _check(rec, need_gt=True)
        image = io.read_image(rec.image)
        box_rows = io.read_boxes(rec.boxes)
        preds = []
        for k, p in enumerate(rec.predictions):
            mask = densecrf.binarize(io.read_probability(p))
            score = box_rows[k].score if k < len(box_rows) and box_rows[k].score is not None else 1.0
            preds.append(metrics.InstancePrediction(mask, score))
        ids = io.read_label_map(rec.gt)
        gts = [ids == i for i in np.unique(ids) if i != 0]
        overlay = render_overlay(image, [p.mask for p in preds], [b.box for b in box_rows])
        io.write_image(overlay, dest / "overlays" / f"{rec.key}.png")
        return rec.key, preds, gts

    results = _run_records(one, manifest.records, cfg.workers)
    dataset = [res for res, _ in results if res]
    status = _report_errors(e for _, e in results)
    try:
        report = metrics.ap(dataset)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    data = report.to_dict()
    if cfg.alpha is not None:
        data["extra_alpha"] = {"alpha": cfg.alpha, "ap_r": metrics.ap_r(dataset, cfg.alpha)}
    io.write_json(data, dest / "report.json")
    (dest / "report.txt").write_text(report.table() + "\n")
    print(report.table())
    return status


def cmd_nms(boxfile: Path, cfg, out: Path) -> int:
    try:
        rows = io.read_boxes(boxfile)
    except (OSError, io.BoxFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    props = [proposals.Proposal(r.box, 1.0 if r.score is None else r.score) for r in rows]
    ids = {id(p): r.id for p, r in zip(props, rows)}
    kept = proposals.top_k(proposals.nms(props, cfg.nms_thresh), cfg.top_k)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"{Path(boxfile).stem}.nms.txt"
    io.write_boxes([io.BoxRecord(ids[id(p)], p.box, p.score) for p in kept], dest)
    print(f"{len(rows)} boxes -> {len(kept)} after NMS@{cfg.nms_thresh} / top-{cfg.top_k}: {dest}")
    return 0


def cmd_gfr(features: Path, boxfile: Path, index: int, mode: str, cfg, out: Path,
            grad: Path | None = None, size=None) -> int:
    try:
        f = read_tensor(features)
        boxes = [r.box for r in io.read_boxes(boxfile)]
        spec = gfr.RefineSpec(mode, tuple(boxes), index, cfg.gap_fill)
        result = gfr.refine(f, spec, tuple(size) if size else None)
        out.mkdir(parents=True, exist_ok=True)
        write_tensor(result, out / f"{features.stem}.{spec.mode.lower()}{index}.sisw")
        if grad is not None:
            g = gfr.gfr_backward(f, spec, read_tensor(grad))
            write_tensor(g, out / f"{features.stem}.{spec.mode.lower()}{index}.grad.sisw")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {spec.mode} output for proposal {index} under {out}")
    return 0


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--manifest", type=Path, help="dataset manifest (JSON)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="parallel records")
    common.add_argument("--phi", type=float, help="update gate threshold")
    common.add_argument("--sigma", type=float, help="divergence regulariser")
    common.add_argument("--nms-thresh", type=float, dest="nms_thresh")
    common.add_argument("--top-k", type=int, dest="top_k")
    common.add_argument("--alpha", type=float, help="extra IoU threshold to report")
    common.add_argument("--iterations", type=int, help="mean-field iterations")
    common.add_argument("--crf-exact", action="store_true", help="exact O(N^2) CRF filtering")
    common.add_argument("--connectivity", type=int, choices=(4, 8))
    common.add_argument("--gap-fill", choices=("global", "background"), dest="gap_fill")

    p = argparse.ArgumentParser(prog="sisweak", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-labels", parents=[common], help="coarse labels from masks + boxes")
    sub.add_parser("refine", parents=[common], help="CRF-refine per-instance predictions")
    up = sub.add_parser("update", parents=[common], help="gate refined masks into next labels")
    up.add_argument("--labels", type=Path, help="annotation folder (default OUT/labels)")
    sub.add_parser("eval", parents=[common], help="AP / AP^r report and overlays")
    n = sub.add_parser("nms", parents=[common], help="NMS + top-K on a box file")
    n.add_argument("boxfile", type=Path)
    g = sub.add_parser("gfr", parents=[common], help="apply GFR / LFR / ROI to a tensor file")
    g.add_argument("features", type=Path)
    g.add_argument("--boxes", type=Path, required=True)
    g.add_argument("--index", type=int, default=0)
    g.add_argument("--mode", default="GFR", type=str.upper, choices=gfr.MODES)
    g.add_argument("--grad", type=Path, help="upstream gradient tensor for the backward pass")
    g.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), help="ROI output size")
    return p


def _config(args) -> io.PipelineConfig:
    cfg = io.read_config(args.config) if args.config else io.PipelineConfig()
    return cfg.override(
        phi=args.phi, sigma=args.sigma, nms_thresh=args.nms_thresh, top_k=args.top_k,
        alpha=args.alpha, workers=args.workers, connectivity=args.connectivity,
        gap_fill=args.gap_fill, iterations=args.iterations,
        crf_filter="exact" if args.crf_exact else None,
        out_dir=os.fspath(args.out) if args.out else None,
    )


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out_dir)
    if args.command == "nms":
        return cmd_nms(args.boxfile, cfg, out)
    if args.command == "gfr":
        return cmd_gfr(args.features, args.boxes, args.index, args.mode, cfg, out,
                       args.grad, args.size)
    if args.manifest is None:
        print("error: --manifest is required", file=sys.stderr)
        return 2
    try:
        manifest = io.load_manifest(args.manifest)
    except io.ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gen-labels":
        return cmd_gen_labels(manifest, cfg, out)
    if args.command == "refine":
        return cmd_refine(manifest, cfg, out)
    if args.command == "update":
        return cmd_update(manifest, cfg, out, args.labels)
    return cmd_eval(manifest, cfg, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
