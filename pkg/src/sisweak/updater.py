"""Divergence-gated replacement of coarse annotations by CRF-refined predictions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .annotation import CoarseAnnotation, Instance, validate
from .core import as_mask, connected_components
from .densecrf import CrfParams, binarize, default_params, refine_mask

log = logging.getLogger(__name__)

DEFAULT_PHI = 0.05
DEFAULT_SIGMA = 1e-6


def _as_reals(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim == 3:
        arr = arr[..., -1] if arr.shape[2] == 2 else arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    return arr.astype(np.float64)


def kl_div(pred, c, sigma: float = DEFAULT_SIGMA) -> float:
    """``mean_i C_i * log(C_i / (pred_i + sigma) + sigma)``; C_i = 0 terms vanish."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    p = _as_reals(pred)
    cm = as_mask(c)
    if p.shape != cm.shape:
        raise ValueError(f"prediction {p.shape} and annotation {cm.shape} differ in size")
    terms = np.log(1.0 / (p[cm] + sigma) + sigma)
    return float(terms.sum() / cm.size)


@dataclass(frozen=True)
class UpdateDecision:
    k1: float
    k2: float
    phi: float
    accepted: bool
    next_annotation: np.ndarray

    @property
    def delta(self) -> float:
        return self.k2 - self.k1


def update_loss(r, r_f, c, sigma: float = DEFAULT_SIGMA) -> float:
    return kl_div(r_f, c, sigma) - kl_div(r, c, sigma)


def decide(r, r_f, c, phi: float = DEFAULT_PHI, sigma: float = DEFAULT_SIGMA) -> UpdateDecision:
    c = as_mask(c)
    r_f_mask = as_mask(r_f)
    k1 = kl_div(r, c, sigma)
    k2 = kl_div(r_f_mask, c, sigma)
    if k2 - k1 >= phi:
        return UpdateDecision(k1, k2, phi, False, c.copy())
    return UpdateDecision(k1, k2, phi, True, r_f_mask.copy())


def _largest_component(m):
    labels, k = connected_components(m)
    if k <= 1:
        return m
    areas = np.bincount(labels.ravel(), minlength=k + 1)[1:]
    return labels == (int(np.argmax(areas)) + 1)


def cycle(annotation: CoarseAnnotation, predictions, image, crf_params: CrfParams | None = None,
          phi: float = DEFAULT_PHI, sigma: float = DEFAULT_SIGMA, filter: str = "approximate",
          refined=None) -> tuple[CoarseAnnotation, list[UpdateDecision]]:
    """One update round over all instances of an annotation.

    ``predictions`` holds one foreground-probability map (or 2-label ProbMap)
    per instance. ``refined`` optionally supplies precomputed CRF masks so the
    CRF is not rerun.

    Accepted masks are clipped to their box and reduced to their largest
    component; pixels claimed by several instances go to the instance with the
    higher mean predicted foreground probability (lower ID on ties).
    """
    crf_params = crf_params or default_params()
    insts = annotation.instances
    if len(predictions) != len(insts):
        raise ValueError(f"{len(predictions)} predictions for {len(insts)} instances")
    if refined is not None and len(refined) != len(insts):
        raise ValueError(f"{len(refined)} refined masks for {len(insts)} instances")

    decisions, masks, fg_means = [], [], []
    for k, inst in enumerate(insts):
        fg = _as_reals(predictions[k])
        if fg.shape != (annotation.height, annotation.width):
            raise ValueError(f"prediction {k} has shape {fg.shape}")
        r = binarize(fg)
        if refined is None:
            r_f, _ = refine_mask(image, fg, crf_params, filter)
        else:
            r_f = as_mask(refined[k])
        d = decide(r, r_f, inst.mask, phi, sigma)
        decisions.append(d)
        m = d.next_annotation & inst.box.to_mask(annotation.height, annotation.width)
        masks.append(m)
        fg_means.append(float(fg[m].mean()) if m.any() else 0.0)

    # Overlap resolution: strongest instance claims first.
    order = sorted(range(len(insts)), key=lambda k: (-fg_means[k], insts[k].id))
    taken = np.zeros((annotation.height, annotation.width), dtype=bool)
    final = [None] * len(insts)
    for k in order:
        m = _largest_component(masks[k] & ~taken)
        final[k] = m
        taken |= m

    out = CoarseAnnotation(
        annotation.height,
        annotation.width,
        tuple(Instance(inst.id, inst.box, final[k]) for k, inst in enumerate(insts)),
    )
    problems = validate(out)
    if problems:  # pragma: no cover - construction above rules these out
        raise RuntimeError("; ".join(map(str, problems)))
    for inst, d in zip(insts, decisions):
        log.debug("instance %d: k1=%.6g k2=%.6g accepted=%s", inst.id, d.k1, d.k2, d.accepted)
    return out, decisions
