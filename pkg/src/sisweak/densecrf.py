"""Fully connected two-kernel CRF with Potts compatibility, solved by mean field."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .core import as_feature_map, as_mask, as_prob_map
from .filtering import ExactGaussianFilter, GridGaussianFilter

PROB_CLAMP = 1e-8


@dataclass(frozen=True)
class CrfParams:
    w1: float = 4.0  # appearance kernel weight
    w2: float = 3.0  # smoothness kernel weight
    theta_alpha: float = 70.0  # appearance spatial stddev, pixels
    theta_beta: float = 13.0  # appearance intensity stddev, 0-255 units
    theta_gamma: float = 1.0  # smoothness spatial stddev, pixels
    iterations: int = 10

    def __post_init__(self):
        for name in ("theta_alpha", "theta_beta", "theta_gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("kernel weights must be >= 0")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be a positive integer")

    def with_(self, **kw) -> "CrfParams":
        return replace(self, **kw)


def default_params() -> CrfParams:
    return CrfParams()


def unary_energy(probs) -> np.ndarray:
    """Negative log of clamped probabilities, flattened to ``(N, L)``."""
    p = as_prob_map(probs)
    return -np.log(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)).reshape(-1, p.shape[2])


def kernel_features(image, params: CrfParams):
    """Feature vectors and stddevs for the appearance and smoothness kernels."""
    img = as_feature_map(image).astype(np.float64)
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    appearance = np.concatenate([pos, img.reshape(h * w, -1)], axis=1)
    app_std = np.array([params.theta_alpha] * 2 + [params.theta_beta] * img.shape[2])
    smooth_std = np.array([params.theta_gamma] * 2)
    return (appearance, app_std), (pos, smooth_std)


def _build_filters(image, params, filter):
    if filter not in ("exact", "approximate"):
        raise ValueError(f"filter must be 'exact' or 'approximate', got {filter!r}")
    cls = ExactGaussianFilter if filter == "exact" else GridGaussianFilter
    (fa, sa), (fs, ss) = kernel_features(image, params)
    kernels = []
    if params.w1 > 0:
        kernels.append((params.w1, cls(fa, sa)))
    if params.w2 > 0:
        kernels.append((params.w2, cls(fs, ss)))
    return kernels


def _softmax(neg_energy):
    z = neg_energy - neg_energy.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mean_field(image, unary, params: CrfParams | None = None, filter: str = "approximate",
               callback=None) -> np.ndarray:
    """Parallel mean-field updates; returns the final ``(H, W, L)`` marginals.

    ``callback(iteration, q)`` is invoked after every round, mainly for tests.
    """
    params = params or default_params()
    img = as_feature_map(image)
    p = as_prob_map(unary)
    if img.shape[:2] != p.shape[:2]:
        raise ValueError(f"image {img.shape[:2]} and unary {p.shape[:2]} differ in size")
    if img.shape[2] != 3:
        raise ValueError(f"image must have 3 channels, got {img.shape[2]}")
    h, w, n_labels = p.shape
    u = unary_energy(p)
    q = _softmax(-u)
    kernels = _build_filters(img, params, filter)
    # Potts: the penalty on label l is sum over l' != l of the messages,
    # i.e. filter(sum_l' Q) - filter(Q_l), and sum_l' Q = 1 everywhere.
    totals = [f.apply(np.ones(h * w)) for _, f in kernels]
    for it in range(int(params.iterations)):
        if kernels:
            penalty = np.zeros_like(q)
            for (weight, f), total in zip(kernels, totals):
                if n_labels == 2:
                    m0 = f.apply(q[:, 0])
                    msg = np.stack([m0, total - m0], axis=1)
                else:
                    msg = f.apply(q)
                penalty += weight * (total[:, None] - msg)
            q = _softmax(-u - penalty)
        if callback is not None:
            callback(it + 1, q.reshape(h, w, n_labels))
    return q.reshape(h, w, n_labels)


def pairwise_weights(image, params: CrfParams) -> np.ndarray:
    """Dense ``(N, N)`` matrix of Potts penalties, zero diagonal. Small images only."""
    (fa, sa), (fs, ss) = kernel_features(image, params)
    out = np.zeros((fa.shape[0], fa.shape[0]))
    for weight, f, s in ((params.w1, fa, sa), (params.w2, fs, ss)):
        if weight > 0:
            q = f / s
            d2 = np.sum((q[:, None, :] - q[None, :, :]) ** 2, axis=2)
            out += weight * np.exp(-0.5 * d2)
    np.fill_diagonal(out, 0.0)
    return out


def energy(image, labeling, unary, params: CrfParams | None = None) -> float:
    """Unary term plus Potts penalties over disagreeing pairs, each pair once."""
    params = params or default_params()
    img = as_feature_map(image)
    lab = np.asarray(labeling)
    if lab.dtype == bool:
        lab = lab.astype(np.int64)
    p = as_prob_map(unary)
    if lab.shape != p.shape[:2] or img.shape[:2] != p.shape[:2]:
        raise ValueError("image, labeling and unary must share dimensions")
    u = unary_energy(p)
    flat = lab.ravel().astype(np.int64)
    e_unary = float(u[np.arange(flat.size), flat].sum())
    if params.w1 == 0 and params.w2 == 0:
        return e_unary
    pw = pairwise_weights(img, params)
    differ = flat[:, None] != flat[None, :]
    return e_unary + float(np.sum(pw[differ])) / 2.0


def brute_force_minimum(image, unary, params: CrfParams | None = None):
    """Exhaustive minimum over all binary labelings; tiny images only."""
    params = params or default_params()
    img = as_feature_map(image)
    p = as_prob_map(unary)
    h, w, n_labels = p.shape
    if h * w > 12 or n_labels != 2:
        raise ValueError("brute force is limited to 2 labels and <= 12 pixels")
    u = unary_energy(p)
    pw = pairwise_weights(img, params)
    best, best_lab = np.inf, None
    for bits in itertools.product((0, 1), repeat=h * w):
        lab = np.array(bits)
        e = u[np.arange(lab.size), lab].sum() + pw[lab[:, None] != lab[None, :]].sum() / 2.0
        if e < best:
            best, best_lab = e, lab
    return float(best), best_lab.reshape(h, w)


def refine_mask(image, fg_probs, params: CrfParams | None = None, filter: str = "approximate",
                threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Run the 2-label CRF on one instance's foreground probabilities.

    Returns the refined binary mask (foreground where Q > threshold) and Q.
    """
    fg = np.asarray(fg_probs, dtype=np.float64)
    if fg.ndim == 3:
        fg = fg[..., -1] if fg.shape[2] == 2 else fg[..., 0]
    q = mean_field(image, np.stack([1.0 - fg, fg], axis=2), params, filter)
    return q[..., 1] > threshold, q


def binarize(fg_probs, threshold: float = 0.5) -> np.ndarray:
    fg = np.asarray(fg_probs, dtype=np.float64)
    if fg.ndim == 3:
        fg = fg[..., -1] if fg.shape[2] == 2 else fg[..., 0]
    return as_mask(fg > threshold)
