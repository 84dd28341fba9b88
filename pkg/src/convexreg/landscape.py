"""Similarity landscapes under rotations about two axes.

Each cell rotates the image by ``alpha`` about one axis and then ``beta``
about another (both about the grid centre), recomputes features and scores
them against the features of the unrotated image.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DimensionMismatch, EngineError
from .features import FeatureProviderConfig, extract
from .volume import AffineTransform, rotation_matrix, warp_affine


def similarity_score(f_a, f_b, mask=None) -> float:
    """Mean per-voxel dot product, optionally restricted to ``mask``."""
    if f_a.dims != f_b.dims:
        raise DimensionMismatch("feature grids", f_a.dims, f_b.dims)
    dots = np.einsum("c...,c...->...", f_a.data.astype(np.float64), f_b.data.astype(np.float64))
    if mask is not None:
        dots = dots[np.asarray(mask, dtype=bool)]
    return float(dots.mean())


def angle_grid(range_deg=(-60.0, 60.0), step_deg=5.0) -> np.ndarray:
    lo, hi = (float(r) for r in range_deg)
    if lo != -hi or hi < 0:
        raise EngineError(f"angle range must be symmetric about 0, got {range_deg}")
    if not step_deg > 0:
        raise EngineError("angle step must be positive")
    n = int(np.floor(hi / step_deg + 1e-9))
    return np.arange(-n, n + 1) * float(step_deg)


def rotate(image, axes, alpha, beta):
    i, j = axes
    m = rotation_matrix(j, beta) @ rotation_matrix(i, alpha)
    return warp_affine(image, AffineTransform(m))


def rotation_landscape(image, provider: FeatureProviderConfig | str = "ssd-descriptor",
                       axes=(0, 1), range_deg=(-60.0, 60.0), step_deg=5.0, mask=None):
    """Score grid of shape (n_alpha, n_beta) plus the angle axis.

    Returns ``(angles, scores)``; ``scores[a, b]`` belongs to
    ``(angles[a], angles[b])``.
    """
    axes = tuple(int(a) for a in axes)
    if len(axes) != 2 or axes[0] == axes[1] or not all(a in (0, 1, 2) for a in axes):
        raise EngineError(f"axes must be two distinct values in {{0, 1, 2}}, got {axes}")
    if isinstance(provider, str):
        provider = FeatureProviderConfig(provider)
    angles = angle_grid(range_deg, step_deg)
    ref = extract(image, provider)
    scores = np.empty((len(angles), len(angles)))
    for a, alpha in enumerate(angles):
        for b, beta in enumerate(angles):
            f = extract(rotate(image, axes, alpha, beta), provider)
            scores[a, b] = similarity_score(ref, f, mask)
    return angles, scores


def write_landscape_csv(path, angles, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha_deg", "beta_deg", "score"])
        for a, alpha in enumerate(angles):
            for b, beta in enumerate(angles):
                w.writerow([f"{alpha:g}", f"{beta:g}", f"{scores[a, b]:.6g}"])
