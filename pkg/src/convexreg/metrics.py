"""Overlap and regularity metrics."""

from __future__ import annotations

import numpy as np

from .displacement import jacobian_determinant
from .errors import DimensionMismatch, EngineError


def _labels(v):
    return v.data[0] if hasattr(v, "data") else np.asarray(v)


def dice(labels_a, labels_b, label: int) -> float:
    """Dice overlap of one label; 1.0 when absent from both maps."""
    a, b = _labels(labels_a), _labels(labels_b)
    if a.shape != b.shape:
        raise DimensionMismatch("label maps", a.shape, b.shape)
    ma, mb = a == label, b == label
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


def mean_dice(labels_a, labels_b, label_set) -> float:
    label_set = list(label_set)
    if not label_set:
        raise EngineError("mean dice over an empty label set")
    return float(np.mean([dice(labels_a, labels_b, l) for l in label_set]))


def log_det_std(det: np.ndarray, floor: float = 1e-6) -> float:
    """Population std of ``log(max(det, floor))``."""
    return float(np.std(np.log(np.maximum(np.asarray(det, dtype=np.float64), floor))))


def sd_log_j(u, border: int = 0) -> float:
    """Standard deviation of the log Jacobian determinant.

    ``border`` voxels at each face are excluded from the statistic.
    """
    det = jacobian_determinant(u).data[0]
    if border:
        det = det[border:-border, border:-border, border:-border]
    return log_det_std(det)


def endpoint_error(u_est, u_true, mask=None):
    """(mean, max) Euclidean distance between two fields over ``mask``."""
    if u_est.dims != u_true.dims:
        raise DimensionMismatch("fields", u_est.dims, u_true.dims)
    err = np.sqrt(((u_est.data - u_true.data) ** 2).sum(axis=0))
    if mask is not None:
        err = err[np.asarray(mask, dtype=bool)]
    if err.size == 0:
        raise EngineError("endpoint error over an empty mask")
    return float(err.mean()), float(err.max())
