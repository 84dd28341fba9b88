"""Dense feature-similarity search over integer displacements.

``value(x, d) = <f_fix(x), f_mov(x + d)>`` for every ``d`` in ``[-N, N]^3``,
with ``x + d`` clamped to the grid. Higher values mean better alignment.
Candidates are ranked lexicographically in ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EngineError
from .features import FeatureVolume

MAX_MATERIALIZED_RADIUS = 8


def n_candidates(radius: int) -> int:
    return (2 * radius + 1) ** 3


def rank(d, radius: int) -> int:
    w = 2 * radius + 1
    return ((d[0] + radius) * w + (d[1] + radius)) * w + (d[2] + radius)


def unrank(r: int, radius: int) -> tuple:
    w = 2 * radius + 1
    r, c = divmod(int(r), w)
    a, b = divmod(r, w)
    return (a - radius, b - radius, c - radius)


def candidate_offsets(radius: int) -> np.ndarray:
    """All displacements in rank order, shape (K, 3)."""
    rng = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class CostVolume:
    """Similarity of every voxel against every candidate displacement.

    In ``materialized`` mode ``values`` has shape (nx, ny, nz, K) with the K
    candidates of one voxel contiguous. In ``streaming`` mode ``values`` is
    None and entries are computed on demand from the two feature volumes.
    """

    radius: int
    f_fix: FeatureVolume
    f_mov: FeatureVolume
    values: np.ndarray | None
    mode: str = "materialized"

    @property
    def dims(self):
        return self.f_fix.dims

    @property
    def shape(self):
        return (n_candidates(self.radius),) + self.dims

    def at(self, x, d) -> float:
        if self.values is not None:
            return float(self.values[x[0], x[1], x[2], rank(d, self.radius)])
        return stream_candidate(self.f_fix, self.f_mov, x, d)


def _feature_arrays(f_fix, f_mov, radius):
    """float32 fixed features and edge-padded moving features."""
    if f_fix.dims != f_mov.dims:
        raise DimensionMismatch("feature grids", f_fix.dims, f_mov.dims)
    if f_fix.channels != f_mov.channels:
        raise EngineError(f"channel mismatch: {f_fix.channels} vs {f_mov.channels}")
    r = int(radius)
    fpad = np.pad(np.asarray(f_mov.data, dtype=np.float32), [(0, 0)] + [(r, r)] * 3, mode="edge")
    return np.ascontiguousarray(f_fix.data, dtype=np.float32), fpad


def build_cost_volume(f_fix: FeatureVolume, f_mov: FeatureVolume, radius: int,
                      mode: str = "materialized") -> CostVolume:
    """Correlation volume between target features ``f_fix`` and source
    features ``f_mov`` within search radius ``radius``."""
    radius = int(radius)
    if radius < 0:
        raise EngineError("search radius must be non-negative")
    if mode == "streaming":
        _feature_arrays(f_fix, f_mov, 0)
        return CostVolume(radius, f_fix, f_mov, None, mode)
    if mode != "materialized":
        raise EngineError(f"unknown cost volume mode {mode!r}")
    if radius > MAX_MATERIALIZED_RADIUS:
        raise EngineError(f"radius {radius} exceeds the materialized limit "
                          f"{MAX_MATERIALIZED_RADIUS}; use streaming mode")
    a, b = _feature_arrays(f_fix, f_mov, radius)
    values = _kernels.build_cost(a, b, radius)
    values.flags.writeable = False
    return CostVolume(radius, f_fix, f_mov, values, mode)


def stream_candidate(f_fix: FeatureVolume, f_mov: FeatureVolume, x, d) -> float:
    """One cost-volume entry, bit-identical to the materialized value."""
    a = f_fix.data if f_fix.data.dtype == np.float32 else f_fix.data.astype(np.float32)
    b = f_mov.data if f_mov.data.dtype == np.float32 else f_mov.data.astype(np.float32)
    return float(_kernels.pair_dot(a, b, int(x[0]), int(x[1]), int(x[2]),
                                   int(d[0]), int(d[1]), int(d[2])))
