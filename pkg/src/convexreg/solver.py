"""Single-level discrete solver.

Alternates a point-wise search over the cost volume, coupled to the current
smooth estimate with weight ``w = 1/(2 theta)``, and average-pooling of the
result. ``w`` increases along the schedule so the two fields are driven
together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .costvolume import CostVolume, _feature_arrays
from .displacement import make_field, zero_field
from .errors import DimensionMismatch, EngineError

DEFAULT_SCHEDULE = (0.003, 0.01, 0.03, 0.1, 0.3, 1.0)


@dataclass(frozen=True)
class SolverConfig:
    schedule: tuple = DEFAULT_SCHEDULE
    kernel: int = 3
    passes: int = 1

    def __post_init__(self):
        sched = tuple(float(w) for w in self.schedule)
        if not sched:
            raise EngineError("coupling schedule is empty")
        if any(w < 0 for w in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
            raise EngineError(f"coupling schedule must be non-negative and strictly increasing: {sched}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise EngineError(f"smoothing kernel must be odd and >= 1, got {self.kernel}")
        if self.passes < 0:
            raise EngineError("smoothing passes must be non-negative")
        object.__setattr__(self, "schedule", sched)

    def to_dict(self):
        return {"schedule": list(self.schedule), "kernel": self.kernel, "passes": self.passes}


def box_mean(a: np.ndarray, k: int) -> np.ndarray:
    """k^3 moving average over the last three axes with clamp-to-edge borders."""
    if k == 1:
        return a.copy()
    h = k // 2
    for ax in range(a.ndim - 3, a.ndim):
        n = a.shape[ax]
        pad = [(0, 0)] * a.ndim
        pad[ax] = (h, h)
        p = np.pad(a, pad, mode="edge")
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(0, n)
        acc = p[tuple(sl)].copy()
        for s in range(1, k):
            sl[ax] = slice(s, s + n)
            acc += p[tuple(sl)]
        a = acc / k
    return a


def pointwise_update(cost: CostVolume, u_hat, w: float):
    """``v(x) = argmax_d sim(x, d) - w * |d - u_hat(x)|^2`` over all candidates.

    Ties go to the lexicographically smallest ``d``.
    """
    if u_hat.dims != cost.dims:
        raise DimensionMismatch("field vs cost volume", u_hat.dims, cost.dims)
    if w < 0:
        raise EngineError("coupling weight must be non-negative")
    u = np.ascontiguousarray(u_hat.data, dtype=np.float64)
    if cost.mode == "materialized":
        v = _kernels.pointwise_materialized(cost.values, u, float(w), cost.radius)
    else:
        a, b = _feature_arrays(cost.f_fix, cost.f_mov, cost.radius)
        v = _kernels.pointwise_streaming(a, b, u, float(w), cost.radius)
    return make_field(v, u_hat.spacing)


def smooth_update(v_hat, cfg: SolverConfig):
    """Average-pool each component ``cfg.passes`` times with a ``cfg.kernel``^3 box."""
    d = v_hat.data.astype(np.float64)
    for _ in range(cfg.passes):
        d = box_mean(d, cfg.kernel)
    return make_field(d, v_hat.spacing)


def solve_level(cost: CostVolume, u_init=None, cfg: SolverConfig = SolverConfig(), trace=None):
    """Alternate point-wise search and smoothing once per schedule entry.

    If ``trace`` is a list, the coupling gap ``max|v - u|`` after each
    alternation is appended to it.
    """
    u = zero_field(cost.dims) if u_init is None else u_init
    for w in cfg.schedule:
        v = pointwise_update(cost, u, w)
        u = smooth_update(v, cfg)
        if trace is not None:
            trace.append(float(np.max(np.abs(v.data - u.data))))
    return u
