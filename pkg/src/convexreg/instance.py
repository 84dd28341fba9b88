"""Gradient-based refinement of a displacement field for one image pair.

Objective: negative mean feature similarity after warping plus a diffusion
penalty ``lam * mean |grad u|^2`` (forward differences, zero at the far
border). Minimized with bias-corrected adaptive-moment descent.

Two similarities are available. ``"dot"`` is the raw dot product with the
trilinearly sampled moving vector. Since trilinear sampling is linear inside
a cell, that objective is piecewise linear in ``u`` and its minima sit on
integer offsets, so it cannot settle between voxels. ``"cosine"`` (the
default) rescales the sampled vector of each normalized part to unit length
first; it agrees with ``"dot"`` at integer offsets and peaks between voxels
where the data does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .displacement import make_field
from .errors import DimensionMismatch, EngineError


SIMILARITIES = ("cosine", "dot")


@dataclass(frozen=True)
class InstanceOptConfig:
    lr: float = 0.05
    iterations: int = 50
    lam: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    similarity: str = "cosine"

    def __post_init__(self):
        if not self.lr > 0:
            raise EngineError("learning rate must be positive")
        if self.iterations < 0:
            raise EngineError("iterations must be non-negative")
        if self.lam < 0:
            raise EngineError("diffusion weight must be non-negative")
        if self.similarity not in SIMILARITIES:
            raise EngineError(f"unknown similarity {self.similarity!r}")

    def to_dict(self):
        return {"lr": self.lr, "iterations": self.iterations, "lambda": self.lam,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "similarity": self.similarity}


def _forward_diff(a, axis):
    d = np.zeros_like(a)
    n = a.shape[axis]
    hi = [slice(None)] * a.ndim
    lo = [slice(None)] * a.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    d[tuple(lo)] = a[tuple(hi)] - a[tuple(lo)]
    return d


def _forward_diff_adjoint(g, axis):
    # (D^T g)[i] = g[i-1] - g[i], with g[-1] = 0 and g[n-1] = 0 by construction
    out = -g.copy()
    n = g.shape[axis]
    hi = [slice(None)] * g.ndim
    lo = [slice(None)] * g.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    out[tuple(hi)] += g[tuple(lo)]
    return out


def diffusion_energy(u: np.ndarray) -> np.ndarray:
    """Per-voxel squared Frobenius norm of the forward-difference Jacobian."""
    return sum(_forward_diff(u, ax) ** 2 for ax in (1, 2, 3)).sum(axis=0)


def _check(f_fix, f_mov, u):
    if f_fix.dims != f_mov.dims or u.dims != f_fix.dims:
        raise DimensionMismatch("instance optimization grids", f_fix.dims, u.dims)
    if f_fix.channels != f_mov.channels:
        raise EngineError(f"channel mismatch: {f_fix.channels} vs {f_mov.channels}")


def _voxel_major(f):
    return np.ascontiguousarray(np.moveaxis(f.data, 0, -1), dtype=np.float32)


class _Problem:
    """Voxel-major feature arrays plus the per-part layout the kernel needs.

    Cosine similarity only makes sense for normalized features; unnormalized
    ones (z-scored intensity) always use the raw dot product.
    """

    def __init__(self, f_fix, f_mov, similarity):
        self.ffix = _voxel_major(f_fix)
        self.fmov = _voxel_major(f_mov)
        self.bounds = np.concatenate([[0], np.cumsum(f_mov.parts)]).astype(np.int64)
        self.cosine = similarity == "cosine" and f_mov.normalized

    def loss_and_grad(self, u, lam, want_grad=True):
        """``u`` is a (3, nx, ny, nz) float64 array."""
        n = u[0].size
        sim, dsim = _kernels.warped_similarity(self.ffix, self.fmov, u, self.bounds, self.cosine)
        loss = -sim.sum() / n
        diffs = [_forward_diff(u, ax) for ax in (1, 2, 3)]
        if lam:
            loss += lam * sum((d ** 2).sum() for d in diffs) / n
        if not want_grad:
            return loss, None
        grad = -dsim / n
        if lam:
            lap = sum(_forward_diff_adjoint(d, ax) for ax, d in zip((1, 2, 3), diffs))
            grad += 2.0 * lam * lap / n
        return loss, grad


def instance_loss(f_fix, f_mov, u, lam: float, similarity: str = "cosine") -> float:
    _check(f_fix, f_mov, u)
    prob = _Problem(f_fix, f_mov, similarity)
    return float(prob.loss_and_grad(u.data.astype(np.float64), lam, want_grad=False)[0])


def instance_loss_gradient(f_fix, f_mov, u, lam: float, similarity: str = "cosine"):
    """Exact gradient of :func:`instance_loss`, shaped like ``u``."""
    _check(f_fix, f_mov, u)
    prob = _Problem(f_fix, f_mov, similarity)
    return make_field(prob.loss_and_grad(u.data.astype(np.float64), lam)[1], u.spacing)


def instance_optimize(f_fix, f_mov, u_init, cfg: InstanceOptConfig = InstanceOptConfig(),
                      trace=None):
    """Refine ``u_init`` by ``cfg.iterations`` adaptive-moment steps.

    If ``trace`` is a list, the loss before each step and after the last
    step is appended to it.
    """
    _check(f_fix, f_mov, u_init)
    if cfg.iterations == 0:
        return u_init
    prob = _Problem(f_fix, f_mov, cfg.similarity)
    u = u_init.data.astype(np.float64)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    for t in range(1, cfg.iterations + 1):
        loss, g = prob.loss_and_grad(u, cfg.lam)
        if trace is not None:
            trace.append(float(loss))
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        u = u - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
    if trace is not None:
        trace.append(float(prob.loss_and_grad(u, cfg.lam, want_grad=False)[0]))
    return make_field(u, u_init.spacing)
