"""Displacement-field algebra.

A field ``u`` is a 3-channel :class:`Volume` of kind ``vector-field`` whose
values are in voxel units of its own grid. It encodes the backward map
``x -> x + u(x)`` from target coordinates to source coordinates.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EngineError
from .volume import Volume, _interp, identity_grid, resample


def make_field(values, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(np.asarray(values, dtype=np.float64), spacing, "vector-field")


def zero_field(dims, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return make_field(np.zeros((3,) + tuple(dims)), spacing)


def _check_field(u):
    if u.kind != "vector-field":
        raise EngineError(f"expected a vector-field volume, got {u.kind}")


def warp(vol: Volume, u: Volume) -> Volume:
    """``output(x) = vol(x + u(x))``; nearest neighbour for label maps."""
    _check_field(u)
    if vol.dims != u.dims:
        raise DimensionMismatch("volume vs field", vol.dims, u.dims)
    return vol.replace(resample(vol, identity_grid(u.dims) + u.data))


def compose(u_outer: Volume, u_inner: Volume) -> Volume:
    """Field equivalent to warping by ``u_outer`` and then by ``u_inner``.

    ``result(x) = u_inner(x) + u_outer(x + u_inner(x))``, so that
    ``warp(warp(v, u_outer), u_inner) ~= warp(v, result)``.
    """
    _check_field(u_outer)
    _check_field(u_inner)
    if u_outer.dims != u_inner.dims:
        raise DimensionMismatch("compose", u_outer.dims, u_inner.dims)
    pts = identity_grid(u_inner.dims) + u_inner.data
    return u_inner.replace(u_inner.data + _interp(u_outer.data, pts))


def upsample2x(u: Volume, target_dims) -> Volume:
    """Bring a field to a grid twice as fine.

    Coarse voxel ``i`` covers fine voxels ``2i`` and ``2i+1`` (the pooling
    convention of :func:`downsample_half`), so fine voxel ``j`` sits at coarse
    coordinate ``(j - 0.5) / 2``. Vectors are doubled to stay in voxel units.
    """
    _check_field(u)
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != 3 or any(abs(t - 2 * s) > 1 for t, s in zip(target_dims, u.dims)):
        raise EngineError(f"upsample2x: target dims {target_dims} are not twice {u.dims}")
    axes = [(np.arange(t, dtype=np.float64) - 0.5) / 2.0 for t in target_dims]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"))
    spacing = tuple(s / 2 for s in u.spacing)
    return u.replace(2.0 * _interp(u.data, pts), spacing=spacing)


def jacobian_determinant(u: Volume) -> Volume:
    """Per-voxel ``det(I + grad u)`` with central differences (one-sided at borders)."""
    _check_field(u)
    if min(u.dims) < 3:
        raise EngineError(f"jacobian needs at least 3 voxels per axis, got {u.dims}")
    # J[i][j] = d u_i / d x_j
    J = [[g + (1.0 if i == j else 0.0) for j, g in enumerate(np.gradient(u.data[i]))]
         for i in range(3)]
    det = (J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1])
           - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0])
           + J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]))
    return Volume(det[None], u.spacing, "scalar-image")
