"""3D multi-channel grids, trilinear sampling and affine resampling.

Data layout is channel-major: ``data[c, x, y, z]`` with z varying fastest.
Every sampler clamps coordinates to the grid (clamp-to-edge), so sampling is
defined everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EngineError

KINDS = ("scalar-image", "label-map", "feature-map", "vector-field")


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3D grid with ``channels`` values per voxel.

    Parameters
    ----------
    data : ndarray, shape (C, nx, ny, nz)
    spacing : voxel size in millimetres along x, y, z.
    kind : one of ``KINDS``. Label maps are held as int32.
    meta : free-form metadata (e.g. the NIfTI orientation matrices).
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    kind: str = "scalar-image"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or min(data.shape) < 1:
            raise EngineError(f"volume data must have shape (C, nx, ny, nz), got {data.shape}")
        if self.kind not in KINDS:
            raise EngineError(f"unknown volume kind {self.kind!r}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise EngineError(f"spacing must be three positive finite values, got {self.spacing}")
        if self.kind == "label-map":
            if data.shape[0] != 1:
                raise EngineError("label maps have exactly one channel")
            if not np.issubdtype(data.dtype, np.integer):
                if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                    raise EngineError("label map holds non-integer values")
            if data.size and data.min() < 0:
                raise EngineError("label map holds negative values")
            if data.size and data.max() > np.iinfo(np.int32).max:
                raise EngineError("label map values exceed the int32 range")
            data = data.astype(np.int32, copy=False)
        elif not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if self.kind == "vector-field":
            if data.shape[0] != 3:
                raise EngineError(f"vector fields have 3 channels, got {data.shape[0]}")
            if not np.all(np.isfinite(data)):
                raise EngineError("vector field holds non-finite values")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape[1:])

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def replace(self, data=None, **kw) -> "Volume":
        """Copy of this volume with some attributes swapped out."""
        kw.setdefault("spacing", self.spacing)
        kw.setdefault("kind", self.kind)
        kw.setdefault("meta", dict(self.meta))
        return type(self)(self.data if data is None else data, **kw)


@dataclass(frozen=True)
class AffineTransform:
    """Forward map ``y = matrix @ (x - center) + center + translation``.

    All quantities are in voxel units. ``center=None`` pivots about the
    grid centre of whatever volume the transform is applied to.
    """

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: tuple = (0.0, 0.0, 0.0)
    center: tuple | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise EngineError("affine matrix must be 3x3")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise EngineError("affine matrix is singular")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    def inverse(self) -> "AffineTransform":
        """Inverse transform about the same pivot."""
        minv = np.linalg.inv(self.matrix)
        t = -(minv @ np.asarray(self.translation))
        return AffineTransform(minv, tuple(t), self.center)

    def is_identity(self) -> bool:
        return bool(np.all(self.matrix == np.eye(3)) and not any(self.translation))


def rotation_matrix(axis: int, degrees: float) -> np.ndarray:
    """Right-handed rotation about one grid axis."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    i, j = [k for k in range(3) if k != axis]
    m = np.eye(3)
    m[i, i], m[i, j], m[j, i], m[j, j] = c, -s, s, c
    return m


def _axis_weights(p, n):
    """Lower corner index, upper corner index, fraction and in-range mask."""
    inside = (p >= 0) & (p <= n - 1)
    q = np.clip(p, 0, n - 1)
    if n == 1:
        i0 = np.zeros(q.shape, dtype=np.intp)
        return i0, i0, np.zeros(q.shape), np.zeros(q.shape, dtype=bool)
    i0 = np.minimum(np.floor(q).astype(np.intp), n - 2)
    return i0, i0 + 1, q - i0, inside


def _interp(data, coords, gradient=False):
    """Trilinear interpolation of (C, nx, ny, nz) data at coords (3, ...)."""
    coords = np.asarray(coords, dtype=np.float64)
    shape = coords.shape[1:]
    if not gradient:
        flat = coords.reshape(3, -1)
        src = data if data.dtype in (np.float32, np.float64) else data.astype(np.float64)
        out = _kernels.trilinear(np.ascontiguousarray(src), np.ascontiguousarray(flat[0]),
                                 np.ascontiguousarray(flat[1]), np.ascontiguousarray(flat[2]))
        return out.reshape((data.shape[0],) + shape)
    nx, ny, nz = data.shape[1:]
    C = data.shape[0]
    flat = data.reshape(C, -1)
    x0, x1, fx, mx = _axis_weights(coords[0].ravel(), nx)
    y0, y1, fy, my = _axis_weights(coords[1].ravel(), ny)
    z0, z1, fz, mz = _axis_weights(coords[2].ravel(), nz)

    def g(xi, yi, zi):
        return flat[:, (xi * ny + yi) * nz + zi].astype(np.float64, copy=False)

    v000, v001, v010, v011 = g(x0, y0, z0), g(x0, y0, z1), g(x0, y1, z0), g(x0, y1, z1)
    v100, v101, v110, v111 = g(x1, y0, z0), g(x1, y0, z1), g(x1, y1, z0), g(x1, y1, z1)

    # lerp along x, then y, then z
    c00 = v000 * (1 - fx) + v100 * fx
    c01 = v001 * (1 - fx) + v101 * fx
    c10 = v010 * (1 - fx) + v110 * fx
    c11 = v011 * (1 - fx) + v111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    val = (c0 * (1 - fz) + c1 * fz).reshape((C,) + shape)

    dx = ((v100 - v000) * (1 - fy) + (v110 - v010) * fy) * (1 - fz) \
        + ((v101 - v001) * (1 - fy) + (v111 - v011) * fy) * fz
    dy = ((c10 - c00) * (1 - fz) + (c11 - c01) * fz)
    dz = c1 - c0
    grad = np.stack([dx * mx, dy * my, dz * mz], axis=1)
    return val, grad.reshape((C, 3) + shape)


def sample_trilinear(vol: Volume, p) -> np.ndarray:
    """Trilinear sample at continuous voxel coordinates.

    ``p`` is a 3-vector or an array of shape (3, ...); the result has shape
    (C,) or (C, ...). Coordinates outside the grid are clamped to the border.
    """
    if vol.kind == "label-map":
        raise EngineError("label maps are sampled with nearest neighbour, not trilinear")
    return _interp(vol.data, p)


def sample_gradient(vol: Volume, p) -> np.ndarray:
    """Analytic derivative of :func:`sample_trilinear` with respect to ``p``.

    Shape (C, 3) or (C, 3, ...). Along an axis where ``p`` lies outside the
    grid (and hence is clamped) the derivative is zero. At integer
    coordinates the one-sided derivative towards the upper neighbour is used,
    except at the last voxel where only the lower neighbour exists.
    """
    if vol.kind == "label-map":
        raise EngineError("label maps have no gradient")
    return _interp(vol.data, p, gradient=True)[1]


def sample_nearest(data, coords):
    """Nearest-neighbour lookup with clamping; ties round up."""
    coords = np.asarray(coords, dtype=np.float64)
    idx = []
    for a, n in enumerate(data.shape[1:]):
        idx.append(np.clip(np.floor(coords[a] + 0.5), 0, n - 1).astype(np.intp))
    return data[:, idx[0], idx[1], idx[2]]


def identity_grid(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))


def resample(vol: Volume, coords) -> np.ndarray:
    """Sample ``vol`` at coords of shape (3, nx, ny, nz), kind-aware."""
    if vol.kind == "label-map":
        return sample_nearest(vol.data, coords)
    out = _interp(vol.data, coords)
    return out.astype(vol.data.dtype, copy=False)


def downsample_half(vol: Volume) -> Volume:
    """Halve the grid (ceil), doubling the spacing.

    Intensity-like volumes are 2x2x2 average pooled, with the pooling window
    clamped to the grid on odd and singleton axes. Label maps keep the voxel
    at each even index.
    """
    if all(n < 2 for n in vol.dims):
        raise EngineError(f"degenerate axis: cannot halve a grid of dims {vol.dims}")
    spacing = tuple(2 * s for s in vol.spacing)
    if vol.kind == "label-map":
        return vol.replace(vol.data[:, ::2, ::2, ::2].copy(), spacing=spacing)
    d = vol.data
    pad = [(0, 0)] + [(0, n % 2) if n > 1 else (0, 1) for n in vol.dims]
    d = np.pad(d.astype(np.float64), pad, mode="edge")
    out = (d[:, 0::2, 0::2, 0::2] + d[:, 1::2, 0::2, 0::2] + d[:, 0::2, 1::2, 0::2]
           + d[:, 1::2, 1::2, 0::2] + d[:, 0::2, 0::2, 1::2] + d[:, 1::2, 0::2, 1::2]
           + d[:, 0::2, 1::2, 1::2] + d[:, 1::2, 1::2, 1::2]) / 8.0
    return vol.replace(out.astype(vol.data.dtype), spacing=spacing)


def warp_affine(vol: Volume, A: AffineTransform) -> Volume:
    """Resample ``vol`` under the forward affine ``A``.

    ``output(x) = vol(A^-1 x)``, nearest neighbour for label maps.
    """
    if A.is_identity():
        return vol.replace(vol.data.copy())
    center = np.asarray(A.center if A.center is not None
                        else [(n - 1) / 2.0 for n in vol.dims], dtype=np.float64)
    inv = np.linalg.inv(A.matrix)
    grid = identity_grid(vol.dims)
    rel = grid - (center + np.asarray(A.translation))[:, None, None, None]
    src = np.einsum("ij,j...->i...", inv, rel) + center[:, None, None, None]
    return vol.replace(resample(vol, src))
