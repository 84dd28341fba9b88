"""Seeded phantoms and smooth deformations for tests and benchmarks."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from .displacement import jacobian_determinant, make_field, zero_field
from .errors import EngineError
from .volume import Volume

MIN_PHANTOM_DIM = 16
FOLD_THRESHOLD = 0.1
MAX_RETRIES = 10


def _smooth_noise(rng, shape, sigma):
    """White noise smoothed by three box passes (variance ~ sigma^2).

    The noise is drawn on a grid padded by the filter support and cropped
    afterwards, so border voxels are as smooth and as strong as interior ones.
    """
    k = int(np.round(np.sqrt(4 * sigma ** 2 + 1)))
    k += 1 - k % 2
    pad = 3 * (k // 2)
    a = rng.standard_normal(tuple(n + 2 * pad for n in shape))
    for _ in range(3):
        a = uniform_filter(a, k, mode="nearest")
    return a[tuple(slice(pad, pad + n) for n in shape)]


def make_phantom(dims, seed: int):
    """Textured body ellipsoid holding 4-8 disjoint ellipsoidal organs.

    Returns ``(image, labels)``; organ ``i`` carries label ``i`` and its own
    intensity.
    """
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < MIN_PHANTOM_DIM:
        raise EngineError(f"phantom dims must be >= {MIN_PHANTOM_DIM} per axis, got {dims}")
    rng = np.random.default_rng(seed)
    n = np.asarray(dims, dtype=np.float64)
    grid = np.stack(np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij"))
    center = (n - 1) / 2
    body_r = 0.42 * n * rng.uniform(0.92, 1.0, 3)
    rel = (grid - center[:, None, None, None]) / body_r[:, None, None, None]
    body = (rel ** 2).sum(axis=0) <= 1.0

    n_organs = int(rng.integers(4, 9))
    labels = np.zeros(dims, dtype=np.int32)
    intensities = rng.permutation(np.linspace(0.35, 1.0, 8))[:n_organs]
    placed = []
    scale = 1.0
    while len(placed) < n_organs:
        for _ in range(200):
            radii = body_r * rng.uniform(0.14, 0.3, 3) * scale
            # centres inside the body, leaving room for the organ itself
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            c = center + direction * rng.uniform(0, 1) ** (1 / 3) * (body_r - radii) * 0.95
            # bounding-sphere test keeps organs disjoint
            if all(np.linalg.norm(c - pc) > radii.max() + pr.max() + 1.0 for pc, pr in placed):
                placed.append((c, radii))
                break
        else:
            scale *= 0.8
    image = np.where(body, 0.2, 0.0)
    for i, (c, r) in enumerate(placed, start=1):
        rel = (grid - c[:, None, None, None]) / r[:, None, None, None]
        inside = ((rel ** 2).sum(axis=0) <= 1.0) & body
        labels[inside] = i
        image[inside] = intensities[i - 1]
    texture = _smooth_noise(rng, dims, 1.5)
    texture /= np.abs(texture).max()
    image = image + 0.05 * texture
    img = Volume(image[None].astype(np.float32), kind="scalar-image")
    lab = Volume(labels[None], kind="label-map")
    return img, lab


def make_smooth_field(dims, max_magnitude: float, sigma: float, seed: int):
    """Seeded smooth random field whose largest vector has norm ``max_magnitude``.

    If the field folds (min Jacobian determinant <= 0.1) it is shrunk by 0.8
    and checked again, at most ten times; the magnitude is then below the
    request.
    """
    dims = tuple(int(n) for n in dims)
    if max_magnitude < 0:
        raise EngineError("field magnitude must be non-negative")
    if max_magnitude == 0:
        return zero_field(dims)
    rng = np.random.default_rng(seed)
    noise = np.stack([_smooth_noise(rng, dims, sigma) for _ in range(3)])
    norm = np.sqrt((noise ** 2).sum(axis=0)).max()
    u = noise * (max_magnitude / norm)
    for _ in range(MAX_RETRIES + 1):
        field = make_field(u)
        if jacobian_determinant(field).data.min() > FOLD_THRESHOLD:
            return field
        u = u * 0.8
    raise EngineError(f"could not produce a fold-free field at magnitude {max_magnitude} "
                      f"within {MAX_RETRIES} retries")
