"""Per-voxel feature descriptors.

Three providers: z-scored intensity, a six-neighbourhood self-similarity
descriptor (MIND-style), and precomputed embeddings read from disk, with the
global/local embedding fusion used for anatomical embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EngineError
from .volume import Volume, _interp

PROVIDERS = ("intensity", "ssd-descriptor", "embedded")

# +x, -x, +y, -y, +z, -z
SIX_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@dataclass(frozen=True, eq=False)
class FeatureVolume(Volume):
    """Feature map; ``parts`` lists the channel counts of independently
    normalized blocks (one block unless produced by fusion)."""

    kind: str = "feature-map"
    normalized: bool = False
    parts: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        if self.kind != "feature-map":
            raise EngineError("feature volumes must have kind 'feature-map'")
        parts = tuple(int(p) for p in self.parts) or (self.channels,)
        if sum(parts) != self.channels:
            raise EngineError(f"feature parts {parts} do not add up to {self.channels} channels")
        object.__setattr__(self, "parts", parts)

    def replace(self, data=None, **kw):
        kw.setdefault("normalized", self.normalized)
        kw.setdefault("parts", self.parts if data is None or len(data) == self.channels else ())
        return super().replace(data, **kw)


@dataclass(frozen=True)
class FeatureProviderConfig:
    provider: str = "ssd-descriptor"
    patch_radius: int = 0
    eps: float = 1e-6
    # embedded provider: (fixed, moving) file paths
    local_paths: tuple = ()
    global_paths: tuple = ()

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise EngineError(f"unknown feature provider {self.provider!r}")
        if self.provider == "embedded" and len(self.local_paths) != 2:
            raise EngineError("embedded provider needs local embedding paths for fixed and moving")
        if self.global_paths and len(self.global_paths) != 2:
            raise EngineError("global embedding paths must name fixed and moving files")

    def to_dict(self):
        return {"provider": self.provider, "patch_radius": self.patch_radius, "eps": self.eps,
                "local_paths": [str(p) for p in self.local_paths],
                "global_paths": [str(p) for p in self.global_paths]}


def _l2_normalize(block):
    norm = np.sqrt(np.sum(block.astype(np.float64) ** 2, axis=0, keepdims=True))
    return np.divide(block, norm, out=np.zeros(block.shape), where=norm > 0)


def normalize(f: FeatureVolume) -> FeatureVolume:
    """Per-voxel L2 normalization of every part; all-zero vectors stay zero."""
    blocks, start = [], 0
    for p in f.parts:
        blocks.append(_l2_normalize(f.data[start:start + p]))
        start += p
    return f.replace(np.concatenate(blocks).astype(np.float32), normalized=True)


def _require_scalar(vol):
    if vol.kind != "scalar-image" or vol.channels != 1:
        raise EngineError(f"expected a single-channel scalar image, got {vol.kind} with {vol.channels} channels")


def extract_intensity(vol: Volume) -> FeatureVolume:
    """Z-scored intensity. Left unnormalized: a normalized 1-vector is just a sign."""
    _require_scalar(vol)
    img = vol.data.astype(np.float64)
    sd = img.std()
    if not sd > 0:
        raise EngineError("constant image: intensity features need non-zero variance")
    z = (img - img.mean()) / sd
    return FeatureVolume(z.astype(np.float32), vol.spacing, normalized=False)


def _window_sum(a, k):
    """Sum over a k^3 window, 'valid' mode on the last three axes."""
    for ax in (1, 2, 3):
        n = a.shape[ax] - k + 1
        sl = [slice(None)] * 4
        sl[ax] = slice(0, n)
        acc = a[tuple(sl)].copy()
        for s in range(1, k):
            sl[ax] = slice(s, s + n)
            acc += a[tuple(sl)]
        a = acc
    return a


def extract_ssd_descriptor(vol: Volume, patch_radius=0, eps=1e-6) -> FeatureVolume:
    """Six-channel self-similarity descriptor.

    For each axis offset ``r``: ``D_r(x)`` is the sum of squared differences
    between the patch at ``x`` and the patch at ``x + r``, and the channel is
    ``exp(-D_r / (V + floor))`` with ``V`` the mean of the six ``D_r``. The
    noise floor is ``eps`` times the volume mean of ``V`` (``eps`` itself on a
    flat image), so the descriptor is unchanged by ``a * I + b`` for any
    ``a > 0``. Output vectors are L2 normalized.
    """
    _require_scalar(vol)
    p = int(patch_radius)
    if p < 0:
        raise EngineError("patch radius must be non-negative")
    if min(vol.dims) < 2 * p + 3:
        raise EngineError(f"image dims {vol.dims} too small for patch radius {p}")
    img = vol.data[0].astype(np.float64)
    m = p + 1
    P = np.pad(img, m, mode="edge")
    nx, ny, nz = img.shape
    k = 2 * p + 1
    D = np.empty((6, nx, ny, nz))
    for c, r in enumerate(SIX_OFFSETS):
        # region of P whose windows cover x - p .. x + p for every x
        base = P[1:-1, 1:-1, 1:-1]
        shifted = P[1 + r[0]:P.shape[0] - 1 + r[0], 1 + r[1]:P.shape[1] - 1 + r[1],
                    1 + r[2]:P.shape[2] - 1 + r[2]]
        D[c] = _window_sum(((base - shifted) ** 2)[None], k)[0]
    V = D.mean(axis=0)
    scale = V.mean()
    floor = eps * scale if scale > 0 else eps
    f = np.exp(-D / (V + floor))
    out = FeatureVolume(f, vol.spacing, normalized=False)
    return normalize(out)


def load_embedding(path) -> FeatureVolume:
    """Read a precomputed embedding volume; it is returned unnormalized."""
    from .formats import read_volume

    vol = read_volume(path)
    if vol.kind != "feature-map":
        raise EngineError(f"{path}: embedding files must hold a feature-map, got {vol.kind}")
    return FeatureVolume(vol.data, vol.spacing, normalized=False)


def resample_to(f: FeatureVolume, dims) -> np.ndarray:
    """Trilinear, cell-centred resampling of feature data onto ``dims``."""
    axes = [(np.arange(t, dtype=np.float64) + 0.5) * (s / t) - 0.5 for t, s in zip(dims, f.dims)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"))
    return _interp(f.data, pts)


def fuse_global_local(f_global: FeatureVolume, f_local: FeatureVolume) -> FeatureVolume:
    """Upsample the global embedding to the local grid, normalize both, concatenate.

    The result has two unit-norm parts, so the dot product of two fused
    vectors is the sum of two cosines and lies in [-2, 2].
    """
    if any(g > l for g, l in zip(f_global.dims, f_local.dims)):
        raise EngineError(f"global embedding {f_global.dims} is larger than local {f_local.dims}")
    g = _l2_normalize(resample_to(f_global, f_local.dims))
    loc = _l2_normalize(f_local.data)
    data = np.concatenate([g, loc]).astype(np.float32)
    return FeatureVolume(data, f_local.spacing, normalized=True,
                         parts=(f_global.channels, f_local.channels))


def extract(vol: Volume, cfg: FeatureProviderConfig) -> FeatureVolume:
    """Features of an image for the image-based providers."""
    if cfg.provider == "intensity":
        return extract_intensity(vol)
    if cfg.provider == "ssd-descriptor":
        return extract_ssd_descriptor(vol, cfg.patch_radius, cfg.eps)
    raise EngineError("embedded features are loaded from files, not extracted from images")


def load_embedded_pair(cfg: FeatureProviderConfig):
    """(fixed, moving) feature volumes for the embedded provider."""
    out = []
    for i in range(2):
        local = load_embedding(cfg.local_paths[i])
        if cfg.global_paths:
            out.append(fuse_global_local(load_embedding(cfg.global_paths[i]), local))
        else:
            out.append(normalize(local))
    return tuple(out)
