"""Volume file formats and report serialization.

Native container (little-endian, 40-byte header)::

    offset  size  field
    0       4     magic b"CVR1"
    4       4     version (u32) = 1
    8       1     kind (u8): 0 scalar, 1 label, 2 feature, 3 vector-field
    9       1     dtype (u8): 0 float32, 1 int32
    10      2     reserved, zero
    12      4     channels (u32)
    16      12    dims nx, ny, nz (3 x u32)
    28      12    spacing in mm (3 x f32)
    40      ...   data, channel-major, z fastest

NIfTI-1 support is limited to uncompressed single-file 3D images stored as
int16 or float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (BadMagic, KindDtypeMismatch, SizeMismatch, UnsupportedNifti,
                     VersionMismatch, VolumeFormatError)
from .volume import Volume

MAGIC = b"CVR1"
VERSION = 1
HEADER = struct.Struct("<4sIBBxxI3I3f")
KIND_CODES = {"scalar-image": 0, "label-map": 1, "feature-map": 2, "vector-field": 3}
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}

assert HEADER.size == 40


def write_volume(path, vol: Volume) -> None:
    if vol.kind == "label-map":
        code, data = 1, vol.data.astype("<i4")
    else:
        code, data = 0, vol.data.astype("<f4")
    header = HEADER.pack(MAGIC, VERSION, KIND_CODES[vol.kind], code, vol.channels,
                         *vol.dims, *vol.spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())


def read_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise SizeMismatch(f"{path}: header needs {HEADER.size} bytes, file has {len(raw)}",
                           "header")
    magic, version, kind, dtype, channels, nx, ny, nz, sx, sy, sz = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", "magic")
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version} is not supported (expected {VERSION})",
                              "version")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind not in kinds:
        raise KindDtypeMismatch(f"{path}: unknown kind code {kind}", "kind")
    if dtype not in DTYPE_CODES:
        raise KindDtypeMismatch(f"{path}: unknown dtype code {dtype}", "dtype")
    kind_name = kinds[kind]
    if (kind_name == "label-map") != (dtype == 1):
        raise KindDtypeMismatch(
            f"{path}: kind {kind_name} cannot be stored with dtype "
            f"{DTYPE_CODES[dtype].name}", "dtype")
    if kind_name == "vector-field" and channels != 3:
        raise KindDtypeMismatch(f"{path}: vector-field with {channels} channels", "channels")
    expected = channels * nx * ny * nz * 4
    actual = len(raw) - HEADER.size
    if actual != expected:
        gap = (f"{expected - actual} missing" if actual < expected
               else f"{actual - expected} extra")
        raise SizeMismatch(f"{path}: size mismatch in payload: expected {expected} bytes, "
                           f"got {actual} ({gap})", "payload")
    if channels == 0 or 0 in (nx, ny, nz):
        raise SizeMismatch(f"{path}: empty volume", "dims")
    data = np.frombuffer(raw, dtype=DTYPE_CODES[dtype], offset=HEADER.size)
    data = data.reshape(channels, nx, ny, nz).astype(DTYPE_CODES[dtype].newbyteorder("="))
    try:
        return Volume(data, (sx, sy, sz), kind_name)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}", "data") from exc


# --- NIfTI-1 -----------------------------------------------------------------

NIFTI_DTYPES = {4: np.dtype("i2"), 16: np.dtype("f4")}


def read_nifti(path, kind: str = "scalar-image") -> Volume:
    """Read an uncompressed 3D NIfTI-1 file.

    int16 data are scaled by ``scl_slope``/``scl_inter`` when the slope is
    non-zero. The qform/sform matrices are kept in ``meta`` only.
    """
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raise UnsupportedNifti(f"{path}: unsupported NIfTI feature: gzip compression", "compression")
    if len(raw) < 348:
        raise SizeMismatch(f"{path}: NIfTI header needs 348 bytes, file has {len(raw)}", "header")
    for end in "<>":
        if struct.unpack_from(end + "i", raw, 0)[0] == 348:
            break
    else:
        raise BadMagic(f"{path}: sizeof_hdr is not 348", "sizeof_hdr")
    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedNifti(f"{path}: unsupported NIfTI feature: separate .hdr/.img pair",
                               "magic")
    if magic != b"n+1\x00":
        raise BadMagic(f"{path}: bad NIfTI magic {magic!r}", "magic")
    dim = struct.unpack_from(end + "8h", raw, 40)
    if dim[0] < 3 or dim[0] > 7 or any(d > 1 for d in dim[4:dim[0] + 1]):
        raise UnsupportedNifti(f"{path}: unsupported NIfTI feature: {dim[0]}D image (dim={dim})",
                               "dim")
    datatype = struct.unpack_from(end + "h", raw, 70)[0]
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedNifti(f"{path}: unsupported NIfTI feature: datatype {datatype}",
                               "datatype")
    pixdim = struct.unpack_from(end + "8f", raw, 76)
    vox_offset = int(struct.unpack_from(end + "f", raw, 108)[0])
    slope, inter = struct.unpack_from(end + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(end + "2h", raw, 252)
    quatern = struct.unpack_from(end + "6f", raw, 256)
    srow = np.array(struct.unpack_from(end + "12f", raw, 280)).reshape(3, 4)
    nx, ny, nz = dim[1:4]
    dt = NIFTI_DTYPES[datatype].newbyteorder(end)
    nbytes = nx * ny * nz * dt.itemsize
    if len(raw) - vox_offset < nbytes:
        raise SizeMismatch(f"{path}: size mismatch in NIfTI payload: expected {nbytes} bytes, "
                           f"got {len(raw) - vox_offset}", "payload")
    data = np.frombuffer(raw, dtype=dt, count=nx * ny * nz, offset=vox_offset)
    data = data.reshape((nx, ny, nz), order="F")
    if datatype == 4 and slope != 0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data.astype(np.float32) * np.float32(slope) + np.float32(inter)
    elif kind != "label-map":
        data = data.astype(np.float32)
    else:
        data = data.astype(np.int32)
    spacing = tuple(float(abs(p)) if p else 1.0 for p in pixdim[1:4])
    meta = {"qform_code": qform_code, "sform_code": sform_code,
            "quatern": list(quatern), "srow": srow.tolist()}
    return Volume(np.ascontiguousarray(data)[None], spacing, kind, meta)


def write_nifti(path, vol: Volume) -> None:
    """Write a single-channel volume; labels as int16, everything else as float32."""
    if vol.channels != 1:
        raise UnsupportedNifti(f"unsupported NIfTI feature: {vol.channels}-channel volume",
                               "channels")
    if vol.kind == "label-map":
        if vol.data.max() > np.iinfo(np.int16).max:
            raise UnsupportedNifti("unsupported NIfTI feature: label values exceed int16",
                                   "datatype")
        code, data = 4, vol.data[0].astype("<i2")
    else:
        code, data = 16, vol.data[0].astype("<f4")
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *vol.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *vol.spacing, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    sform = vol.meta.get("srow") or [[vol.spacing[0], 0, 0, 0], [0, vol.spacing[1], 0, 0],
                                      [0, 0, vol.spacing[2], 0]]
    struct.pack_into("<2h", hdr, 252, 0, 1)
    struct.pack_into("<12f", hdr, 280, *np.ravel(sform))
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(np.asfortranarray(data).tobytes(order="F"))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
