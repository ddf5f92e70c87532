"""Patch descriptors: gradient-orientation histograms on a fixed grid.

The built-in embedder turns any P x P raster into a 128-D unit vector
(4 x 4 spatial cells x 8 orientation bins, magnitude weighted, soft-binned
in orientation). Externally computed descriptors can be ingested through
the KDESC container instead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .raster import Image, resize_bilinear

PATCH_SIDE = 32
GRID_CELLS = 4
ORIENT_BINS = 8
DESCRIPTOR_DIM = GRID_CELLS * GRID_CELLS * ORIENT_BINS

KDESC_MAGIC = b"KDSC"
KDESC_VERSION = 1

# Spatial cell of each pixel is fixed by position; precompute the flat
# (cell * ORIENT_BINS) offset once.
_CELL_OFFSET = (
    (np.arange(PATCH_SIDE)[:, None] // (PATCH_SIDE // GRID_CELLS)) * GRID_CELLS
    + np.arange(PATCH_SIDE)[None, :] // (PATCH_SIDE // GRID_CELLS)
) * ORIENT_BINS


def embed_patches(rasters: np.ndarray) -> np.ndarray:
    """Embed a batch of (n, P, P) rasters into (n, DESCRIPTOR_DIM) unit rows.

    Gradient orientations are soft-assigned to the two nearest of 8 bins with
    magnitude weighting; rows with no gradient at all (constant patches) map
    to the uniform unit vector so cosine stays well defined.
    """
    rasters = np.asarray(rasters, dtype=np.float64)
    if rasters.ndim != 3 or rasters.shape[1:] != (PATCH_SIDE, PATCH_SIDE):
        raise ValueError(
            f"expected rasters of shape (n, {PATCH_SIDE}, {PATCH_SIDE}), got {rasters.shape}"
        )
    n = rasters.shape[0]
    gy = np.gradient(rasters, axis=1)
    gx = np.gradient(rasters, axis=2)
    mag = np.hypot(gx, gy)
    orient = np.arctan2(gy, gx)  # [-pi, pi]

    bin_pos = orient / (2.0 * np.pi / ORIENT_BINS)
    low = np.floor(bin_pos)
    frac = bin_pos - low
    low_bin = low.astype(np.int64) % ORIENT_BINS
    high_bin = (low_bin + 1) % ORIENT_BINS

    base = (
        np.arange(n, dtype=np.int64)[:, None, None] * DESCRIPTOR_DIM + _CELL_OFFSET
    )
    hist = np.bincount(
        (base + low_bin).ravel(),
        weights=(mag * (1.0 - frac)).ravel(),
        minlength=n * DESCRIPTOR_DIM,
    )
    hist += np.bincount(
        (base + high_bin).ravel(),
        weights=(mag * frac).ravel(),
        minlength=n * DESCRIPTOR_DIM,
    )
    hist = hist.reshape(n, DESCRIPTOR_DIM)

    norms = np.linalg.norm(hist, axis=1)
    zero = norms == 0.0
    if np.any(zero):
        hist[zero] = 1.0 / np.sqrt(DESCRIPTOR_DIM)
        norms[zero] = 1.0
    return hist / norms[:, None]


def embed_patch(raster: np.ndarray) -> np.ndarray:
    """Embed one P x P raster; wrong size raises a shape error."""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.shape != (PATCH_SIDE, PATCH_SIDE):
        raise ValueError(f"expected a {PATCH_SIDE}x{PATCH_SIDE} raster, got {raster.shape}")
    return embed_patches(raster[None])[0]


def embed_image_global(img: Image) -> np.ndarray:
    """Whole-image descriptor: resize to P x P and embed as a single patch."""
    return embed_patch(resize_bilinear(img.pixels, PATCH_SIDE, PATCH_SIDE))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two (unit) descriptors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def sum_pool(descriptors: np.ndarray) -> np.ndarray:
    """Order-independent sum of descriptor rows.

    Rows are summed in canonical (lexicographic) order, so any permutation of
    the same multiset produces a bit-identical result.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    order = np.lexsort(descriptors.T[::-1])
    return descriptors[order].sum(axis=0)


@dataclass(frozen=True)
class DescriptorMeta:
    """Provenance of one descriptor: source patch and rotation copy."""

    patch_id: int
    x: int
    y: int
    w: int
    h: int
    rotation_index: int
    objectness: float


@dataclass
class DescriptorSet:
    """All descriptors of one image, ordered by (patch_id, rotation_index)."""

    image_id: str
    meta: list[DescriptorMeta]
    values: np.ndarray  # (n, dim)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] == 0:
            raise ValueError("descriptor set must be a non-empty (n, dim) matrix")
        if len(self.meta) != self.values.shape[0]:
            raise ValueError(
                f"metadata rows ({len(self.meta)}) != descriptor rows ({self.values.shape[0]})"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[1]


_KDESC_HEADER = struct.Struct("<4sIII")


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("patch_id", "<u4"),
            ("x", "<u4"),
            ("y", "<u4"),
            ("w", "<u4"),
            ("h", "<u4"),
            ("rotation_index", "u1"),
            ("objectness", "<f4"),
            ("values", "<f4", (dim,)),
        ]
    )


def save_descriptors(path: str | Path, dset: DescriptorSet) -> None:
    """Write a KDESC file (little-endian, f32 descriptor payload)."""
    dim = dset.dim
    records = np.empty(len(dset.meta), dtype=_record_dtype(dim))
    for i, m in enumerate(dset.meta):
        records[i] = (m.patch_id, m.x, m.y, m.w, m.h, m.rotation_index, m.objectness, 0.0)
    records["values"] = dset.values.astype("<f4")
    header = _KDESC_HEADER.pack(KDESC_MAGIC, KDESC_VERSION, dim, len(dset.meta))
    Path(path).write_bytes(header + records.tobytes())


def load_descriptors(path: str | Path) -> DescriptorSet:
    """Read a KDESC file; every descriptor is re-normalized to unit L2.

    The image id is taken from the file stem (the format carries none).
    Malformed input raises a parse error naming the failing byte offset.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _KDESC_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(data)}")
    magic, version, dim, count = _KDESC_HEADER.unpack_from(data, 0)
    if magic != KDESC_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    if version != KDESC_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    if dim == 0:
        raise FormatError(f"{path}: zero descriptor dimension at byte offset 8")
    if count == 0:
        raise FormatError(f"{path}: empty descriptor file (count=0 at byte offset 12)")
    dtype = _record_dtype(dim)
    expected = _KDESC_HEADER.size + count * dtype.itemsize
    if len(data) != expected:
        offset = min(len(data), expected)
        raise FormatError(
            f"{path}: expected {expected} bytes for {count} records, "
            f"failed at byte offset {offset}"
        )
    records = np.frombuffer(data, dtype=dtype, count=count, offset=_KDESC_HEADER.size)

    values = records["values"].astype(np.float64)
    finite = np.isfinite(values).all(axis=1)
    norms = np.linalg.norm(values, axis=1)
    bad = ~finite | (norms == 0.0)
    if np.any(bad):
        idx = int(np.argmax(bad))
        offset = _KDESC_HEADER.size + idx * dtype.itemsize + (dtype.itemsize - 4 * dim)
        kind = "non-finite" if not finite[idx] else "zero-norm"
        raise FormatError(f"{path}: {kind} descriptor values at byte offset {offset}")
    # Rows already unit within the descriptor invariant are kept verbatim so
    # export -> import -> export is byte-stable; anything else is rescaled.
    off_unit = np.abs(norms - 1.0) > 1e-6
    values[off_unit] /= norms[off_unit, None]

    meta = [
        DescriptorMeta(
            patch_id=int(r["patch_id"]),
            x=int(r["x"]),
            y=int(r["y"]),
            w=int(r["w"]),
            h=int(r["h"]),
            rotation_index=int(r["rotation_index"]),
            objectness=float(r["objectness"]),
        )
        for r in records
    ]
    return DescriptorSet(image_id=path.stem, meta=meta, values=values)
