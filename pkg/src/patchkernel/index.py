"""Persisted linear-scan retrieval index scored by inner product.

Entries are held in image-id order, so query results never depend on
insertion order, and the KIDX serialization is canonical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

KIDX_MAGIC = b"KIDX"
KIDX_VERSION = 1


@dataclass(frozen=True)
class IndexEntry:
    """One indexed image: unique id plus its (normalized) vector."""

    image_id: str
    values: np.ndarray


class Index:
    """Immutable exact-search index; scan cost is linear in the entry count."""

    def __init__(self, ids: list[str], matrix: np.ndarray):
        self._ids = ids
        self._matrix = matrix
        self._row_of = {image_id: row for row, image_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dim(self) -> int | None:
        return self._matrix.shape[1] if len(self._ids) else None

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._row_of

    def vector(self, image_id: str) -> np.ndarray:
        if image_id not in self._row_of:
            raise KeyError(f"image id {image_id!r} not in index")
        return self._matrix[self._row_of[image_id]].astype(np.float64)


def build(entries: list[IndexEntry]) -> Index:
    """Build an index; duplicate ids and dim mismatches name the offender."""
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for entry in entries:
        values = np.asarray(entry.values, dtype=np.float32)
        if values.ndim != 1:
            raise ValueError(f"entry {entry.image_id!r}: vector must be 1-D")
        if entry.image_id in seen:
            raise ValueError(f"duplicate image id {entry.image_id!r}")
        if dim is None:
            dim = values.shape[0]
        elif values.shape[0] != dim:
            raise ValueError(
                f"entry {entry.image_id!r}: dim {values.shape[0]} != index dim {dim}"
            )
        seen.add(entry.image_id)
        ids.append(entry.image_id)
        vectors.append(values)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    sorted_ids = [ids[i] for i in order]
    matrix = (
        np.stack([vectors[i] for i in order])
        if vectors
        else np.zeros((0, 0), dtype=np.float32)
    )
    return Index(sorted_ids, matrix)


def search(index: Index, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by inner product; ties break by ascending image id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        return []
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.shape[0] != index.dim:
        raise ValueError(f"query dim {query.shape[0]} != index dim {index.dim}")
    scores = index._matrix.astype(np.float64) @ query
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index._ids[i]))
    return [(index._ids[i], float(scores[i])) for i in order[:k]]


_KIDX_HEADER = struct.Struct("<4sIII")


def save(path: str | Path, index: Index) -> None:
    """Write the KIDX file; canonical entry order makes output byte-stable."""
    chunks = [_KIDX_HEADER.pack(KIDX_MAGIC, KIDX_VERSION, index.dim or 0, len(index))]
    for row, image_id in enumerate(index._ids):
        encoded = image_id.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(np.ascontiguousarray(index._matrix[row], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load(path: str | Path) -> Index:
    """Read a KIDX file; corrupt input raises a parse error naming the offset."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _KIDX_HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(data)}")
    magic, version, dim, count = _KIDX_HEADER.unpack_from(data, 0)
    if magic != KIDX_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    if version != KIDX_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    offset = _KIDX_HEADER.size
    entries: list[IndexEntry] = []
    for _ in range(count):
        if offset + 4 > len(data):
            raise FormatError(f"{path}: truncated id length at byte offset {offset}")
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + id_len + 4 * dim > len(data):
            raise FormatError(f"{path}: truncated entry at byte offset {offset}")
        image_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        entries.append(IndexEntry(image_id=image_id, values=values))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes at byte offset {offset}")
    return build(entries)
