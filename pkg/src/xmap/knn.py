"""Exact nearest-neighbor search over stored code vectors.

A flat index scans every stored vector; results are exactly what a full
sort of all distances would produce, with ties broken by ascending id so
rankings are reproducible across platforms.  Selection uses a bounded
partition rather than a full sort, but the observable contract is the
full-sort one.

Metrics: ``squared-l2`` (sum of squared differences), ``l2`` (its square
root), ``cosine`` (1 - cosine similarity, clamped at 0; a zero vector has
similarity 0 with everything).  Distances are computed in float64 from
direct element differences.

IDX1 file layout: magic ``IDX1``, version u32=1, metric u8 (0=squared-l2,
1=l2, 2=cosine), an embedded EMB1 block, then count length-prefixed
(u32 LE) UTF-8 ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import EmbeddingMatrix, embeddings_from_bytes, embeddings_to_bytes
from .errors import (
    BadMagicError,
    CorruptRecordError,
    DataError,
    NonFiniteError,
    TruncatedPayloadError,
    VersionMismatchError,
)

INDEX_MAGIC = b"IDX1"
INDEX_VERSION = 1

METRICS = ("squared-l2", "l2", "cosine")
_METRIC_CODE = {name: code for code, name in enumerate(METRICS)}

_INDEX_HEADER = struct.Struct("<4sIB")  # magic, version, metric code
_ID_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class SearchHit:
    id: str
    distance: float
    rank: int


class FlatIndex:
    """Immutable (vectors, ids, metric) triple supporting exact top-n search."""

    __slots__ = ("vectors", "ids", "metric", "_data64", "_norms", "_id_array")

    def __init__(self, vectors: EmbeddingMatrix, ids: list[str], metric: str) -> None:
        if metric not in METRICS:
            raise DataError(f"unknown metric {metric!r}; expected one of {METRICS}")
        if len(ids) != vectors.count:
            raise DataError(
                f"index misaligned: {vectors.count} vectors, {len(ids)} ids"
            )
        if len(set(ids)) != len(ids):
            raise DataError("index ids must be unique")
        self.vectors = vectors
        self.ids = tuple(ids)
        self.metric = metric
        self._data64 = vectors.data.astype(np.float64)
        self._norms = np.linalg.norm(self._data64, axis=1)
        self._id_array = np.array(ids, dtype=object)

    def __len__(self) -> int:
        return self.vectors.count

    @property
    def dim(self) -> int:
        return self.vectors.dim

    def distances(self, query: np.ndarray) -> np.ndarray:
        """Metric distance from ``query`` to every stored vector (float64)."""
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DataError(f"query must have shape ({self.dim},), got {q.shape}")
        if not np.all(np.isfinite(q)):
            raise NonFiniteError("query contains NaN or Inf")
        if self.metric == "cosine":
            qn = float(np.linalg.norm(q))
            dots = self._data64 @ q
            denom = self._norms * qn
            cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
            return np.maximum(0.0, 1.0 - cos)
        diff = self._data64 - q[None, :]
        sq = np.sum(diff * diff, axis=1)
        return np.sqrt(sq) if self.metric == "l2" else sq

    def search(self, query: np.ndarray, n: int) -> list[SearchHit]:
        """The min(n, size) nearest ids, sorted by (distance, id), ranks 1-based."""
        if n < 1:
            raise DataError(f"n must be >= 1, got {n}")
        count = len(self)
        if count == 0:
            return []
        dists = self.distances(query)
        n_eff = min(n, count)
        if n_eff < count:
            # keep everything tied with the n-th distance, then let the
            # (distance, id) sort decide the boundary deterministically
            kth = np.partition(dists, n_eff - 1)[n_eff - 1]
            cand = np.flatnonzero(dists <= kth)
        else:
            cand = np.arange(count)
        order = np.lexsort((self._id_array[cand], dists[cand]))
        top = cand[order][:n_eff]
        return [
            SearchHit(id=self.ids[i], distance=float(dists[i]), rank=r + 1)
            for r, i in enumerate(top)
        ]

    def batch_search(self, queries: np.ndarray, n: int) -> list[list[SearchHit]]:
        """Row-wise search; results align with query order."""
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim != 2 or (q.shape[0] > 0 and q.shape[1] != self.dim):
            raise DataError(f"queries must have shape (*, {self.dim}), got {q.shape}")
        return [self.search(row, n) for row in q]


def build_index(matrix: EmbeddingMatrix, ids: list[str], metric: str = "squared-l2") -> FlatIndex:
    return FlatIndex(matrix, ids, metric)


def save_index(index: FlatIndex, path: str | Path) -> None:
    """Write the index in the IDX1 format (bit-exact vector round trip)."""
    parts = [
        _INDEX_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, _METRIC_CODE[index.metric]),
        embeddings_to_bytes(index.vectors),
    ]
    for item_id in index.ids:
        encoded = item_id.encode("utf-8")
        parts.append(_ID_LEN.pack(len(encoded)))
        parts.append(encoded)
    Path(path).write_bytes(b"".join(parts))


def load_index(path: str | Path) -> FlatIndex:
    buf = Path(path).read_bytes()
    if len(buf) < _INDEX_HEADER.size:
        raise TruncatedPayloadError("IDX1 header truncated")
    magic, version, metric_code = _INDEX_HEADER.unpack_from(buf, 0)
    if magic != INDEX_MAGIC:
        raise BadMagicError(f"expected magic {INDEX_MAGIC!r}, found {magic!r}")
    if version != INDEX_VERSION:
        raise VersionMismatchError(f"unsupported IDX1 version {version}")
    if metric_code >= len(METRICS):
        raise CorruptRecordError(f"IDX1 metric code {metric_code} out of range")

    vectors, offset = embeddings_from_bytes(buf, _INDEX_HEADER.size)
    ids: list[str] = []
    for _ in range(vectors.count):
        if len(buf) - offset < _ID_LEN.size:
            raise TruncatedPayloadError("IDX1 id table truncated")
        (length,) = _ID_LEN.unpack_from(buf, offset)
        offset += _ID_LEN.size
        if len(buf) - offset < length:
            raise TruncatedPayloadError("IDX1 id entry truncated")
        try:
            ids.append(buf[offset : offset + length].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptRecordError(f"IDX1 id entry is not valid UTF-8: {exc}") from exc
        offset += length
    if offset != len(buf):
        raise CorruptRecordError(
            f"IDX1 file has {len(buf) - offset} trailing bytes past the id table"
        )
    return FlatIndex(vectors, ids, METRICS[metric_code])
