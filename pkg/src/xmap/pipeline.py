"""Shared query pipeline: one ranking implementation for every frontend.

A ``SearchEngine`` bundles the trained mapper, the code-vector index, and
corpus metadata, and answers both vector queries and text queries.  The
service and the command line both call into this module so their results
are identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusEntry, read_corpus_jsonl
from .embedders import EmbedderSpec, embed_batch
from .errors import DataError
from .knn import FlatIndex, load_index
from .mapper import MapperNetwork, forward, load_model


@dataclass(frozen=True, slots=True)
class RankedHit:
    """A search result hydrated with corpus metadata."""

    id: str
    distance: float
    rank: int
    doc: str
    code: str

    def to_dict(self) -> dict[str, object]:
        return {
            "id": self.id,
            "distance": self.distance,
            "rank": self.rank,
            "doc": self.doc,
            "code": self.code,
        }


class SearchEngine:
    """Immutable query engine over a mapper, an index, and corpus metadata.

    Text queries go through the configured embedder, then the mapper, then
    the index.  Vector queries skip the embedder.  Embedder transport
    failures surface as ``ProtocolError`` so callers can distinguish a
    degraded dependency from a bad request.
    """

    __slots__ = ("_net", "_index", "_entries", "_embedder", "_timeout")

    def __init__(
        self,
        net: MapperNetwork,
        index: FlatIndex,
        entries: dict[str, CorpusEntry],
        embedder: EmbedderSpec | None = None,
        timeout: float = 120.0,
    ) -> None:
        if index.dim != net.config.output_dim:
            raise DataError(
                f"index dimension {index.dim} does not match"
                f" mapper output dimension {net.config.output_dim}"
            )
        if embedder is not None and embedder.dim != net.config.input_dim:
            raise DataError(
                f"embedder dimension {embedder.dim} does not match"
                f" mapper input dimension {net.config.input_dim}"
            )
        missing = [i for i in index.ids if i not in entries]
        if missing:
            raise DataError(
                f"corpus metadata is missing {len(missing)} indexed ids"
                f" (first: {missing[0]!r})"
            )
        self._net = net
        self._index = index
        self._entries = dict(entries)
        self._embedder = embedder
        self._timeout = float(timeout)

    @classmethod
    def load(
        cls,
        model_path: str | Path,
        index_path: str | Path,
        corpus_path: str | Path,
        embedder: EmbedderSpec | None = None,
        timeout: float = 120.0,
    ) -> SearchEngine:
        net = load_model(model_path)
        index = load_index(index_path)
        entries = {e.id: e for e in read_corpus_jsonl(corpus_path)}
        return cls(net, index, entries, embedder, timeout)

    @property
    def net(self) -> MapperNetwork:
        return self._net

    @property
    def index(self) -> FlatIndex:
        return self._index

    @property
    def corpus_size(self) -> int:
        return len(self._index)

    @property
    def model_dims(self) -> tuple[int, int]:
        return (self._net.config.input_dim, self._net.config.output_dim)

    @property
    def embedder(self) -> EmbedderSpec | None:
        return self._embedder

    def search_vector(self, vector: np.ndarray | list[float], n: int) -> list[RankedHit]:
        """Rank the ``n`` nearest code entries for one query embedding."""
        vec = np.asarray(vector, dtype=np.float64)
        if vec.ndim != 1:
            raise DataError(f"query vector must be one-dimensional, got shape {vec.shape}")
        if vec.shape[0] != self._net.config.input_dim:
            raise DataError(
                f"query vector has dimension {vec.shape[0]},"
                f" expected {self._net.config.input_dim}"
            )
        predicted = forward(self._net, vec)
        hits = self._index.search(predicted, n)
        out: list[RankedHit] = []
        for hit in hits:
            entry = self._entries[hit.id]
            out.append(
                RankedHit(
                    id=hit.id,
                    distance=hit.distance,
                    rank=hit.rank,
                    doc=entry.doc_text,
                    code=entry.code_text,
                )
            )
        return out

    def search_text(self, text: str, n: int) -> list[RankedHit]:
        """Embed a natural-language query, then rank as ``search_vector``.

        Raises ``DataError`` when no embedder is configured and
        ``ProtocolError`` when an external embedder misbehaves.
        """
        if self._embedder is None:
            raise DataError("no embedder configured; text queries are unavailable")
        if not isinstance(text, str) or not text.strip():
            raise DataError("query text must be a non-empty string")
        batch = embed_batch(self._embedder, [text], timeout=self._timeout)
        return self.search_vector(batch.vectors.data[0], n)
