"""Corpus storage: the EMB1 vector format, JSONL metadata, and seeded splits.

A corpus on disk is three aligned artifacts: a metadata JSONL file (one
``{"id", "doc", "code", "lang"}`` object per line), and two EMB1 matrices
whose row ``i`` belongs to metadata line ``i`` — one for natural-language
vectors, one for code vectors.

EMB1 layout (all integers little-endian):

    bytes 0..3    magic ``EMB1``
    bytes 4..7    version  u32 == 1
    bytes 8..11   dim      u32
    bytes 12..19  count    u64
    bytes 20..    count * dim IEEE-754 binary32 values, row-major

Vectors are stored and round-tripped bit-exactly; payloads containing
NaN or Inf are rejected on both read and write.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CorruptRecordError,
    DataError,
    NonFiniteError,
    TruncatedPayloadError,
    VersionMismatchError,
)

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1

_EMB_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count


class EmbeddingMatrix:
    """A count x dim matrix of 32-bit float vectors, immutable after build.

    ``data`` is a C-contiguous float32 array with its writeable flag
    cleared; every stored value is finite.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray) -> None:
        arr = np.asarray(data, dtype=np.float32, order="C")
        if arr.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise DataError("embedding dim must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("embedding data contains NaN or Inf")
        if arr is data:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"EmbeddingMatrix(count={self.count}, dim={self.dim})"


def embeddings_to_bytes(matrix: EmbeddingMatrix) -> bytes:
    """Serialize a matrix to EMB1 bytes."""
    header = _EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, matrix.dim, matrix.count)
    return header + matrix.data.astype("<f4", copy=False).tobytes(order="C")


def embeddings_from_bytes(buf: bytes, offset: int = 0) -> tuple[EmbeddingMatrix, int]:
    """Parse an EMB1 block starting at ``offset``.

    Returns the matrix and the offset one past the end of the block, so the
    format can be embedded inside other containers (see the index format).
    """
    if len(buf) - offset < _EMB_HEADER.size:
        raise TruncatedPayloadError("EMB1 header truncated")
    magic, version, dim, count = _EMB_HEADER.unpack_from(buf, offset)
    if magic != EMB_MAGIC:
        raise BadMagicError(f"expected magic {EMB_MAGIC!r}, found {magic!r}")
    if version != EMB_VERSION:
        raise VersionMismatchError(f"unsupported EMB1 version {version}")
    if dim < 1:
        raise CorruptRecordError("EMB1 header declares dim 0")
    start = offset + _EMB_HEADER.size
    nbytes = count * dim * 4
    if len(buf) - start < nbytes:
        raise TruncatedPayloadError(
            f"EMB1 payload truncated: expected {nbytes} bytes, found {len(buf) - start}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=start)
    matrix = EmbeddingMatrix(data.reshape(count, dim))
    return matrix, start + nbytes


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write ``matrix`` to ``path`` in the EMB1 format (bit-exact round trip)."""
    Path(path).write_bytes(embeddings_to_bytes(matrix))


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read an EMB1 file; trailing bytes past the payload are an error."""
    buf = Path(path).read_bytes()
    matrix, end = embeddings_from_bytes(buf)
    if end != len(buf):
        raise CorruptRecordError(
            f"EMB1 file has {len(buf) - end} trailing bytes past the payload"
        )
    return matrix


@dataclass(frozen=True)
class CorpusEntry:
    """One corpus item: a code snippet and its natural-language description."""

    id: str
    doc_text: str
    code_text: str
    language_tag: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("corpus entry id must be non-empty")
        if not self.doc_text:
            raise DataError(f"entry {self.id!r}: doc_text must be non-empty")
        if not self.code_text:
            raise DataError(f"entry {self.id!r}: code_text must be non-empty")


@dataclass
class PairedCorpus:
    """Aligned (entry, NL vector, code vector) triples.

    Row ``i`` of both matrices corresponds to ``entries[i]``.
    """

    entries: list[CorpusEntry]
    nl_vectors: EmbeddingMatrix
    code_vectors: EmbeddingMatrix
    _row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.entries)
        if self.nl_vectors.count != n or self.code_vectors.count != n:
            raise DataError(
                f"corpus misaligned: {n} entries, {self.nl_vectors.count} NL rows, "
                f"{self.code_vectors.count} code rows"
            )
        row_of: dict[str, int] = {}
        for i, entry in enumerate(self.entries):
            if entry.id in row_of:
                raise DataError(f"duplicate corpus id {entry.id!r}")
            row_of[entry.id] = i
        self._row_of = row_of

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def row_of(self, item_id: str) -> int:
        try:
            return self._row_of[item_id]
        except KeyError:
            raise DataError(f"unknown corpus id {item_id!r}") from None

    def entry(self, item_id: str) -> CorpusEntry:
        return self.entries[self.row_of(item_id)]

    def nl_vector(self, item_id: str) -> np.ndarray:
        return self.nl_vectors.row(self.row_of(item_id))

    def code_vector(self, item_id: str) -> np.ndarray:
        return self.code_vectors.row(self.row_of(item_id))


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/valid/test id sets plus the seed that produced them."""

    train_ids: frozenset[str]
    valid_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int

    def __post_init__(self) -> None:
        if (
            self.train_ids & self.valid_ids
            or self.train_ids & self.test_ids
            or self.valid_ids & self.test_ids
        ):
            raise DataError("split sets must be pairwise disjoint")


def align_corpus(
    entries: list[CorpusEntry],
    nl: EmbeddingMatrix,
    code: EmbeddingMatrix,
) -> PairedCorpus:
    """Zip entries with their vector rows, checking counts and id uniqueness."""
    return PairedCorpus(entries=list(entries), nl_vectors=nl, code_vectors=code)


def split_ids(
    all_ids: list[str] | tuple[str, ...],
    fractions: tuple[float, float, float],
    seed: int,
) -> SplitSpec:
    """Partition ids into train/valid/test by a seeded shuffle.

    The shuffle runs over ids sorted lexicographically, so the result is a
    pure function of (id set, fractions, seed) and independent of the order
    ids arrived in.  Set sizes are floor(fraction * N) for valid and test;
    train receives the remainder.
    """
    f_train, f_valid, f_test = fractions
    if min(fractions) < 0:
        raise DataError("split fractions must be >= 0")
    if abs(f_train + f_valid + f_test - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    n = len(all_ids)
    if n == 0:
        raise DataError("cannot split an empty corpus")
    if len(set(all_ids)) != n:
        raise DataError("ids must be unique")

    ids = sorted(all_ids)
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(n)]

    n_valid = math.floor(f_valid * n)
    n_test = math.floor(f_test * n)
    n_train = n - n_valid - n_test
    return SplitSpec(
        train_ids=frozenset(shuffled[:n_train]),
        valid_ids=frozenset(shuffled[n_train : n_train + n_valid]),
        test_ids=frozenset(shuffled[n_train + n_valid :]),
        seed=seed,
    )


def split_corpus(
    corpus: PairedCorpus,
    fractions: tuple[float, float, float],
    seed: int,
) -> SplitSpec:
    """`split_ids` over a paired corpus's id set."""
    return split_ids(list(corpus.ids), fractions, seed)


def read_corpus_jsonl(path: str | Path) -> list[CorpusEntry]:
    """Read corpus metadata: one {"id", "doc", "code", "lang"} object per line."""
    entries: list[CorpusEntry] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            try:
                entries.append(
                    CorpusEntry(
                        id=obj["id"],
                        doc_text=obj["doc"],
                        code_text=obj["code"],
                        language_tag=obj.get("lang", ""),
                    )
                )
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: missing key {exc}") from exc
    seen: set[str] = set()
    for entry in entries:
        if entry.id in seen:
            raise DataError(f"{path}: duplicate corpus id {entry.id!r}")
        seen.add(entry.id)
    return entries


def write_corpus_jsonl(entries: list[CorpusEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(
                json.dumps(
                    {
                        "id": entry.id,
                        "doc": entry.doc_text,
                        "code": entry.code_text,
                        "lang": entry.language_tag,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_split(path: str | Path) -> SplitSpec:
    """Read a split file: {"train": [...], "valid": [...], "test": [...], "seed": int}."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed split file: {exc}") from exc
    try:
        return SplitSpec(
            train_ids=frozenset(obj["train"]),
            valid_ids=frozenset(obj["valid"]),
            test_ids=frozenset(obj["test"]),
            seed=int(obj.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: invalid split file: {exc}") from exc


def write_split(split: SplitSpec, path: str | Path) -> None:
    obj = {
        "train": sorted(split.train_ids),
        "valid": sorted(split.valid_ids),
        "test": sorted(split.test_ids),
        "seed": split.seed,
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
