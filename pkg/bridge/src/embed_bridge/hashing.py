"""Signed feature hashing, byte-compatible with the search engine's fallback.

The search engine and this bridge are separate codebases that must produce
bit-identical vectors for the same (text, dim, seed), so the algorithm is
pinned down exactly:

  * tokens are maximal alphanumeric runs of the lowercased text
    (``[^\\W_]+``: underscores split, Unicode letters and digits count);
  * each token is hashed twice with keyed blake2b (digest_size 8, key =
    seed as 8 little-endian bytes + a one-byte stream tag), digests read
    as little-endian integers;
  * stream tag 0x01 selects the bucket (``hash % dim``), stream tag 0x02
    selects the sign (+1 if the low bit is set, else -1);
  * accumulation is float64, the vector is L2-normalized unless it is all
    zeros, and the result is cast to float32 last.

Any change here breaks wire conformance; nothing in this module is
configurable beyond (text, dim, seed).
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

_TOKEN_RE = re.compile(r"[^\W_]+")
_BUCKET_TAG = b"\x01"
_SIGN_TAG = b"\x02"


def _token_hash(token: str, seed: int, tag: bytes) -> int:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") + tag
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def hash_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Embed ``text`` as a unit-norm float32 vector of length ``dim``.

    Text with no tokens yields the zero vector, unnormalized.
    """
    if dim < 1:
        raise ValueError(f"embedding dim must be >= 1, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        bucket = _token_hash(token, seed, _BUCKET_TAG) % dim
        sign = 1.0 if _token_hash(token, seed, _SIGN_TAG) & 1 else -1.0
        acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm > 0.0:
        acc /= norm
    return acc.astype(np.float32)
