"""Text-to-vector providers: a deterministic hash embedder and an HTTP client.

The built-in embedder is signed feature hashing: tokenize, hash each token
into a bucket with a sign, accumulate, L2-normalize.  It is pure and fully
determined by (text, dim, seed), which makes pipeline tests reproducible
and lets an out-of-process reimplementation be checked for byte-identical
output.  Real sentence/code encoders live behind the external provider,
which speaks a small JSON-over-HTTP protocol:

    POST {endpoint}/embed   {"model": str, "texts": [str, ...]}
        -> 200 {"dim": int, "vectors": [[float, ...], ...]}
        -> 400 malformed body | 422 unknown model | 500 encoder failure,
           each with body {"error": str}
    GET  {endpoint}/health  -> 200 {"status": "ok", "models": [str, ...]}

Responses larger than 64 MiB are refused; batching is the caller's job.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np
import requests

from .corpus import EmbeddingMatrix
from .errors import DataError, ProtocolError

# Hash algorithm constants.  Changing any of these breaks conformance with
# external reimplementations, so they are module-level and not configurable.
_TOKEN_RE = re.compile(r"[^\W_]+")  # alphanumeric runs; underscore splits
_BUCKET_TAG = b"\x01"
_SIGN_TAG = b"\x02"

MAX_RESPONSE_BYTES = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 120.0


def _token_hash(token: str, seed: int, tag: bytes) -> int:
    """Seeded 64-bit hash of a token; tag separates the bucket/sign streams."""
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") + tag
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def hash_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Embed ``text`` as a unit-norm float32 vector by signed feature hashing.

    Tokens are maximal alphanumeric runs of the lowercased text.  Each token
    adds +1 or -1 (low bit of its sign hash) to bucket ``bucket_hash % dim``.
    Accumulation is float64; the result is L2-normalized before the cast to
    float32.  Text with no tokens yields the zero vector, unnormalized.
    """
    if dim < 1:
        raise DataError(f"embedding dim must be >= 1, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        bucket = _token_hash(token, seed, _BUCKET_TAG) % dim
        sign = 1.0 if _token_hash(token, seed, _SIGN_TAG) & 1 else -1.0
        acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm > 0.0:
        acc /= norm
    return acc.astype(np.float32)


@dataclass(frozen=True)
class EmbedderSpec:
    """Which provider to use and how it is parameterized.

    kind "hash" uses (dim, seed); kind "external" uses (dim, endpoint,
    model_name) and treats dim as the expected response dimension.
    """

    kind: str
    dim: int
    seed: int = 0
    endpoint: str = ""
    model_name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("hash", "external"):
            raise DataError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 1:
            raise DataError(f"embedder dim must be >= 1, got {self.dim}")
        if self.kind == "external" and not self.endpoint:
            raise DataError("external embedder requires an endpoint")


@dataclass(frozen=True)
class EmbedBatch:
    """Texts paired with their vectors, one row per text."""

    texts: list[str]
    vectors: EmbeddingMatrix

    def __post_init__(self) -> None:
        if not self.texts:
            raise DataError("embed batch must contain at least one text")
        if self.vectors.count != len(self.texts):
            raise DataError(
                f"batch misaligned: {len(self.texts)} texts, {self.vectors.count} vectors"
            )


class ExternalEmbedderClient:
    """Synchronous client for the embedding wire protocol.

    One request per batch; per-call state only, so one client may serve
    concurrent callers.  All protocol violations raise ProtocolError.
    """

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def _read_capped(self, resp: requests.Response) -> bytes:
        declared = resp.headers.get("Content-Length")
        if declared is not None and int(declared) > MAX_RESPONSE_BYTES:
            raise ProtocolError(
                f"response of {declared} bytes exceeds the {MAX_RESPONSE_BYTES}-byte cap"
            )
        chunks: list[bytes] = []
        total = 0
        for chunk in resp.iter_content(chunk_size=1 << 16):
            total += len(chunk)
            if total > MAX_RESPONSE_BYTES:
                raise ProtocolError(
                    f"response exceeds the {MAX_RESPONSE_BYTES}-byte cap"
                )
            chunks.append(chunk)
        return b"".join(chunks)

    def health(self) -> list[str]:
        """Return the model names the service advertises, or raise ProtocolError."""
        try:
            resp = requests.get(f"{self.endpoint}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProtocolError(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"health check returned status {resp.status_code}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError("health response is not JSON") from exc
        if body.get("status") != "ok" or not isinstance(body.get("models"), list):
            raise ProtocolError(f"malformed health response: {body!r}")
        return [str(m) for m in body["models"]]

    def embed(self, model_name: str, texts: list[str], expect_dim: int) -> EmbeddingMatrix:
        """POST one batch and validate the response against ``expect_dim``."""
        if not texts:
            raise DataError("texts must be non-empty")
        try:
            resp = requests.post(
                f"{self.endpoint}/embed",
                json={"model": model_name, "texts": texts},
                timeout=self.timeout,
                stream=True,
            )
            raw = self._read_capped(resp)
        except requests.RequestException as exc:
            raise ProtocolError(f"embed request failed: {exc}") from exc
        if resp.status_code != 200:
            detail = ""
            try:
                detail = json.loads(raw).get("error", "")
            except ValueError:
                pass
            raise ProtocolError(
                f"embed request returned status {resp.status_code}"
                + (f": {detail}" if detail else "")
            )
        try:
            body = json.loads(raw)
        except ValueError as exc:
            raise ProtocolError("embed response is not JSON") from exc
        if not isinstance(body, dict) or "dim" not in body or "vectors" not in body:
            raise ProtocolError(f"malformed embed response: missing dim/vectors")
        if body["dim"] != expect_dim:
            raise ProtocolError(
                f"embedder returned dim {body['dim']}, expected {expect_dim}"
            )
        vectors = body["vectors"]
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProtocolError(
                f"embedder returned {len(vectors) if isinstance(vectors, list) else '?'} "
                f"vectors for {len(texts)} texts"
            )
        try:
            arr = np.asarray(vectors, dtype=np.float64)
        except ValueError as exc:
            raise ProtocolError(f"ragged or non-numeric vectors: {exc}") from exc
        if arr.ndim != 2 or arr.shape[1] != expect_dim:
            raise ProtocolError(
                f"embedder returned vectors of shape {arr.shape}, expected (*, {expect_dim})"
            )
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("embedder returned NaN or Inf values")
        return EmbeddingMatrix(arr.astype(np.float32))


def embed_batch(spec: EmbedderSpec, texts: list[str], timeout: float = DEFAULT_TIMEOUT) -> EmbedBatch:
    """Embed ``texts`` under ``spec``; rows align with the input order."""
    if not texts:
        raise DataError("texts must be non-empty")
    if spec.kind == "hash":
        rows = np.stack([hash_embed(t, spec.dim, spec.seed) for t in texts])
        return EmbedBatch(texts=list(texts), vectors=EmbeddingMatrix(rows))
    client = ExternalEmbedderClient(spec.endpoint, timeout=timeout)
    vectors = client.embed(spec.model_name, list(texts), expect_dim=spec.dim)
    return EmbedBatch(texts=list(texts), vectors=vectors)
