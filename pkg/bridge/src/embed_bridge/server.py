"""HTTP surface of the bridge: the /embed and /health wire protocol.

Request/response contract (shared with the search engine's client):

  * ``POST /embed`` with ``{"model": str, "texts": [str, ...]}`` returns
    ``{"dim": int, "vectors": [[float, ...], ...]}`` with one vector per
    text, in order.
  * Malformed requests (wrong shape, empty texts, oversized batch) are
    400; an unknown model name is 422; an encoder failure is 500.  Every
    error body is ``{"error": "<message>"}``.
  * ``GET /health`` returns ``{"status": "ok", "models": [...]}``.

Models load lazily: the first request for a model pays its construction
cost, and the declared dimension is validated right then with a probe
text.  Requests for the same model are serialized through a per-model
lock (transformer backends are not reentrant); distinct models embed
concurrently.  The hashing fallback is weightless, so those models are
probed eagerly at startup to surface configuration errors immediately.
"""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .encoders import CodeEncoder, EncoderError, HashFallbackEncoder, SentenceEncoder

__all__ = ["BridgeConfig", "ModelRegistry", "ModelSpec", "create_app", "run_bridge"]

MODEL_KINDS = ("hash-fallback", "sentence-encoder", "code-encoder")
DEFAULT_BATCH_CAP = 256
_PROBE_TEXT = "dimension probe"


@dataclass(frozen=True)
class ModelSpec:
    """One served model: backend kind, declared dimension, parameters.

    ``seed`` only applies to hash-fallback; ``model_id`` names the
    checkpoint for the pretrained kinds and must stay empty otherwise.
    """

    kind: str
    dim: int
    seed: int = 0
    model_id: str = ""

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.dim < 1:
            raise ValueError(f"model dim must be >= 1, got {self.dim}")
        if self.kind == "hash-fallback" and self.model_id:
            raise ValueError("hash-fallback takes no model_id")
        if self.kind != "hash-fallback" and not self.model_id:
            raise ValueError(f"{self.kind} requires a model_id")


@dataclass(frozen=True)
class BridgeConfig:
    """Server configuration: the model table and listener parameters."""

    models: dict[str, ModelSpec] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 8200
    batch_cap: int = DEFAULT_BATCH_CAP

    def __post_init__(self) -> None:
        if not self.models:
            raise ValueError("bridge requires at least one model")
        if self.batch_cap < 1:
            raise ValueError(f"batch cap must be >= 1, got {self.batch_cap}")


class _Entry:
    """Registry slot: spec plus the lazily built, probed encoder."""

    __slots__ = ("spec", "lock", "encoder", "probed")

    def __init__(self, spec: ModelSpec) -> None:
        self.spec = spec
        self.lock = threading.Lock()
        self.encoder: object | None = None
        self.probed = False


class ModelRegistry:
    """Name -> encoder table with lazy loading and per-model locking.

    ``overrides`` maps model names to prebuilt encoder objects (anything
    with ``encode(texts) -> (n, dim) array``); tests use it to stand in
    for transformer backends without touching the loading machinery.
    """

    def __init__(
        self,
        models: dict[str, ModelSpec],
        overrides: dict[str, object] | None = None,
    ) -> None:
        self._entries = {name: _Entry(spec) for name, spec in models.items()}
        self._overrides = dict(overrides) if overrides else {}
        for name in self._overrides:
            if name not in self._entries:
                raise ValueError(f"override for unknown model {name!r}")

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return sorted(self._entries)

    def spec_for(self, name: str) -> ModelSpec:
        return self._entries[name].spec

    def warm(self) -> None:
        """Probe every weightless model now; leave heavy ones lazy."""
        for name, entry in self._entries.items():
            if entry.spec.kind == "hash-fallback":
                with entry.lock:
                    self._ensure(name, entry)

    def encode(self, name: str, texts: list[str]) -> np.ndarray:
        """Embed ``texts`` with model ``name``, serialized per model."""
        entry = self._entries[name]
        with entry.lock:
            encoder = self._ensure(name, entry)
            vectors = np.asarray(encoder.encode(list(texts)))
        if vectors.shape != (len(texts), entry.spec.dim):
            raise EncoderError(
                f"model {name!r} returned shape {vectors.shape}, "
                f"expected ({len(texts)}, {entry.spec.dim})"
            )
        if not np.isfinite(vectors).all():
            raise EncoderError(f"model {name!r} returned non-finite values")
        return vectors

    def _ensure(self, name: str, entry: _Entry) -> object:
        """Build and dimension-probe the encoder once; caller holds the lock."""
        if entry.encoder is None:
            if name in self._overrides:
                entry.encoder = self._overrides[name]
            else:
                entry.encoder = _build_encoder(entry.spec)
        if not entry.probed:
            probe = np.asarray(entry.encoder.encode([_PROBE_TEXT]))
            if probe.shape != (1, entry.spec.dim):
                raise EncoderError(
                    f"model {name!r} declares dim {entry.spec.dim} but probe "
                    f"returned shape {probe.shape}"
                )
            entry.probed = True
        return entry.encoder


def _build_encoder(spec: ModelSpec) -> object:
    if spec.kind == "hash-fallback":
        return HashFallbackEncoder(spec.dim, spec.seed)
    if spec.kind == "sentence-encoder":
        return SentenceEncoder(spec.model_id)
    return CodeEncoder(spec.model_id)


class EmbedRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: str
    texts: list[str]


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(config: BridgeConfig, registry: ModelRegistry | None = None) -> FastAPI:
    """Build the FastAPI app; pass ``registry`` to inject test encoders."""
    reg = registry if registry is not None else ModelRegistry(config.models)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        reg.warm()
        yield

    app = FastAPI(lifespan=lifespan)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(400, f"malformed request: {exc.errors()[0]['msg']}")

    # Sync endpoints run in the threadpool, so requests for different
    # models embed concurrently while the per-model lock serializes
    # requests that share a backend.
    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "models": reg.names()}

    @app.post("/embed")
    def embed(request: EmbedRequest) -> JSONResponse:
        if not request.texts:
            return _error(400, "texts must be a non-empty list")
        if len(request.texts) > config.batch_cap:
            return _error(
                400,
                f"batch of {len(request.texts)} exceeds cap of {config.batch_cap} texts",
            )
        if request.model not in reg:
            return _error(422, f"unknown model {request.model!r}")
        try:
            vectors = reg.encode(request.model, request.texts)
        except EncoderError as exc:
            return _error(500, str(exc))
        except Exception as exc:
            return _error(500, f"encoder failure: {exc}")
        return JSONResponse(
            status_code=200,
            content={
                "dim": reg.spec_for(request.model).dim,
                "vectors": vectors.astype(np.float64).tolist(),
            },
        )

    return app


def run_bridge(config: BridgeConfig) -> None:
    """Serve until interrupted."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
