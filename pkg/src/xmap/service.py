"""HTTP search service: a thin web frontend over ``SearchEngine``.

Endpoints
    GET  /health  liveness plus corpus size and mapper dimensions.
    POST /search  rank code entries for a text query or a raw embedding.

Status mapping
    400  malformed request body, or both/neither of ``query``/``vector``
    422  vector dimension mismatch, non-finite vector, or ``n`` out of range
    503  the external embedder is unreachable or misbehaving
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .embedders import EmbedderSpec
from .errors import DataError, ProtocolError, XmapError
from .pipeline import SearchEngine

logger = logging.getLogger("xmap.service")

DEFAULT_MAX_RESULTS = 100


@dataclass(frozen=True, slots=True)
class ServiceConfig:
    """Everything needed to boot the service."""

    model_path: str
    index_path: str
    corpus_path: str
    embedder: EmbedderSpec | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    max_results: int = DEFAULT_MAX_RESULTS
    embed_timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.max_results < 1:
            raise DataError(f"max_results must be positive, got {self.max_results}")


class SearchRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    query: str | None = None
    vector: list[float] | None = None
    n: int = 10


class HitModel(BaseModel):
    id: str
    distance: float
    rank: int
    doc: str
    code: str


class SearchResponse(BaseModel):
    hits: list[HitModel]


class HealthResponse(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    status: str
    corpus_size: int
    model_dims: list[int]


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(engine: SearchEngine, max_results: int = DEFAULT_MAX_RESULTS) -> FastAPI:
    """Build the FastAPI app around an already-loaded engine."""
    if max_results < 1:
        raise DataError(f"max_results must be positive, got {max_results}")
    app = FastAPI(title="xmap search service", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(400, f"malformed request: {exc.errors()[0].get('msg', 'invalid body')}")

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        latency_ms = (time.perf_counter() - start) * 1000.0
        logger.info(
            json.dumps(
                {
                    "path": request.url.path,
                    "latency_ms": round(latency_ms, 3),
                    "status": response.status_code,
                }
            )
        )
        return response

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            corpus_size=engine.corpus_size,
            model_dims=list(engine.model_dims),
        )

    @app.post("/search", response_model=SearchResponse)
    async def search(body: SearchRequest):
        has_query = body.query is not None
        has_vector = body.vector is not None
        if has_query == has_vector:
            return _error(400, "provide exactly one of 'query' or 'vector'")
        if not 1 <= body.n <= max_results:
            return _error(422, f"n must be between 1 and {max_results}, got {body.n}")
        try:
            if has_vector:
                hits = engine.search_vector(body.vector, body.n)
            else:
                hits = engine.search_text(body.query, body.n)
        except ProtocolError as exc:
            return _error(503, f"embedding backend unavailable: {exc}")
        except DataError as exc:
            return _error(422, str(exc))
        return SearchResponse(hits=[HitModel(**h.to_dict()) for h in hits])

    return app


def run_service(config: ServiceConfig) -> None:
    """Load artifacts, then serve forever.  Exits nonzero if loading fails."""
    import uvicorn

    try:
        engine = SearchEngine.load(
            config.model_path,
            config.index_path,
            config.corpus_path,
            config.embedder,
            config.embed_timeout,
        )
    except (OSError, XmapError) as exc:
        logger.error("failed to load artifacts: %s", exc)
        print(f"failed to load artifacts: {exc}", file=sys.stderr)
        raise SystemExit(3)
    app = create_app(engine, config.max_results)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
