"""Embedding bridge: serves vectors over the search engine's wire protocol.

The bridge hosts one or more named embedding models behind a small HTTP
API (POST /embed, GET /health).  Models are either pretrained encoders
(sentence or code transformers, loaded lazily on first use) or the
deterministic hashing fallback that needs no model weights at all.
"""

from __future__ import annotations

from .encoders import (
    CodeEncoder,
    EncoderError,
    HashFallbackEncoder,
    SentenceEncoder,
    pool_code_vector,
)
from .hashing import hash_embed
from .server import BridgeConfig, ModelRegistry, ModelSpec, create_app

__all__ = [
    "BridgeConfig",
    "CodeEncoder",
    "EncoderError",
    "HashFallbackEncoder",
    "ModelRegistry",
    "ModelSpec",
    "SentenceEncoder",
    "create_app",
    "hash_embed",
    "pool_code_vector",
]
