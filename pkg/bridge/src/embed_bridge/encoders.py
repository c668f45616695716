"""Encoder backends: pretrained transformers and the hashing fallback.

Every encoder exposes ``encode(texts) -> (n, dim) float32 array``.  The
pretrained backends import their heavy dependencies lazily so that a
bridge configured only with the hashing fallback runs without torch or
transformers installed, and so that startup never blocks on model
downloads: the first /embed request for a model pays its loading cost.

Tests inject substitute loader callables instead of patching module
globals, which keeps the lazy path itself exercised.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

__all__ = [
    "CodeEncoder",
    "EncoderError",
    "HashFallbackEncoder",
    "SentenceEncoder",
    "pool_code_vector",
]


class EncoderError(Exception):
    """A backend failed to load or to produce usable vectors."""


def pool_code_vector(token_states: np.ndarray) -> np.ndarray:
    """Mean-pool final-layer token states (tokens, dim) into one vector.

    Pooling is float64 regardless of input dtype; the result is float32.
    """
    states = np.asarray(token_states, dtype=np.float64)
    if states.ndim != 2:
        raise EncoderError(f"token states must be 2-D (tokens, dim), got shape {states.shape}")
    if states.shape[0] == 0:
        raise EncoderError("cannot pool zero token states")
    if not np.isfinite(states).all():
        raise EncoderError("token states contain non-finite values")
    return states.mean(axis=0).astype(np.float32)


class HashFallbackEncoder:
    """Deterministic signed-hashing embedder; needs no model weights."""

    __slots__ = ("_dim", "_seed")

    def __init__(self, dim: int, seed: int = 0) -> None:
        if dim < 1:
            raise EncoderError(f"hash-fallback dim must be >= 1, got {dim}")
        self._dim = dim
        self._seed = seed

    def encode(self, texts: list[str]) -> np.ndarray:
        from .hashing import hash_embed

        if not texts:
            return np.zeros((0, self._dim), dtype=np.float32)
        return np.stack([hash_embed(text, self._dim, self._seed) for text in texts])


class SentenceEncoder:
    """Natural-language encoder backed by a sentence-transformers model.

    The model is constructed on first ``encode`` call.  ``loader`` maps a
    model id to an object with ``encode(texts, convert_to_numpy=True)``;
    the default imports sentence-transformers on demand.
    """

    __slots__ = ("_model_id", "_loader", "_model")

    def __init__(self, model_id: str, loader: Callable[[str], object] | None = None) -> None:
        if not model_id:
            raise EncoderError("sentence-encoder requires a model id")
        self._model_id = model_id
        self._loader = loader if loader is not None else _load_sentence_model
        self._model = None

    def encode(self, texts: list[str]) -> np.ndarray:
        if self._model is None:
            try:
                self._model = self._loader(self._model_id)
            except EncoderError:
                raise
            except Exception as exc:
                raise EncoderError(f"failed to load sentence model {self._model_id!r}: {exc}") from exc
        try:
            raw = self._model.encode(list(texts), convert_to_numpy=True)
        except Exception as exc:
            raise EncoderError(f"sentence model {self._model_id!r} failed to encode: {exc}") from exc
        vectors = np.asarray(raw, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise EncoderError(
                f"sentence model {self._model_id!r} returned shape {vectors.shape} for {len(texts)} texts"
            )
        return vectors


class CodeEncoder:
    """Code encoder: per-text transformer pass, mean-pooled token states.

    Texts are encoded one at a time (no cross-text padding, so a text's
    vector never depends on what it was batched with).  ``states_fn``
    maps one text to its (tokens, dim) final-layer states; the default
    builds it from a transformers checkpoint on first use.
    """

    __slots__ = ("_model_id", "_states_loader", "_states_fn")

    def __init__(
        self,
        model_id: str,
        states_loader: Callable[[str], Callable[[str], np.ndarray]] | None = None,
    ) -> None:
        if not model_id:
            raise EncoderError("code-encoder requires a model id")
        self._model_id = model_id
        self._states_loader = states_loader if states_loader is not None else _load_code_states_fn
        self._states_fn: Callable[[str], np.ndarray] | None = None

    def encode(self, texts: list[str]) -> np.ndarray:
        if self._states_fn is None:
            try:
                self._states_fn = self._states_loader(self._model_id)
            except EncoderError:
                raise
            except Exception as exc:
                raise EncoderError(f"failed to load code model {self._model_id!r}: {exc}") from exc
        rows: list[np.ndarray] = []
        for text in texts:
            try:
                states = self._states_fn(text)
            except Exception as exc:
                raise EncoderError(f"code model {self._model_id!r} failed to encode: {exc}") from exc
            rows.append(pool_code_vector(states))
        if not rows:
            raise EncoderError("code encoder received no texts")
        return np.stack(rows)


def _load_sentence_model(model_id: str) -> object:
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise EncoderError(
            "sentence-transformers is not installed; install the 'encoders' extra"
        ) from exc
    return SentenceTransformer(model_id)


def _load_code_states_fn(model_id: str) -> Callable[[str], np.ndarray]:
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise EncoderError(
            "transformers and torch are not installed; install the 'encoders' extra"
        ) from exc
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModel.from_pretrained(model_id)
    model.eval()

    def states_fn(text: str) -> np.ndarray:
        inputs = tokenizer(text, return_tensors="pt", truncation=True)
        with torch.no_grad():
            output = model(**inputs)
        return output.last_hidden_state[0].cpu().numpy()

    return states_fn
