"""Text embedding providers behind one small interface.

The offline provider derives a unit vector from a hash of the text: useless
semantically, but deterministic across processes and platforms, which is what
tests and reproducible fixtures need. The HTTP provider talks to any
OpenAI-style /embeddings endpoint.
"""
from __future__ import annotations

import hashlib
import os
from typing import Protocol

import numpy as np
import requests

DEFAULT_DIMENSION = 1536
DEFAULT_MAX_CHARS = 32_768


class ProviderError(Exception):
    """Transport or quota failure from an embedding provider."""


class TextTooLong(ProviderError):
    pass


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic offline embedder: seeded hash-derived unit vectors."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, max_chars: int = DEFAULT_MAX_CHARS):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.max_chars = max_chars

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ProviderError("cannot embed empty text")
        if len(text) > self.max_chars:
            raise TextTooLong(f"text of {len(text)} chars exceeds budget {self.max_chars}")
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        vec = np.random.default_rng(seed).standard_normal(self.dimension)
        return vec / np.linalg.norm(vec)


class HttpEmbedder:
    """OpenAI-style embeddings endpoint client."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "",
        dimension: int = DEFAULT_DIMENSION,
        timeout_s: float = 30.0,
        max_chars: int = DEFAULT_MAX_CHARS,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.dimension = dimension
        self.timeout_s = timeout_s
        self.max_chars = max_chars

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ProviderError("cannot embed empty text")
        if len(text) > self.max_chars:
            raise TextTooLong(f"text of {len(text)} chars exceeds budget {self.max_chars}")
        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if not key:
                raise ProviderError(f"api key env var {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.RequestException as err:
            raise ProviderError(f"embedding request failed: {err}") from err
        if resp.status_code != 200:
            raise ProviderError(f"embedding endpoint returned {resp.status_code}")
        try:
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, ValueError, TypeError) as err:
            raise ProviderError(f"malformed embedding response: {err}") from err
        if vec.shape != (self.dimension,) or not np.all(np.isfinite(vec)):
            raise ProviderError(
                f"embedding has shape {vec.shape}, expected ({self.dimension},)"
            )
        return vec
