"""Text embedding providers: a deterministic offline one and a remote client.

Every provider maps caption text to a unit-norm float64 vector, and is a pure
function of its input: the same string always yields byte-identical output.
Stores record the provider name and dimension so vectors from different
providers are never mixed.
"""

from __future__ import annotations

import hashlib
import re
import threading
import time
from collections import Counter

import numpy as np
import requests

from .errors import DimensionMismatch, EmptyText, ProviderUnavailable

_WHITESPACE = re.compile(r"\s+")


class EmbeddingProvider:
    """Base class; subclasses implement ``_embed_clean``."""

    name: str = "abstract"
    dim: int = 0

    def embed(self, text: str) -> np.ndarray:
        cleaned = self._clean(text)
        return self._embed_clean(cleaned)

    def embed_batch(self, texts) -> list[np.ndarray]:
        """Element-wise identical to mapping :meth:`embed`; order preserved.

        All texts are validated up front so a bad element aborts the batch
        before any work happens.
        """
        cleaned = [self._clean(t) for t in texts]
        return [self._embed_clean(c) for c in cleaned]

    def _clean(self, text: str) -> str:
        if not isinstance(text, str):
            raise EmptyText(f"expected text, got {type(text).__name__}")
        cleaned = _WHITESPACE.sub(" ", text).strip()
        if not cleaned:
            raise EmptyText("cannot embed empty text")
        return cleaned

    def _embed_clean(self, text: str) -> np.ndarray:
        raise NotImplementedError


def _normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return vector / norm


class HashedNgramEmbedder(EmbeddingProvider):
    """Deterministic offline embedder: hashed character-3-gram bag.

    3-grams of the lowercased text are hashed into a fixed number of buckets,
    the bucket counts are projected through a seeded random matrix, and the
    result is L2-normalized.  Token overlap between two strings shows up as
    shared buckets and therefore higher cosine similarity, which is exactly
    the behavior caption retrieval needs, with no model in the loop.
    """

    def __init__(self, dim: int = 256, buckets: int = 4096, seed: int = 0):
        if dim < 1 or buckets < 1:
            raise ValueError("dim and buckets must be positive")
        self.dim = dim
        self.buckets = buckets
        self.seed = seed
        self.name = f"hashed-3gram-d{dim}-b{buckets}-s{seed}"
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((buckets, dim))

    def _embed_clean(self, text: str) -> np.ndarray:
        padded = f" {text.casefold()} "
        counts: Counter[int] = Counter()
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3].encode("utf-8")
            digest = hashlib.blake2b(gram, digest_size=8).digest()
            counts[int.from_bytes(digest, "little") % self.buckets] += 1
        vector = np.zeros(self.dim, dtype=np.float64)
        for bucket, count in counts.items():
            vector += count * self._projection[bucket]
        return _normalize(vector)


class RemoteEmbedder(EmbeddingProvider):
    """Client for a JSON embedding endpoint.

    Wire contract: ``POST base_url`` with ``{"model": ..., "input": [texts]}``
    returns ``{"data": [{"embedding": [floats]}, ...]}`` in input order (an
    optional ``index`` field is honored when present).  Vectors are
    re-normalized locally so the unit-norm contract holds regardless of what
    the service returns.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
    ):
        self.base_url = base_url
        self.model = model
        self.dim = dim
        self.name = f"remote:{model}-d{dim}"
        self._api_key = api_key
        self._timeout = timeout
        self._max_retries = max_retries
        self._backoff = backoff
        self._slots = threading.Semaphore(max_in_flight)

    def embed_batch(self, texts) -> list[np.ndarray]:
        cleaned = [self._clean(t) for t in texts]
        if not cleaned:
            return []
        payload = self._post({"model": self.model, "input": cleaned})
        return self._parse(payload, expected=len(cleaned))

    def _embed_clean(self, text: str) -> np.ndarray:
        payload = self._post({"model": self.model, "input": [text]})
        return self._parse(payload, expected=1)[0]

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_error = None
        for attempt in range(self._max_retries + 1):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    resp = requests.post(
                        self.base_url, json=body, headers=headers, timeout=self._timeout
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProviderUnavailable(
                        f"embedding service returned invalid JSON: {exc}"
                    ) from exc
            if 400 <= resp.status_code < 500:
                # The request itself is bad; retrying cannot help.
                raise ProviderUnavailable(
                    f"embedding service rejected request: HTTP {resp.status_code}"
                )
            last_error = RuntimeError(f"HTTP {resp.status_code}")
        raise ProviderUnavailable(
            f"embedding service unreachable after {self._max_retries + 1} attempts: {last_error}"
        )

    def _parse(self, payload: dict, expected: int) -> list[np.ndarray]:
        items = payload.get("data")
        if not isinstance(items, list) or len(items) != expected:
            raise ProviderUnavailable(
                f"embedding response malformed: expected {expected} vectors"
            )
        indexed = sorted(
            (item.get("index", i), item) for i, item in enumerate(items)
        )
        vectors = []
        for _, item in indexed:
            raw = np.asarray(item.get("embedding"), dtype=np.float64).reshape(-1)
            if raw.size != self.dim:
                raise DimensionMismatch(
                    f"service returned dim {raw.size}, expected {self.dim}"
                )
            vectors.append(_normalize(raw))
        return vectors


class CachingEmbedder(EmbeddingProvider):
    """Memoizing wrapper; safe because providers are pure functions of text."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.name = inner.name
        self.dim = inner.dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _embed_clean(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(text)
        if hit is None:
            hit = self.inner._embed_clean(text)
            with self._lock:
                self._cache[text] = hit
        return hit.copy()


__all__ = [
    "CachingEmbedder",
    "EmbeddingProvider",
    "HashedNgramEmbedder",
    "RemoteEmbedder",
]
