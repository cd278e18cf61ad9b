"""Text embedders: a fully offline TF-IDF embedder and an HTTP API client.

The TF-IDF variant is the no-network stand-in for a dense sentence encoder.
Its formula is pinned so results are reproducible and independently
checkable: terms are ``[a-z0-9_]+`` on lowercased text, tf is the raw count,
idf(t) = ln((1 + n_docs) / (1 + df(t))) + 1, and vectors are L2-normalized.

The API client speaks a small JSON contract:
``POST <embedding_url>`` with ``{"texts": [...]}`` returns
``{"vectors": [[...], ...]}``.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Protocol, Sequence

import httpx

from .backend.base import TransportError, with_retries

_TOKEN_RE = re.compile(r"[a-z0-9_]+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and whitespace are separators."""
    return _TOKEN_RE.findall(text.lower())


class Embedder(Protocol):
    name: str

    def fit(self, corpus: Sequence[str]) -> None: ...

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class TfidfEmbedder:
    """Deterministic lexical embedder fitted on the demonstration pool."""

    name = "tfidf"

    def __init__(self) -> None:
        self._index: dict[str, int] | None = None
        self._idf: list[float] = []

    def fit(self, corpus: Sequence[str]) -> None:
        doc_freq: Counter[str] = Counter()
        for text in corpus:
            doc_freq.update(set(tokenize(text)))
        terms = sorted(doc_freq)
        n_docs = len(corpus)
        self._index = {term: i for i, term in enumerate(terms)}
        self._idf = [
            math.log((1 + n_docs) / (1 + doc_freq[term])) + 1.0 for term in terms
        ]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if self._index is None:
            raise RuntimeError("TfidfEmbedder must be fitted before embedding")
        vectors: list[list[float]] = []
        for text in texts:
            vec = [0.0] * len(self._index)
            for term, count in Counter(tokenize(text)).items():
                slot = self._index.get(term)
                if slot is not None:
                    vec[slot] = count * self._idf[slot]
            norm = math.sqrt(math.fsum(v * v for v in vec))
            if norm > 0.0:
                vec = [v / norm for v in vec]
            vectors.append(vec)
        return vectors


class HttpEmbedder:
    """Client for an external embedding service."""

    name = "api"

    def __init__(
        self,
        url: str,
        *,
        attempts: int = 3,
        retry_delay: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        if not url:
            raise ValueError("embedding service URL must be configured")
        self.url = url
        self._attempts = attempts
        self._retry_delay = retry_delay
        self._client = client or httpx.Client(timeout=timeout)

    def fit(self, corpus: Sequence[str]) -> None:
        pass  # the remote model is already trained

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        def call() -> list[list[float]]:
            try:
                response = self._client.post(self.url, json={"texts": list(texts)})
            except httpx.TransportError as exc:
                raise TransportError(str(exc)) from exc
            if response.status_code >= 400:
                raise TransportError(f"embedding service HTTP {response.status_code}")
            vectors = response.json().get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(texts):
                raise TransportError("embedding service returned a malformed payload")
            return [[float(x) for x in vec] for vec in vectors]

        return with_retries(call, attempts=self._attempts, base_delay=self._retry_delay)
