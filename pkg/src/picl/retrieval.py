"""Candidate retrieval and confusion-aware reranking.

Phase 1 narrows the pool to the top-N demonstrations by cosine similarity
between the query encoding and the pool's embedding index (BM25 is the
lexical alternative used by the matching baseline). Phase 2 rescores those
candidates against a composite of the query, the demonstration, and the
confusion summary, and keeps the top-k.

The canonical composite form is the separator-joined string
``[CLS] q [SEP] d_i [SEP] C [SEP]`` (see ``composite_input``). Those literal
markers only make sense to a model that owns its own special tokens, so the
two reranker implementations map the composite onto their actual inputs:

* ``LexicalReranker`` (offline): score = cosine of TF-IDF(q + C) against
  TF-IDF(d_i), with the vectorizer fitted on the candidate texts plus the
  query side.
* ``HttpReranker``: sends ``{"query": q + "\\n" + C, "documents": [...]}``
  and expects ``{"scores": [...]}``; the service applies its own template.

All orderings are total via (score descending, pool index ascending), which
makes tie-breaking reproducible across runs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import httpx
import numpy as np

from .backend.base import BackendError, TransportError, with_retries
from .embedding import Embedder, TfidfEmbedder, tokenize
from .pool import DemonstrationPool, PoolNotEmbeddedError
from .types import ConfusionSummary, Query, render_demonstration

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75


@dataclass(frozen=True)
class RankedCandidate:
    demo_id: str
    phase1_score: float
    pool_index: int
    phase2_score: float | None = None


@dataclass(frozen=True)
class RerankResult:
    selected: tuple[RankedCandidate, ...]
    degraded: bool = False
    warnings: tuple[str, ...] = ()


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two vectors, clamped into [-1, 1]."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined similarity for zero-norm input")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def _ranked(scores: np.ndarray, pool: DemonstrationPool, n: int) -> list[RankedCandidate]:
    order = np.argsort(-scores, kind="stable")[:n]
    return [
        RankedCandidate(
            demo_id=pool.demos[int(i)].id,
            phase1_score=float(scores[int(i)]),
            pool_index=int(i),
        )
        for i in order
    ]


def retrieve_candidates(
    pool: DemonstrationPool, query: Query, n: int, embedder: Embedder
) -> list[RankedCandidate]:
    """Top-n pool entries by cosine similarity to the encoded query.

    Requires an embedding index built with the same embedder family that
    encodes the query. A query that encodes to the zero vector (e.g. fully
    out-of-vocabulary under the lexical embedder) scores 0 everywhere and
    falls back to pool order, mirroring the BM25 absent-term behavior.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if pool.embedding_index is None:
        raise PoolNotEmbeddedError(
            "pool has no embedding index; run `picl pool embed` (or embed_pool) first"
        )
    qv = np.asarray(embedder.embed([query.text])[0], dtype=np.float64)
    matrix = pool.embedding_index
    if matrix.shape[0] == 0:
        return []
    if qv.shape[0] != matrix.shape[1]:
        raise ValueError(
            f"query embedding dimension {qv.shape[0]} does not match index {matrix.shape[1]}"
        )
    qnorm = float(np.linalg.norm(qv))
    if qnorm == 0.0:
        logger.warning("query %r encoded to a zero vector; falling back to pool order", query.id)
        scores = np.zeros(matrix.shape[0], dtype=np.float64)
    else:
        norms = np.sqrt((matrix * matrix).sum(axis=1))
        scores = (matrix @ qv) / (norms * qnorm)
    return _ranked(scores, pool, n)


def bm25_score(
    term_counts: dict[str, int],
    doc_length: int,
    query_terms: Sequence[str],
    doc_freqs: dict[str, int],
    n_docs: int,
    avg_doc_length: float,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    """Okapi BM25 with the nonnegative (plus-one) idf variant:

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
    score  = sum over query term occurrences of
             idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    """
    score = 0.0
    for term in query_terms:
        tf = term_counts.get(term, 0)
        if tf == 0:
            continue
        df = doc_freqs.get(term, 0)
        idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
        norm = k1 * (1.0 - b + b * doc_length / avg_doc_length) if avg_doc_length > 0 else k1
        score += idf * tf * (k1 + 1.0) / (tf + norm)
    return score


def bm25_retrieve(
    pool: DemonstrationPool,
    query_text: str,
    n: int,
    *,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> list[RankedCandidate]:
    """Top-n pool entries by BM25 over the pool's lexical index."""
    if n < 1:
        raise ValueError("n must be >= 1")
    terms = tokenize(query_text)
    if not terms:
        raise ValueError("empty query after tokenization")
    index = pool.lexical_index
    n_docs = len(pool)
    if n_docs == 0:
        return []
    scores = np.array(
        [
            bm25_score(
                index.term_counts[i],
                index.doc_lengths[i],
                terms,
                index.doc_freqs,
                n_docs,
                index.avg_doc_length,
                k1,
                b,
            )
            for i in range(n_docs)
        ],
        dtype=np.float64,
    )
    return _ranked(scores, pool, n)


def composite_input(query_text: str, demo_text: str, confusion_text: str) -> str:
    """Canonical composite form a cross-encoder scores a candidate on."""
    return f"[CLS] {query_text} [SEP] {demo_text} [SEP] {confusion_text} [SEP]"


class LexicalReranker:
    """Offline fallback: TF-IDF cosine between (query + confusion) and demo."""

    name = "lexical"

    def score(self, query_text: str, confusion_text: str, documents: Sequence[str]) -> list[float]:
        query_side = f"{query_text}\n{confusion_text}"
        embedder = TfidfEmbedder()
        embedder.fit(list(documents) + [query_side])
        vectors = embedder.embed([query_side] + list(documents))
        qv = vectors[0]
        scores = []
        for dv in vectors[1:]:
            dot = math.fsum(x * y for x, y in zip(qv, dv))
            scores.append(dot)  # vectors are already L2-normalized (or zero)
        return scores


class HttpReranker:
    """Client for an external cross-encoder service.

    The composite maps onto the wire contract as (query = q + "\\n" + C,
    document = d_i); the service applies its own special tokens.
    """

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
            raise ValueError("reranker service URL must be configured")
        self.url = url
        self._attempts = attempts
        self._retry_delay = retry_delay
        self._client = client or httpx.Client(timeout=timeout)

    def score(self, query_text: str, confusion_text: str, documents: Sequence[str]) -> list[float]:
        payload = {"query": f"{query_text}\n{confusion_text}", "documents": list(documents)}

        def call() -> list[float]:
            try:
                response = self._client.post(self.url, json=payload)
            except httpx.TransportError as exc:
                raise TransportError(str(exc)) from exc
            if response.status_code >= 400:
                raise TransportError(f"reranker service HTTP {response.status_code}")
            scores = response.json().get("scores")
            if not isinstance(scores, list) or len(scores) != len(documents):
                raise TransportError("reranker service returned a malformed payload")
            return [float(s) for s in scores]

        return with_retries(call, attempts=self._attempts, base_delay=self._retry_delay)


def rerank(
    candidates: Sequence[RankedCandidate],
    query: Query,
    summary: ConfusionSummary,
    k: int,
    reranker: LexicalReranker | HttpReranker,
    pool: DemonstrationPool,
) -> RerankResult:
    """Rescore phase-1 candidates against the confusion summary, keep top-k.

    Reranking is only reached when confusion exists, so an empty summary is a
    caller bug. If the reranker fails after retries the phase-1 order is kept
    and the degradation is reported for the transcript.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if summary.is_empty:
        raise ValueError("rerank requires a non-empty confusion summary")
    if k < 1:
        raise ValueError("k must be >= 1")
    documents = [render_demonstration(pool.demo_by_id(c.demo_id)) for c in candidates]
    if logger.isEnabledFor(logging.DEBUG):
        for c, doc in zip(candidates, documents):
            logger.debug("rerank composite: %s", composite_input(query.text, doc, summary.text))
    try:
        scores = reranker.score(query.text, summary.text, documents)
    except BackendError as exc:
        return RerankResult(
            selected=tuple(candidates[:k]),
            degraded=True,
            warnings=(f"reranker failed ({exc}); fell back to phase-1 order",),
        )
    rescored = [replace(c, phase2_score=float(s)) for c, s in zip(candidates, scores)]
    rescored.sort(key=lambda c: (-c.phase2_score, c.pool_index))  # type: ignore[operator]
    return RerankResult(selected=tuple(rescored[:k]))
