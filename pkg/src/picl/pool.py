"""Demonstration pool: JSONL ingestion, lexical indexing, embedding cache.

Pool files are JSONL with fields ``id``, ``problem``, ``solution`` and an
optional ``embedding`` array. Embeddings computed by an embedder persist to
a sidecar JSON file next to the pool::

    {"format": "picl-pool-embeddings-v1", "content_hash": "...",
     "embedder": "tfidf", "text_mode": "problem_only", "dim": 128,
     "vectors": [[...], ...]}

Cached vectors are reused only when the content hash of the canonicalized
pool records, the embedder name, and the text mode all match; partial
indexes are never persisted. The content hash is sha256 over the records
re-serialized one per line as compact JSON with sorted keys
(``{"id":...,"problem":...,"solution":...}``).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import Embedder, tokenize
from .types import DEFAULT_DEMO_TEMPLATE, Demonstration, render_demonstration

SIDECAR_FORMAT = "picl-pool-embeddings-v1"
REQUIRED_FIELDS = ("id", "problem", "solution")


class PoolError(Exception):
    """Malformed pool file or inconsistent pool state."""


class PoolNotEmbeddedError(PoolError):
    """Semantic retrieval was attempted on a pool without an embedding index."""


@dataclass(frozen=True)
class LexicalIndex:
    """Term statistics for BM25 over the pool."""

    term_counts: tuple[dict[str, int], ...]
    doc_freqs: dict[str, int]
    doc_lengths: tuple[int, ...]
    avg_doc_length: float
    text_mode: str


@dataclass(frozen=True)
class DemonstrationPool:
    demos: tuple[Demonstration, ...]
    lexical_index: LexicalIndex
    content_hash: str
    embedding_index: np.ndarray | None = None
    embedder_name: str | None = None
    text_mode: str = "problem_only"

    def __len__(self) -> int:
        return len(self.demos)

    def demo_by_id(self, demo_id: str) -> Demonstration:
        for demo in self.demos:
            if demo.id == demo_id:
                return demo
        raise KeyError(demo_id)


def embedding_text(
    demo: Demonstration, text_mode: str, demo_template: str = DEFAULT_DEMO_TEMPLATE
) -> str:
    """Text a demonstration is encoded from: its problem alone, or the full
    rendered pair."""
    if text_mode == "problem_only":
        return demo.problem
    if text_mode == "full_demo":
        return render_demonstration(demo, demo_template)
    raise ValueError(f"unknown text mode {text_mode!r}")


def pool_content_hash(demos: Sequence[Demonstration]) -> str:
    lines = [
        json.dumps(
            {"id": d.id, "problem": d.problem, "solution": d.solution},
            sort_keys=True,
            ensure_ascii=False,
            separators=(",", ":"),
        )
        for d in demos
    ]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def build_lexical_index(
    demos: Sequence[Demonstration], text_mode: str, demo_template: str = DEFAULT_DEMO_TEMPLATE
) -> LexicalIndex:
    term_counts: list[dict[str, int]] = []
    doc_freqs: Counter[str] = Counter()
    lengths: list[int] = []
    for demo in demos:
        tokens = tokenize(embedding_text(demo, text_mode, demo_template))
        counts = dict(Counter(tokens))
        term_counts.append(counts)
        doc_freqs.update(counts.keys())
        lengths.append(len(tokens))
    avg = (sum(lengths) / len(lengths)) if lengths else 0.0
    return LexicalIndex(
        term_counts=tuple(term_counts),
        doc_freqs=dict(doc_freqs),
        doc_lengths=tuple(lengths),
        avg_doc_length=avg,
        text_mode=text_mode,
    )


def _freeze(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    matrix.setflags(write=False)
    return matrix


def _parse_line(line: str, lineno: int) -> Demonstration:
    try:
        record = json.loads(line)
    except ValueError as exc:
        raise PoolError(f"line {lineno}: invalid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise PoolError(f"line {lineno}: record must be a JSON object")
    for name in REQUIRED_FIELDS:
        if name not in record:
            raise PoolError(f"line {lineno}: missing field {name}")
        if not isinstance(record[name], str) or not record[name]:
            raise PoolError(f"line {lineno}: field {name} must be a non-empty string")
    embedding = record.get("embedding")
    if embedding is not None and (
        not isinstance(embedding, list) or not all(isinstance(x, (int, float)) for x in embedding)
    ):
        raise PoolError(f"line {lineno}: field embedding must be an array of numbers")
    try:
        return Demonstration(
            id=record["id"],
            problem=record["problem"],
            solution=record["solution"],
            embedding=tuple(embedding) if embedding is not None else None,
        )
    except ValueError as exc:
        raise PoolError(f"line {lineno}: {exc}") from exc


def load_pool(
    path: str | Path,
    *,
    text_mode: str = "problem_only",
    demo_template: str = DEFAULT_DEMO_TEMPLATE,
) -> DemonstrationPool:
    """Load and validate a JSONL pool; the lexical index is built eagerly.

    If every record carries a precomputed embedding of equal dimension, the
    embedding index is assembled directly from them.
    """
    path = Path(path)
    if not path.exists():
        raise PoolError(f"pool file not found: {path}")
    demos: list[Demonstration] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        demo = _parse_line(line, lineno)
        if demo.id in seen:
            raise PoolError(
                f"duplicate id {demo.id!r} (lines {seen[demo.id]} and {lineno})"
            )
        seen[demo.id] = lineno
        demos.append(demo)

    index: np.ndarray | None = None
    embedder_name: str | None = None
    if demos and all(d.embedding is not None for d in demos):
        dims = {len(d.embedding) for d in demos}  # type: ignore[arg-type]
        if len(dims) != 1:
            raise PoolError(f"precomputed embeddings disagree on dimension: {sorted(dims)}")
        index = _freeze(np.array([d.embedding for d in demos], dtype=np.float64))
        embedder_name = "precomputed"

    return DemonstrationPool(
        demos=tuple(demos),
        lexical_index=build_lexical_index(demos, text_mode, demo_template),
        content_hash=pool_content_hash(demos),
        embedding_index=index,
        embedder_name=embedder_name,
        text_mode=text_mode,
    )


def _load_sidecar(
    cache_path: Path, pool: DemonstrationPool, embedder_name: str
) -> np.ndarray | None:
    if not cache_path.exists():
        return None
    try:
        data = json.loads(cache_path.read_text(encoding="utf-8"))
    except ValueError:
        return None
    if (
        data.get("format") != SIDECAR_FORMAT
        or data.get("content_hash") != pool.content_hash
        or data.get("embedder") != embedder_name
        or data.get("text_mode") != pool.text_mode
    ):
        return None
    vectors = data.get("vectors")
    if not isinstance(vectors, list) or len(vectors) != len(pool):
        return None
    return _freeze(np.array(vectors, dtype=np.float64))


def _write_sidecar(cache_path: Path, pool: DemonstrationPool, embedder_name: str, matrix: np.ndarray) -> None:
    payload = {
        "format": SIDECAR_FORMAT,
        "content_hash": pool.content_hash,
        "embedder": embedder_name,
        "text_mode": pool.text_mode,
        "dim": int(matrix.shape[1]) if matrix.size else 0,
        "vectors": matrix.tolist(),
    }
    cache_path.write_text(json.dumps(payload), encoding="utf-8")


def embed_pool(
    pool: DemonstrationPool,
    embedder: Embedder,
    *,
    cache_path: str | Path | None = None,
    demo_template: str = DEFAULT_DEMO_TEMPLATE,
    write_cache: bool = True,
) -> DemonstrationPool:
    """Attach an embedding index computed over each demonstration's text.

    The embedder is always fitted on the pool corpus (so later query
    encodings share its vocabulary); cached vectors are loaded instead of
    re-embedding when the sidecar matches. A failure on any item fails the
    whole operation and persists nothing. ``write_cache=False`` reuses a
    valid sidecar without ever writing one (read-only callers).
    """
    texts = [embedding_text(d, pool.text_mode, demo_template) for d in pool.demos]
    embedder.fit(texts)

    cache = Path(cache_path) if cache_path is not None else None
    if cache is not None:
        cached = _load_sidecar(cache, pool, embedder.name)
        if cached is not None:
            return replace(pool, embedding_index=cached, embedder_name=embedder.name)

    if texts:
        vectors = embedder.embed(texts)
        matrix = np.array(vectors, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(pool):
            raise PoolError("embedder returned a malformed vector batch")
        norms = np.sqrt((matrix * matrix).sum(axis=1))
        dead = [pool.demos[i].id for i in np.nonzero(norms == 0.0)[0]]
        if dead:
            raise PoolError(f"embedder produced zero vectors for demos: {dead}")
    else:
        matrix = np.zeros((0, 0), dtype=np.float64)
    matrix = _freeze(matrix)

    if cache is not None and write_cache:
        _write_sidecar(cache, pool, embedder.name, matrix)
    return replace(pool, embedding_index=matrix, embedder_name=embedder.name)
