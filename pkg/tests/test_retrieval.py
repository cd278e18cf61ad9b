from __future__ import annotations

import json
import random

import httpx
import pytest

from conftest import MappingEmbedder, make_pool
from oracles import (
    bm25_oracle,
    brute_force_topn,
    sparse_cosine,
    tfidf_vectors_oracle,
)
from picl.embedding import TfidfEmbedder, tokenize
from picl.pool import PoolNotEmbeddedError, embed_pool
from picl.retrieval import (
    HttpReranker,
    LexicalReranker,
    RankedCandidate,
    bm25_retrieve,
    composite_input,
    cosine_similarity,
    rerank,
    retrieve_candidates,
)
from picl.types import ConfusionSummary, Query, render_demonstration


def _records(texts: list[str], embeddings: list[list[float]] | None = None) -> list[dict]:
    records = []
    for i, text in enumerate(texts):
        record = {"id": f"d{i}", "problem": text, "solution": f"solution {i}"}
        if embeddings is not None:
            record["embedding"] = embeddings[i]
        records.append(record)
    return records


# --- cosine ---


def test_cosine_identity() -> None:
    assert cosine_similarity([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal() -> None:
    assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_hand_computed() -> None:
    # 4 / (sqrt(5) * sqrt(5)) = 0.8
    assert cosine_similarity([1.0, 2.0], [2.0, 1.0]) == pytest.approx(0.8, abs=1e-12)


def test_cosine_zero_norm_rejected() -> None:
    with pytest.raises(ValueError, match="undefined similarity"):
        cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_cosine_dimension_mismatch_rejected() -> None:
    with pytest.raises(ValueError, match="dimension mismatch"):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_cosine_scaling_invariance() -> None:
    rng = random.Random(3)
    for _ in range(50):
        a = [rng.uniform(-1, 1) + 0.01 for _ in range(6)]
        b = [rng.uniform(-1, 1) + 0.01 for _ in range(6)]
        alpha = rng.uniform(0.1, 50.0)
        assert cosine_similarity([alpha * x for x in a], b) == pytest.approx(
            cosine_similarity(a, b), abs=1e-12
        )


# --- phase 1 retrieval ---


def test_retrieve_matches_brute_force_oracle() -> None:
    rng = random.Random(11)
    vectors = [[rng.gauss(0, 1) for _ in range(8)] for _ in range(100)]
    pool = make_pool(_records([f"problem {i}" for i in range(100)], vectors))
    query = Query(id="q", text="the query")
    query_vec = [rng.gauss(0, 1) for _ in range(8)]
    embedder = MappingEmbedder({query.text: query_vec})
    got = retrieve_candidates(pool, query, 5, embedder)
    expected = brute_force_topn(vectors, query_vec, 5)
    assert [c.pool_index for c in got] == expected


def test_retrieve_identity_vector_ranks_first() -> None:
    vectors = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]
    pool = make_pool(_records(["a", "b", "c"], vectors))
    query = Query(id="q", text="q")
    embedder = MappingEmbedder({"q": [0.0, 1.0]})
    got = retrieve_candidates(pool, query, 1, embedder)
    assert got[0].demo_id == "d1"
    assert got[0].phase1_score == pytest.approx(1.0, abs=1e-12)


def test_retrieve_ties_break_by_pool_index() -> None:
    vectors = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    pool = make_pool(_records(["a", "b", "c"], vectors))
    embedder = MappingEmbedder({"q": [1.0, 0.0]})
    got = retrieve_candidates(pool, Query(id="q", text="q"), 2, embedder)
    assert [c.pool_index for c in got] == [0, 1]


def test_retrieve_n_larger_than_pool_returns_everything_ranked() -> None:
    vectors = [[1.0, 0.0], [0.5, 0.5]]
    pool = make_pool(_records(["a", "b"], vectors))
    embedder = MappingEmbedder({"q": [1.0, 0.0]})
    got = retrieve_candidates(pool, Query(id="q", text="q"), 10, embedder)
    assert len(got) == 2


def test_retrieve_requires_embedding_index() -> None:
    pool = make_pool(_records(["a", "b"]))
    embedder = MappingEmbedder({"q": [1.0]})
    with pytest.raises(PoolNotEmbeddedError, match="pool embed"):
        retrieve_candidates(pool, Query(id="q", text="q"), 1, embedder)


def test_retrieve_zero_query_vector_falls_back_to_pool_order() -> None:
    vectors = [[1.0, 0.0], [0.0, 1.0]]
    pool = make_pool(_records(["a", "b"], vectors))
    embedder = MappingEmbedder({"q": [0.0, 0.0]})
    got = retrieve_candidates(pool, Query(id="q", text="q"), 2, embedder)
    assert [c.pool_index for c in got] == [0, 1]
    assert all(c.phase1_score == 0.0 for c in got)


# --- BM25 ---


def test_bm25_toy_corpus_order_and_scores() -> None:
    pool = make_pool(_records(["a b", "a a b", "c"]))
    got = bm25_retrieve(pool, "a", 3)
    corpus_tokens = [tokenize(t) for t in ("a b", "a a b", "c")]
    oracle_scores = bm25_oracle(corpus_tokens, ["a"])
    by_index = {c.pool_index: c.phase1_score for c in got}
    for i, expected in enumerate(oracle_scores):
        assert by_index[i] == pytest.approx(expected, abs=1e-9)
    assert [c.pool_index for c in got] == [1, 0, 2]
    assert by_index[2] == 0.0


def test_bm25_absent_term_scores_zero_everywhere() -> None:
    pool = make_pool(_records(["a b", "c d"]))
    got = bm25_retrieve(pool, "zzz", 2)
    assert [c.pool_index for c in got] == [0, 1]
    assert all(c.phase1_score == 0.0 for c in got)


def test_bm25_empty_query_rejected() -> None:
    pool = make_pool(_records(["a"]))
    with pytest.raises(ValueError, match="empty query"):
        bm25_retrieve(pool, "!!!", 1)


def test_bm25_n_clamps_to_corpus() -> None:
    pool = make_pool(_records(["a", "b"]))
    assert len(bm25_retrieve(pool, "a", 10)) == 2


def test_bm25_random_corpus_matches_oracle() -> None:
    rng = random.Random(5)
    words = ["apple", "pear", "plum", "fig", "lime", "kiwi", "date", "sloe"]
    texts = [" ".join(rng.choices(words, k=rng.randint(3, 12))) for _ in range(20)]
    pool = make_pool(_records(texts))
    query = "apple fig lime"
    got = bm25_retrieve(pool, query, 20)
    oracle_scores = bm25_oracle([tokenize(t) for t in texts], tokenize(query))
    expected_order = sorted(range(20), key=lambda i: (-oracle_scores[i], i))
    assert [c.pool_index for c in got] == expected_order
    for candidate in got:
        assert candidate.phase1_score == pytest.approx(
            oracle_scores[candidate.pool_index], abs=1e-9
        )


# --- rerank ---


def test_composite_input_uses_separator_literals() -> None:
    assert composite_input("q", "d", "c") == "[CLS] q [SEP] d [SEP] c [SEP]"


PROMO_QUERY = "A trader sells an item for more than its cost. Find the gain."
PROMO_SUMMARY = (
    "unclear whether the percentage of the original value or of the total applies; "
    "need an example using the percentage of the original value"
)
PROMO_RECORDS = [
    {
        "id": "dA",
        "problem": "Increase a number by a percentage of the original value.",
        "solution": "The percentage of the original value is added to the original value.",
    },
    {
        "id": "dB",
        "problem": "A trader sells an item and we find the gain.",
        "solution": "Subtract what was paid from what was received.",
    },
]


def test_confusion_summary_promotes_relevant_demo() -> None:
    pool = make_pool(PROMO_RECORDS)
    query = Query(id="q", text=PROMO_QUERY)
    summary = ConfusionSummary(PROMO_SUMMARY)

    # phase 1 on the query alone prefers the lexically query-similar demo
    embedder = TfidfEmbedder()
    embedded = embed_pool(pool, embedder)
    phase1 = retrieve_candidates(embedded, query, 2, embedder)
    assert phase1[0].demo_id == "dB"

    # reranking on (query + confusion) promotes the summary-relevant demo
    result = rerank(phase1, query, summary, 1, LexicalReranker(), pool)
    assert [c.demo_id for c in result.selected] == ["dA"]

    # scores agree with the independent tf-idf oracle
    docs = [render_demonstration(pool.demo_by_id(c.demo_id)) for c in phase1]
    q_side = f"{query.text}\n{summary.text}"
    oracle_vecs = tfidf_vectors_oracle([tokenize(d) for d in docs] + [tokenize(q_side)])
    oracle_scores = [sparse_cosine(oracle_vecs[-1], v) for v in oracle_vecs[:-1]]
    impl_scores = LexicalReranker().score(query.text, summary.text, docs)
    for got, expected in zip(impl_scores, oracle_scores):
        assert got == pytest.approx(expected, abs=1e-9)


def test_rerank_k_one_returns_exactly_one() -> None:
    pool = make_pool(PROMO_RECORDS)
    candidates = [
        RankedCandidate(demo_id="dA", phase1_score=0.5, pool_index=0),
        RankedCandidate(demo_id="dB", phase1_score=0.4, pool_index=1),
    ]
    result = rerank(candidates, Query(id="q", text="q text"), ConfusionSummary("c"), 1,
                    LexicalReranker(), pool)
    assert len(result.selected) == 1


def test_rerank_k_clamps_to_candidate_count() -> None:
    pool = make_pool(PROMO_RECORDS)
    candidates = [RankedCandidate(demo_id="dA", phase1_score=0.5, pool_index=0)]
    result = rerank(candidates, Query(id="q", text="q"), ConfusionSummary("c"), 5,
                    LexicalReranker(), pool)
    assert len(result.selected) == 1
    assert result.selected[0].phase2_score is not None


def test_rerank_rejects_empty_inputs() -> None:
    pool = make_pool(PROMO_RECORDS)
    with pytest.raises(ValueError, match="non-empty"):
        rerank([], Query(id="q", text="q"), ConfusionSummary("c"), 1, LexicalReranker(), pool)
    candidates = [RankedCandidate(demo_id="dA", phase1_score=0.5, pool_index=0)]
    with pytest.raises(ValueError, match="summary"):
        rerank(candidates, Query(id="q", text="q"), ConfusionSummary(""), 1,
               LexicalReranker(), pool)


def test_rerank_is_deterministic() -> None:
    pool = make_pool(PROMO_RECORDS)
    candidates = [
        RankedCandidate(demo_id="dA", phase1_score=0.5, pool_index=0),
        RankedCandidate(demo_id="dB", phase1_score=0.4, pool_index=1),
    ]
    query = Query(id="q", text=PROMO_QUERY)
    summary = ConfusionSummary(PROMO_SUMMARY)
    first = rerank(candidates, query, summary, 2, LexicalReranker(), pool)
    second = rerank(candidates, query, summary, 2, LexicalReranker(), pool)
    assert first == second


def test_rerank_falls_back_to_phase1_order_on_api_failure() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(503, content=b"overloaded")

    reranker = HttpReranker(
        "http://fake/rerank",
        client=httpx.Client(transport=httpx.MockTransport(handler)),
        retry_delay=0.0,
    )
    pool = make_pool(PROMO_RECORDS)
    candidates = [
        RankedCandidate(demo_id="dB", phase1_score=0.9, pool_index=1),
        RankedCandidate(demo_id="dA", phase1_score=0.2, pool_index=0),
    ]
    result = rerank(candidates, Query(id="q", text="q"), ConfusionSummary("c"), 1, reranker, pool)
    assert result.degraded
    assert [c.demo_id for c in result.selected] == ["dB"]  # phase-1 order kept
    assert any("fell back to phase-1" in w for w in result.warnings)


def test_http_reranker_maps_composite_onto_wire_contract() -> None:
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"scores": [0.1, 0.9]})

    reranker = HttpReranker(
        "http://fake/rerank",
        client=httpx.Client(transport=httpx.MockTransport(handler)),
        retry_delay=0.0,
    )
    scores = reranker.score("the query", "the confusion", ["doc one", "doc two"])
    assert scores == [0.1, 0.9]
    assert seen["query"] == "the query\nthe confusion"
    assert seen["documents"] == ["doc one", "doc two"]


def test_rerank_containment_property() -> None:
    rng = random.Random(23)
    words = ["sum", "ratio", "angle", "prime", "graph", "area", "root", "mean"]
    for _ in range(25):
        n_pool = rng.randint(2, 8)
        texts = [" ".join(rng.choices(words, k=rng.randint(3, 8))) for _ in range(n_pool)]
        vectors = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(n_pool)]
        pool = make_pool(_records(texts, vectors))
        query = Query(id="q", text=" ".join(rng.choices(words, k=4)))
        embedder = MappingEmbedder({query.text: [rng.gauss(0, 1) for _ in range(4)]})
        n = rng.randint(1, n_pool)
        k = rng.randint(1, n)
        candidates = retrieve_candidates(pool, query, n, embedder)
        result = rerank(candidates, query, ConfusionSummary("confused about the ratio"),
                        k, LexicalReranker(), pool)
        selected_ids = {c.demo_id for c in result.selected}
        candidate_ids = {c.demo_id for c in candidates}
        assert selected_ids <= candidate_ids
        assert len(result.selected) == min(k, len(candidates))
