from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from picl.backend import CannedCompletion, MockBackend, MockScript, MockStep
from picl.config import EngineConfig
from picl.pool import DemonstrationPool, build_lexical_index, pool_content_hash
from picl.types import Demonstration, Query

DATA_DIR = Path(__file__).parent / "data"


class MappingEmbedder:
    """Embedder returning fixed vectors for known texts (golden fixtures)."""

    name = "mapping"

    def __init__(self, mapping: dict[str, list[float]]):
        self.mapping = mapping

    def fit(self, corpus: Sequence[str]) -> None:
        pass

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [list(self.mapping[text]) for text in texts]


class CountingEmbedder:
    """Delegating embedder that counts embed() calls."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self.embed_calls = 0

    def fit(self, corpus: Sequence[str]) -> None:
        self.inner.fit(corpus)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        self.embed_calls += 1
        return self.inner.embed(texts)


def make_pool(
    records: Sequence[dict], text_mode: str = "problem_only"
) -> DemonstrationPool:
    """Build an in-memory pool; precomputed embeddings become the index."""
    demos = tuple(Demonstration.from_dict(r) for r in records)
    index = None
    embedder_name = None
    if demos and all(d.embedding is not None for d in demos):
        index = np.array([d.embedding for d in demos], dtype=np.float64)
        index.setflags(write=False)
        embedder_name = "precomputed"
    return DemonstrationPool(
        demos=demos,
        lexical_index=build_lexical_index(demos, text_mode),
        content_hash=pool_content_hash(demos),
        embedding_index=index,
        embedder_name=embedder_name,
        text_mode=text_mode,
    )


def steps_from_dicts(raw_steps: Sequence[dict]) -> tuple[MockStep, ...]:
    return tuple(
        MockStep(
            token=s["token"],
            logprob=float(s.get("logprob", 0.0)),
            alternatives=tuple((t, lp) for t, lp in s.get("alternatives", []) or []),
        )
        for s in raw_steps
    )


def onehot_steps(tokens: Sequence[str]) -> tuple[MockStep, ...]:
    """Steps whose distribution is a point mass on the sampled token."""
    return tuple(
        MockStep(token=t, logprob=0.0, alternatives=((t, 0.0),)) for t in tokens
    )


def backend_from_fixture(fixture: dict) -> MockBackend:
    script = MockScript(
        key=fixture["script"]["key"],
        steps=steps_from_dicts(fixture["script"]["steps"]),
        fail=bool(fixture["script"].get("fail", False)),
    )
    completions = tuple(
        CannedCompletion(
            key=c["key"], response=c["response"], fail_times=int(c.get("fail_times", 0))
        )
        for c in fixture.get("completions", [])
    )
    return MockBackend(scripts=(script,), completions=completions)


def load_golden(name: str) -> dict:
    return json.loads((DATA_DIR / "golden" / f"{name}.json").read_text(encoding="utf-8"))


GOLDEN_NAMES = (
    "confusion_yes",
    "confusion_no",
    "budget_r1",
    "budget_r2",
    "multi_trigger_suppression",
    "empty_pool",
    "r_zero",
)


def run_golden_fixture(fixture: dict):
    """Build the fixture world and run the dynamic controller on it."""
    from picl.controller import run_picl

    config = EngineConfig.from_dict(fixture["config"])
    query = Query.from_dict(fixture["query"])
    pool = make_pool(fixture["pool"])
    embedder = MappingEmbedder({query.text: fixture["query_embedding"]})
    backend = backend_from_fixture(fixture)
    transcript = run_picl(backend, pool, query, config, embedder=embedder)
    return transcript, backend


@pytest.fixture
def toy_pool_records() -> list[dict]:
    return [
        {
            "id": "d1",
            "problem": "Compute the sum of 2 and 2.",
            "solution": "2 + 2 = 4. The answer is \\boxed{4}.",
        },
        {
            "id": "d2",
            "problem": (
                "A coat costs 40 dollars and the price rises by 150 percent of the "
                "original value. Find the new price."
            ),
            "solution": (
                "150 percent of 40 is 60, so the price is 40 + 60 = 100. "
                "The answer is \\boxed{100}."
            ),
        },
        {
            "id": "d3",
            "problem": "You should wait patiently before you maybe check the result of 3 times 3.",
            "solution": "Waiting does not change it: 3 times 3 = 9. The answer is \\boxed{9}.",
        },
    ]
