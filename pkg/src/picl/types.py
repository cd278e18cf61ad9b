"""Domain types shared across the engine.

Everything here is immutable after construction and safe to share across
concurrent evaluation workers. Each type has a stable JSON form via
``to_dict`` / ``from_dict``; the transcript schema is documented in the
README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

# Fixed template used whenever a demonstration is rendered into prompt text.
DEFAULT_DEMO_TEMPLATE = "Problem: {problem}\nSolution: {solution}\n"

# Crude token estimate for text that was spliced into the context rather than
# generated by the backend: whitespace-delimited words times this ratio.
TOKENS_PER_WORD = 1.3


def render_demonstration(demo: "Demonstration", template: str = DEFAULT_DEMO_TEMPLATE) -> str:
    """Render a demonstration into prompt text using the labeled template."""
    return template.format(problem=demo.problem, solution=demo.solution)


def estimate_inserted_tokens(text: str, tokens_per_word: float = TOKENS_PER_WORD) -> int:
    """Estimate a token count for spliced-in text the backend never tokenized."""
    words = len(text.split())
    return int(math.ceil(words * tokens_per_word))


@dataclass(frozen=True)
class Query:
    """A single problem to solve; ``gold_answer`` is present for evaluation."""

    id: str
    text: str
    gold_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"query {self.id!r}: text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "text": self.text, "gold_answer": self.gold_answer}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Query":
        return cls(id=data["id"], text=data["text"], gold_answer=data.get("gold_answer"))


@dataclass(frozen=True)
class Demonstration:
    """A (problem, solution) pair from the pool, optionally pre-embedded."""

    id: str
    problem: str
    solution: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.problem:
            raise ValueError(f"demonstration {self.id!r}: problem must be non-empty")
        if not self.solution:
            raise ValueError(f"demonstration {self.id!r}: solution must be non-empty")
        if self.embedding is not None:
            object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))
            if not any(x != 0.0 for x in self.embedding):
                raise ValueError(f"demonstration {self.id!r}: embedding must have norm > 0")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "problem": self.problem, "solution": self.solution}
        if self.embedding is not None:
            out["embedding"] = list(self.embedding)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Demonstration":
        emb = data.get("embedding")
        return cls(
            id=data["id"],
            problem=data["problem"],
            solution=data["solution"],
            embedding=tuple(emb) if emb is not None else None,
        )


@dataclass(frozen=True)
class TokenEvent:
    """One streamed token with the top alternative log-probabilities.

    ``top_alternatives`` is sorted descending by log-probability and includes
    the sampled token itself; it is empty when the backend provided no
    distribution (degraded mode). All log-probabilities are natural log.
    """

    text: str
    logprob: float
    top_alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "top_alternatives",
            tuple((str(t), float(lp)) for t, lp in self.top_alternatives),
        )
        if self.logprob > 0.0:
            raise ValueError(f"token event {self.text!r}: logprob must be <= 0")
        alts = self.top_alternatives
        if alts:
            if any(lp > 0.0 for _, lp in alts):
                raise ValueError(f"token event {self.text!r}: alternative logprob must be <= 0")
            if any(alts[i][1] < alts[i + 1][1] for i in range(len(alts) - 1)):
                raise ValueError(
                    f"token event {self.text!r}: alternatives must be sorted by descending logprob"
                )
            if self.text not in {t for t, _ in alts}:
                raise ValueError(
                    f"token event {self.text!r}: sampled token missing from alternatives"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "logprob": self.logprob,
            "top_alternatives": [[t, lp] for t, lp in self.top_alternatives],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TokenEvent":
        return cls(
            text=data["text"],
            logprob=data["logprob"],
            top_alternatives=tuple((t, lp) for t, lp in data.get("top_alternatives", [])),
        )


@dataclass(frozen=True)
class ConfusionSummary:
    """The model's own description of its confusion; empty means none found."""

    text: str = ""

    @property
    def is_empty(self) -> bool:
        return not self.text.strip()

    @classmethod
    def empty(cls) -> "ConfusionSummary":
        return cls("")

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ConfusionSummary":
        return cls(text=data["text"])


@dataclass(frozen=True)
class InterventionRecord:
    """One interrupt firing: where it happened and what came of it."""

    position: int
    trigger_token: str
    entropy: float | None
    summary: ConfusionSummary
    inserted_demo_ids: tuple[str, ...] = ()
    raw_detection_response: str | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "position": self.position,
            "trigger_token": self.trigger_token,
            "entropy": self.entropy,
            "summary": self.summary.text,
            "inserted_demo_ids": list(self.inserted_demo_ids),
            "raw_detection_response": self.raw_detection_response,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InterventionRecord":
        return cls(
            position=data["position"],
            trigger_token=data["trigger_token"],
            entropy=data["entropy"],
            summary=ConfusionSummary(data["summary"]),
            inserted_demo_ids=tuple(data.get("inserted_demo_ids", [])),
            raw_detection_response=data.get("raw_detection_response"),
            warnings=tuple(data.get("warnings", [])),
        )


@dataclass(frozen=True)
class GeneratedText:
    """A stretch of text produced by the backend."""

    text: str

    @property
    def rendered(self) -> str:
        return self.text

    def to_dict(self) -> dict[str, Any]:
        return {"type": "generated", "text": self.text}


@dataclass(frozen=True)
class InsertedDemos:
    """Demonstrations spliced into the context, with their rendered block."""

    demo_ids: tuple[str, ...]
    rendered_block: str

    @property
    def rendered(self) -> str:
        return self.rendered_block

    def to_dict(self) -> dict[str, Any]:
        return {"type": "inserted_demos", "demo_ids": list(self.demo_ids), "rendered": self.rendered_block}


Segment = GeneratedText | InsertedDemos


def segment_from_dict(data: dict[str, Any]) -> Segment:
    kind = data.get("type")
    if kind == "generated":
        return GeneratedText(text=data["text"])
    if kind == "inserted_demos":
        return InsertedDemos(demo_ids=tuple(data["demo_ids"]), rendered_block=data["rendered"])
    raise ValueError(f"unknown segment type {kind!r}")


@dataclass(frozen=True)
class TokenCounts:
    """Token accounting for one transcript.

    ``generated`` counts backend-reported tokens (one per streamed event);
    ``inserted`` is a word-ratio estimate for spliced text, with the method
    recorded so reports stay honest about which side is estimated.
    """

    generated: int
    inserted: int
    inserted_method: str = "word_estimate"

    def __post_init__(self) -> None:
        if self.generated < 0 or self.inserted < 0:
            raise ValueError("token counts must be nonnegative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "generated": self.generated,
            "inserted": self.inserted,
            "inserted_method": self.inserted_method,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TokenCounts":
        return cls(
            generated=data["generated"],
            inserted=data["inserted"],
            inserted_method=data.get("inserted_method", "word_estimate"),
        )


@dataclass(frozen=True)
class GenerationTranscript:
    """Ordered record of one query run: segments, interventions, final text."""

    query_id: str
    mode: str
    segments: tuple[Segment, ...]
    interventions: tuple[InterventionRecord, ...]
    final_text: str
    extracted_answer: str | None
    token_counts: TokenCounts
    static_demo_ids: tuple[str, ...] = ()
    failed: bool = False
    failure_reason: str | None = None
    warnings: tuple[str, ...] = ()

    def reconstructed_text(self) -> str:
        """Concatenation of segment text; must equal ``final_text`` exactly."""
        return "".join(seg.rendered for seg in self.segments)

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "mode": self.mode,
            "segments": [seg.to_dict() for seg in self.segments],
            "interventions": [iv.to_dict() for iv in self.interventions],
            "final_text": self.final_text,
            "extracted_answer": self.extracted_answer,
            "token_counts": self.token_counts.to_dict(),
            "static_demo_ids": list(self.static_demo_ids),
            "failed": self.failed,
            "failure_reason": self.failure_reason,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GenerationTranscript":
        return cls(
            query_id=data["query_id"],
            mode=data["mode"],
            segments=tuple(segment_from_dict(seg) for seg in data["segments"]),
            interventions=tuple(InterventionRecord.from_dict(iv) for iv in data["interventions"]),
            final_text=data["final_text"],
            extracted_answer=data["extracted_answer"],
            token_counts=TokenCounts.from_dict(data["token_counts"]),
            static_demo_ids=tuple(data.get("static_demo_ids", [])),
            failed=data.get("failed", False),
            failure_reason=data.get("failure_reason"),
            warnings=tuple(data.get("warnings", [])),
        )
