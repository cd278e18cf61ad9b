"""Run modes: the dynamic-insertion loop plus static and zero-shot baselines.

The dynamic loop streams tokens while watching the decoded text for
interruption-vocabulary words. Each firing consumes budget, pauses the
stream, and asks the backend whether the reasoning so far shows real
confusion. A non-empty confusion summary triggers retrieval, reranking, and
splicing of the winning demonstrations directly after the trigger token;
generation then resumes via a fresh request on the extended context. An
empty summary lets the same stream continue untouched. Once the budget is
spent the rest of the generation streams uninterrupted.

Interrupt matching is suppressed over text that already fired and inside
spliced demonstration text (which may itself contain vocabulary words) by
trimming the searched tail to a watermark that advances past each match and
each insertion.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

from .backend import Backend, BackendError, BackendRequest
from .config import EngineConfig, load_asset_text
from .confusion import detect_confusion
from .embedding import Embedder
from .pool import DemonstrationPool
from .retrieval import HttpReranker, LexicalReranker, bm25_retrieve, rerank, retrieve_candidates
from .types import (
    Demonstration,
    GeneratedText,
    GenerationTranscript,
    InsertedDemos,
    InterventionRecord,
    Query,
    Segment,
    TokenCounts,
    estimate_inserted_tokens,
    render_demonstration,
)
from .uncertainty import detect_interrupt, event_entropy

logger = logging.getLogger(__name__)

INSERTION_HEADER = "\nRelevant example:\n"
INSERTION_FOOTER = "End of example.\n"


@dataclass(frozen=True)
class RunMode:
    """Which pipeline a run uses; ``run_query`` accepts this or a bare kind."""

    kind: str  # "zero_shot" | "static_icl" | "picl"
    static_demo_ids: tuple[str, ...] = ()
    shot_count: int = 0

    def __post_init__(self) -> None:
        if self.kind == "static_icl" and self.shot_count < 1:
            raise ValueError("static_icl requires shot_count >= 1")


@lru_cache(maxsize=8)
def _prompt_template(asset: str) -> str:
    return load_asset_text(asset)


def build_zero_shot_prompt(query: Query, config: EngineConfig) -> str:
    return _prompt_template(config.zero_shot_prompt_asset).replace("{{QUERY}}", query.text)


def build_static_prompt(
    demos: Sequence[Demonstration], query: Query, config: EngineConfig
) -> str:
    """Demonstrations joined by a blank line, in order, ahead of the query."""
    rendered = "\n".join(render_demonstration(d, config.demo_template) for d in demos)
    template = _prompt_template(config.few_shot_prompt_asset)
    return template.replace("{{DEMOS}}", rendered).replace("{{QUERY}}", query.text)


def render_insertion_block(demos: Sequence[Demonstration], demo_template: str) -> str:
    body = "".join(render_demonstration(d, demo_template) for d in demos)
    return f"{INSERTION_HEADER}{body}{INSERTION_FOOTER}"


def extract_answer(final_text: str) -> str | None:
    """Contents of the last balanced \\boxed{...}; None if absent."""
    value, _ = extract_answer_details(final_text)
    return value


def extract_answer_details(final_text: str) -> tuple[str | None, str | None]:
    """Like extract_answer, but also reports an unbalanced-brace warning."""
    marker = "\\boxed{"
    start = final_text.rfind(marker)
    if start < 0:
        return None, None
    depth = 1
    begin = start + len(marker)
    i = begin
    while i < len(final_text):
        ch = final_text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return final_text[begin:i], None
        i += 1
    return None, "unbalanced braces after last \\boxed{"


def _generation_request(prompt: str, config: EngineConfig) -> BackendRequest:
    return BackendRequest(
        prompt=prompt,
        temperature=config.temperature,
        top_p=config.top_p,
        max_tokens=config.max_tokens,
        want_logprobs=config.want_logprobs,
        top_logprobs_n=config.top_logprobs_n,
    )


def _failed_transcript(query: Query, mode: str, reason: str) -> GenerationTranscript:
    return GenerationTranscript(
        query_id=query.id,
        mode=mode,
        segments=(),
        interventions=(),
        final_text="",
        extracted_answer=None,
        token_counts=TokenCounts(generated=0, inserted=0),
        failed=True,
        failure_reason=reason,
    )


def _plain_generation(
    backend: Backend, query: Query, config: EngineConfig, prompt: str, mode: str,
    static_demo_ids: tuple[str, ...] = (),
) -> GenerationTranscript:
    try:
        stream = backend.stream_generate(_generation_request(prompt, config))
        text = ""
        count = 0
        for event in stream:
            text += event.text
            count += 1
    except BackendError as exc:
        return _failed_transcript(query, mode, str(exc))
    answer, warning = extract_answer_details(text)
    return GenerationTranscript(
        query_id=query.id,
        mode=mode,
        segments=(GeneratedText(text),) if text else (),
        interventions=(),
        final_text=text,
        extracted_answer=answer,
        token_counts=TokenCounts(generated=count, inserted=0),
        static_demo_ids=static_demo_ids,
        warnings=(warning,) if warning else (),
    )


def run_zero_shot(backend: Backend, query: Query, config: EngineConfig) -> GenerationTranscript:
    """Stream the instruction-plus-query prompt straight to end of sequence."""
    prompt = build_zero_shot_prompt(query, config)
    return _plain_generation(backend, query, config, prompt, "zero_shot")


def select_static_demos(
    pool: DemonstrationPool,
    query: Query,
    config: EngineConfig,
    embedder: Embedder | None = None,
) -> list[Demonstration]:
    """Pick the demonstrations a static run prepends, per the configured
    selector. The random selector derives its seed from (seed, query id) so
    selections are stable regardless of worker scheduling."""
    shots = config.static_shot_count
    if len(pool) < shots:
        raise ValueError(f"pool has {len(pool)} demos but {shots} shots requested")
    if config.static_selector == "random":
        rng = random.Random(f"{config.seed}:{query.id}")
        indices = rng.sample(range(len(pool)), shots)
        return [pool.demos[i] for i in indices]
    if config.static_selector == "similarity":
        if embedder is None:
            raise ValueError("similarity selector requires an embedder")
        candidates = retrieve_candidates(pool, query, shots, embedder)
        return [pool.demo_by_id(c.demo_id) for c in candidates]
    if config.static_selector == "bm25":
        candidates = bm25_retrieve(pool, query.text, shots)
        return [pool.demo_by_id(c.demo_id) for c in candidates]
    raise ValueError(f"unknown selector {config.static_selector!r}")


def run_static(
    backend: Backend,
    pool: DemonstrationPool,
    query: Query,
    config: EngineConfig,
    embedder: Embedder | None = None,
) -> GenerationTranscript:
    """Select demonstrations up front, prepend them, stream uninterrupted."""
    demos = select_static_demos(pool, query, config, embedder)
    prompt = build_static_prompt(demos, query, config)
    return _plain_generation(
        backend, query, config, prompt, "static_icl",
        static_demo_ids=tuple(d.id for d in demos),
    )


def _entropy_gate_passes(config: EngineConfig, entropy: float | None) -> bool:
    # Vocabulary membership alone decides by default; the optional threshold
    # additionally requires high entropy when a distribution is available.
    if config.entropy_threshold is None or entropy is None:
        return True
    return entropy >= config.entropy_threshold


def run_picl(
    backend: Backend,
    pool: DemonstrationPool,
    query: Query,
    config: EngineConfig,
    embedder: Embedder | None = None,
    reranker: LexicalReranker | HttpReranker | None = None,
) -> GenerationTranscript:
    """Dynamic-insertion generation under budget r with k demos per firing."""
    if len(pool) > 0 and embedder is None:
        raise ValueError("a non-empty pool requires an embedder for retrieval")
    reranker = reranker or LexicalReranker()
    base_prompt = build_zero_shot_prompt(query, config)
    vocab = config.interruption_tokens

    context = ""  # everything after the base prompt: generated + inserted
    current = ""  # generated text accumulating since the last segment break
    segments: list[Segment] = []
    interventions: list[InterventionRecord] = []
    transcript_warnings: list[str] = []
    watermark = 0
    token_index = 0
    intervention_cnt = 0
    inserted_tokens = 0

    while True:
        try:
            stream = backend.stream_generate(_generation_request(base_prompt + context, config))
        except BackendError as exc:
            return _failed_transcript(query, "picl", str(exc))
        resumed_for_insertion = False
        try:
            for event in stream:
                context += event.text
                current += event.text
                position = token_index
                token_index += 1
                if intervention_cnt >= config.max_interventions:
                    continue
                match = detect_interrupt(event, vocab, context[watermark:])
                if match is None:
                    continue
                entropy = event_entropy(event)
                if not _entropy_gate_passes(config, entropy):
                    continue

                detection = detect_confusion(
                    backend,
                    query,
                    context,
                    temperature=config.detection_temperature,
                )
                record_warnings = list(detection.warnings)
                inserted_ids: tuple[str, ...] = ()
                if not detection.summary.is_empty:
                    if len(pool) == 0:
                        record_warnings.append(
                            "empty pool: confusion detected but no demonstrations available"
                        )
                    else:
                        candidates = retrieve_candidates(
                            pool, query, config.retrieval_candidates, embedder
                        )
                        result = rerank(
                            candidates,
                            query,
                            detection.summary,
                            config.insertion_count,
                            reranker,
                            pool,
                        )
                        record_warnings.extend(result.warnings)
                        demos = [pool.demo_by_id(c.demo_id) for c in result.selected]
                        inserted_ids = tuple(d.id for d in demos)
                        if not config.keep_trigger_token and event.text:
                            context = context[: -len(event.text)]
                            current = current[: -len(event.text)]
                        block = render_insertion_block(demos, config.demo_template)
                        if current:
                            segments.append(GeneratedText(current))
                            current = ""
                        segments.append(InsertedDemos(inserted_ids, block))
                        context += block
                        inserted_tokens += estimate_inserted_tokens(
                            block, config.tokens_per_word
                        )

                if not config.count_insertions_only or inserted_ids:
                    intervention_cnt += 1
                interventions.append(
                    InterventionRecord(
                        position=position,
                        trigger_token=match.surface,
                        entropy=entropy,
                        summary=detection.summary,
                        inserted_demo_ids=inserted_ids,
                        raw_detection_response=detection.raw_response,
                        warnings=tuple(record_warnings),
                    )
                )
                if inserted_ids:
                    # Resume on the extended context; matching restarts after
                    # the spliced block.
                    watermark = len(context)
                    resumed_for_insertion = True
                    break
                watermark += match.end
        except BackendError as exc:
            return _failed_transcript(query, "picl", str(exc))
        if not resumed_for_insertion:
            break

    if current:
        segments.append(GeneratedText(current))
    final_text = "".join(seg.rendered for seg in segments)
    answer, warning = extract_answer_details(final_text)
    if warning:
        transcript_warnings.append(warning)
    return GenerationTranscript(
        query_id=query.id,
        mode="picl",
        segments=tuple(segments),
        interventions=tuple(interventions),
        final_text=final_text,
        extracted_answer=answer,
        token_counts=TokenCounts(generated=token_index, inserted=inserted_tokens),
        warnings=tuple(transcript_warnings),
    )


def run_query(
    backend: Backend,
    query: Query,
    config: EngineConfig,
    pool: DemonstrationPool | None = None,
    embedder: Embedder | None = None,
    reranker: LexicalReranker | HttpReranker | None = None,
    mode: str | RunMode | None = None,
) -> GenerationTranscript:
    """Dispatch one query to the requested mode (defaults to config.mode)."""
    if isinstance(mode, RunMode):
        if mode.kind == "static_icl":
            config = replace(config, static_shot_count=mode.shot_count)
        mode = mode.kind
    mode = mode or config.mode
    if mode == "zero_shot":
        return run_zero_shot(backend, query, config)
    if mode == "static_icl":
        if pool is None:
            raise ValueError("static_icl mode requires a demonstration pool")
        return run_static(backend, pool, query, config, embedder)
    if mode == "picl":
        if pool is None:
            raise ValueError("picl mode requires a demonstration pool (it may be empty)")
        return run_picl(backend, pool, query, config, embedder, reranker)
    raise ValueError(f"unknown mode {mode!r}")
