"""Evaluation pipeline: dataset loading, parallel runs, reports, sweeps.

Scoring is exact string match after light canonicalization (trim, collapse
whitespace, strip outer dollar signs); equivalent-but-differently-written
answers are a known limitation and are logged for manual review rather than
symbolically checked. Per-item records are ordered canonically by
(mode, query id, sample) so reports are identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .backend import Backend, BackendRequest
from .config import EngineConfig, validate_config
from .controller import build_zero_shot_prompt, run_query
from .embedding import Embedder
from .pool import DemonstrationPool
from .retrieval import HttpReranker, LexicalReranker
from .types import GenerationTranscript, Query
from .uncertainty import entropy_profile, interrupt_flags

logger = logging.getLogger(__name__)

ENTROPY_CSV_HEADER = ("query_id", "position", "entropy_nats", "token_text", "is_interrupt")


@dataclass(frozen=True)
class Dataset:
    """Evaluation items; every query carries a gold answer."""

    name: str
    items: tuple[Query, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError(f"dataset {self.name!r} is empty")
        ids = [q.id for q in self.items]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"dataset {self.name!r} has duplicate ids: {dupes}")
        missing = [q.id for q in self.items if q.gold_answer is None]
        if missing:
            raise ValueError(f"dataset {self.name!r} items missing gold answers: {missing}")


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    """Load a JSONL dataset with fields id, question, answer."""
    path = Path(path)
    items: list[Query] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except ValueError as exc:
            raise ValueError(f"{path.name} line {lineno}: invalid JSON: {exc}") from exc
        for field in ("id", "question", "answer"):
            if field not in record:
                raise ValueError(f"{path.name} line {lineno}: missing field {field}")
        items.append(
            Query(id=str(record["id"]), text=record["question"], gold_answer=str(record["answer"]))
        )
    return Dataset(name=name or path.stem, items=tuple(items))


def canonicalize_answer(text: str, *, answer_type: str = "text") -> str:
    """Normalize an answer for exact-match comparison; idempotent."""
    s = text.strip()
    while len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    s = " ".join(s.split())
    if answer_type == "choice":
        match = re.search(r"[A-Za-z]", s)
        if match:
            return match.group(0).upper()
    return s


@dataclass(frozen=True)
class ItemResult:
    query_id: str
    mode: str
    sample: int
    extracted: str | None
    gold: str
    correct: bool
    generated_tokens: int
    inserted_tokens: int
    interventions: int
    failed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "mode": self.mode,
            "sample": self.sample,
            "extracted": self.extracted,
            "gold": self.gold,
            "correct": self.correct,
            "generated_tokens": self.generated_tokens,
            "inserted_tokens": self.inserted_tokens,
            "interventions": self.interventions,
            "failed": self.failed,
        }


@dataclass(frozen=True)
class ModeSummary:
    mode: str
    accuracy: float
    correct: int
    total: int
    failures: int
    avg_tokens_per_question: float
    avg_generated_tokens: float
    avg_inserted_tokens: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "correct": self.correct,
            "total": self.total,
            "failures": self.failures,
            "avg_tokens_per_question": self.avg_tokens_per_question,
            "avg_generated_tokens": self.avg_generated_tokens,
            "avg_inserted_tokens": self.avg_inserted_tokens,
        }


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    modes: tuple[str, ...]
    summaries: tuple[ModeSummary, ...]
    items: tuple[ItemResult, ...]
    inserted_token_method: str = "word_estimate"

    def summary_for(self, mode: str) -> ModeSummary:
        for summary in self.summaries:
            if summary.mode == mode:
                return summary
        raise KeyError(mode)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "modes": list(self.modes),
            "inserted_token_method": self.inserted_token_method,
            "summaries": [s.to_dict() for s in self.summaries],
            "items": [item.to_dict() for item in self.items],
        }


def _summarize(mode: str, items: Sequence[ItemResult]) -> ModeSummary:
    total = len(items)
    correct = sum(1 for item in items if item.correct)
    failures = sum(1 for item in items if item.failed)
    tokens = [item.generated_tokens + item.inserted_tokens for item in items]
    generated = [item.generated_tokens for item in items]
    inserted = [item.inserted_tokens for item in items]
    return ModeSummary(
        mode=mode,
        accuracy=correct / total,
        correct=correct,
        total=total,
        failures=failures,
        avg_tokens_per_question=sum(tokens) / total,
        avg_generated_tokens=sum(generated) / total,
        avg_inserted_tokens=sum(inserted) / total,
    )


def evaluate(
    dataset: Dataset,
    modes: Sequence[str],
    config: EngineConfig,
    backend: Backend,
    pool: DemonstrationPool | None = None,
    *,
    workers: int = 1,
    embedder: Embedder | None = None,
    reranker: LexicalReranker | HttpReranker | None = None,
    answer_type: str = "text",
    transcript_sink: Callable[[GenerationTranscript], None] | None = None,
) -> EvalReport:
    """Run every (item, mode, sample) combination and aggregate accuracy.

    Failed transcripts count as incorrect and are tallied in ``failures``.
    """
    if not modes:
        raise ValueError("at least one mode is required")
    validate_config(config)
    jobs = [
        (query, mode, sample)
        for mode in modes
        for query in dataset.items
        for sample in range(config.samples)
    ]

    def run_job(job: tuple[Query, str, int]) -> ItemResult:
        query, mode, sample = job
        transcript = run_query(
            backend, query, config, pool=pool, embedder=embedder, reranker=reranker, mode=mode
        )
        if transcript_sink is not None:
            transcript_sink(transcript)
        gold = query.gold_answer or ""
        extracted = transcript.extracted_answer
        correct = (
            not transcript.failed
            and extracted is not None
            and canonicalize_answer(extracted, answer_type=answer_type)
            == canonicalize_answer(gold, answer_type=answer_type)
        )
        if not correct and extracted is not None and not transcript.failed:
            logger.debug(
                "mismatch %s/%s: extracted %r vs gold %r", query.id, mode, extracted, gold
            )
        return ItemResult(
            query_id=query.id,
            mode=mode,
            sample=sample,
            extracted=extracted,
            gold=gold,
            correct=correct,
            generated_tokens=transcript.token_counts.generated,
            inserted_tokens=transcript.token_counts.inserted,
            interventions=len(transcript.interventions),
            failed=transcript.failed,
        )

    if workers <= 1:
        results = [run_job(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run_job, jobs))

    results.sort(key=lambda item: (item.mode, item.query_id, item.sample))
    summaries = tuple(
        _summarize(mode, [item for item in results if item.mode == mode]) for mode in modes
    )
    return EvalReport(
        dataset=dataset.name,
        modes=tuple(modes),
        summaries=summaries,
        items=tuple(results),
    )


@dataclass(frozen=True)
class SweepRow:
    value: int
    accuracy: float
    avg_tokens_per_question: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "accuracy": self.accuracy,
            "avg_tokens_per_question": self.avg_tokens_per_question,
        }


@dataclass(frozen=True)
class SweepTable:
    parameter: str
    rows: tuple[SweepRow, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"parameter": self.parameter, "rows": [row.to_dict() for row in self.rows]}


def sweep(
    dataset: Dataset,
    parameter: str,
    values: Sequence[int],
    config: EngineConfig,
    backend: Backend,
    pool: DemonstrationPool | None = None,
    *,
    workers: int = 1,
    embedder: Embedder | None = None,
    reranker: LexicalReranker | HttpReranker | None = None,
    answer_type: str = "text",
) -> SweepTable:
    """Evaluate the dynamic mode once per parameter value, all else fixed."""
    if parameter not in ("r", "k"):
        raise ValueError("parameter must be 'r' or 'k'")
    if not values:
        raise ValueError("values must be non-empty")
    if len(set(values)) != len(values):
        raise ValueError("duplicate values rejected")
    rows = []
    for value in values:
        if parameter == "r":
            run_config = replace(config, max_interventions=value)
        else:
            run_config = replace(config, insertion_count=value)
        report = evaluate(
            dataset,
            ["picl"],
            run_config,
            backend,
            pool,
            workers=workers,
            embedder=embedder,
            reranker=reranker,
            answer_type=answer_type,
        )
        summary = report.summary_for("picl")
        rows.append(
            SweepRow(
                value=value,
                accuracy=summary.accuracy,
                avg_tokens_per_question=summary.avg_tokens_per_question,
            )
        )
    return SweepTable(parameter=parameter, rows=tuple(rows))


@dataclass(frozen=True)
class EntropyExport:
    rows: int
    skipped: int
    path: Path


def export_entropy(
    dataset: Dataset,
    config: EngineConfig,
    backend: Backend,
    out_path: str | Path,
) -> EntropyExport:
    """Stream each item once, uninterrupted, and dump per-token entropy rows.

    Columns: query_id, position, entropy_nats, token_text, is_interrupt.
    Events without distributions produce no row; if nothing at all carried a
    distribution the file holds a warning comment plus the header.
    """
    out_path = Path(out_path)
    all_rows: list[tuple[str, int, float, str, bool]] = []
    skipped = 0
    for query in dataset.items:
        prompt = build_zero_shot_prompt(query, config)
        request = BackendRequest(
            prompt=prompt,
            temperature=config.temperature,
            top_p=config.top_p,
            max_tokens=config.max_tokens,
            want_logprobs=True,
            top_logprobs_n=config.top_logprobs_n,
        )
        events = list(backend.stream_generate(request))
        profile = entropy_profile(events)
        skipped += profile.skipped
        flags = interrupt_flags(events, config.interruption_tokens)
        for reading in profile.readings:
            all_rows.append(
                (
                    query.id,
                    reading.position,
                    reading.entropy_nats,
                    events[reading.position].text,
                    flags[reading.position],
                )
            )

    with out_path.open("w", encoding="utf-8", newline="") as handle:
        if not all_rows and skipped > 0:
            handle.write("# warning: backend provided no token distributions (degraded mode)\n")
        writer = csv.writer(handle)
        writer.writerow(ENTROPY_CSV_HEADER)
        for row in all_rows:
            writer.writerow([row[0], row[1], repr(row[2]), row[3], str(row[4]).lower()])
    return EntropyExport(rows=len(all_rows), skipped=skipped, path=out_path)


def write_report_json(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
    return path


ITEMS_CSV_HEADER = (
    "query_id",
    "mode",
    "sample",
    "extracted",
    "gold",
    "correct",
    "generated_tokens",
    "inserted_tokens",
    "interventions",
    "failed",
)


def write_items_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(ITEMS_CSV_HEADER)
        for item in report.items:
            writer.writerow(
                [
                    item.query_id,
                    item.mode,
                    item.sample,
                    "" if item.extracted is None else item.extracted,
                    item.gold,
                    str(item.correct).lower(),
                    item.generated_tokens,
                    item.inserted_tokens,
                    item.interventions,
                    str(item.failed).lower(),
                ]
            )
    return path


def write_sweep_csv(table: SweepTable, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("value", "accuracy", "avg_tokens_per_question"))
        for row in table.rows:
            writer.writerow([row.value, repr(row.accuracy), repr(row.avg_tokens_per_question)])
    return path
