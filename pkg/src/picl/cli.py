"""Command-line interface.

Subcommands: ``run`` (single query), ``eval``, ``sweep``, ``entropy``, and
``pool embed``. Flags mirror the engine config; a ``--config`` file provides
the base values and explicit flags override it field by field. Report
commands write delimited output plus rendered figures unless ``--no-figures``
is given.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .config import ConfigError, EngineConfig, apply_overrides, load_config, validate_config
from .controller import run_query
from .embedding import HttpEmbedder, TfidfEmbedder
from .figures import (
    render_entropy_figure,
    render_eval_figures,
    render_sweep_figure,
    try_render,
)
from .harness import (
    evaluate,
    export_entropy,
    load_dataset,
    sweep as run_sweep,
    write_items_csv,
    write_report_json,
    write_sweep_csv,
)
from .backend import Backend, OpenAICompletionsBackend, load_mock_file
from .pool import DemonstrationPool, PoolError, embed_pool, load_pool
from .retrieval import HttpReranker, LexicalReranker
from .types import Query

logger = logging.getLogger(__name__)

API_KEY_ENV = "PICL_API_KEY"


def _friendly_errors(fn):
    """Surface expected setup mistakes as clean CLI errors, not tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, PoolError, ValueError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _engine_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="JSON or YAML config file."),
        click.option("--mode", type=click.Choice(["zero_shot", "static_icl", "picl"]), default=None),
        click.option("--r", "max_interventions", type=int, default=None,
                     help="Max interrupt-triggered detection cycles per query."),
        click.option("--k", "insertion_count", type=int, default=None,
                     help="Demonstrations inserted per intervention."),
        click.option("--n", "retrieval_candidates", type=int, default=None,
                     help="Phase-1 candidate count."),
        click.option("--shots", "static_shot_count", type=int, default=None),
        click.option("--selector", "static_selector",
                     type=click.Choice(["random", "similarity", "bm25"]), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--samples", type=int, default=None),
        click.option("--temperature", type=float, default=None),
        click.option("--top-p", "top_p", type=float, default=None),
        click.option("--max-tokens", "max_tokens", type=int, default=None),
        click.option("--interrupt-tokens", "interrupt_tokens", type=str, default=None,
                     help="Comma-separated interruption vocabulary."),
        click.option("--entropy-threshold", "entropy_threshold", type=float, default=None),
        click.option("--backend", "backend_kind", type=click.Choice(["mock", "openai"]), default=None),
        click.option("--mock-file", type=click.Path(), default=None,
                     help="Scripts + canned completions for the mock backend."),
        click.option("--base-url", type=str, default=None),
        click.option("--model", type=str, default=None),
        click.option("--api-key", type=str, default=None,
                     help=f"Defaults to ${API_KEY_ENV} when unset."),
        click.option("--pool", "pool_path", type=click.Path(), default=None),
        click.option("--embedder", "embedder_kind", type=click.Choice(["lexical", "api"]), default=None),
        click.option("--reranker", "reranker_kind", type=click.Choice(["lexical", "api"]), default=None),
        click.option("--embedding-url", type=str, default=None),
        click.option("--reranker-url", type=str, default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _build_config(config_path: str | None, **flags) -> EngineConfig:
    config = load_config(config_path) if config_path else EngineConfig()
    tokens = flags.pop("interrupt_tokens", None)
    if tokens is not None:
        flags["interruption_tokens"] = tuple(t.strip() for t in tokens.split(",") if t.strip())
    renames = {"backend_kind": "backend", "embedder_kind": "embedder", "reranker_kind": "reranker",
               "mock_file": "mock_file", "base_url": "base_url", "model": "model",
               "api_key": "api_key", "embedding_url": "embedding_url",
               "reranker_url": "reranker_url"}
    overrides = {renames.get(key, key): value for key, value in flags.items()}
    overrides.pop("pool_path", None)
    return validate_config(apply_overrides(config, **overrides))


def _make_backend(config: EngineConfig) -> Backend:
    if config.backend == "mock":
        if not config.mock_file:
            raise click.UsageError("mock backend requires --mock-file")
        return load_mock_file(config.mock_file)
    api_key = config.api_key or os.environ.get(API_KEY_ENV, "")
    if not config.base_url:
        raise click.UsageError("openai backend requires --base-url")
    return OpenAICompletionsBackend(config.base_url, config.model, api_key)


def _make_embedder(config: EngineConfig):
    if config.embedder == "lexical":
        return TfidfEmbedder()
    return HttpEmbedder(config.embedding_url)


def _make_reranker(config: EngineConfig):
    if config.reranker == "lexical":
        return LexicalReranker()
    return HttpReranker(config.reranker_url)


def _sidecar_path(pool_path: str) -> Path:
    return Path(f"{pool_path}.embeddings.json")


def _prepare_pool(config: EngineConfig, pool_path: str | None, embedder) -> DemonstrationPool | None:
    """Load the pool and make sure it has an embedding index when one is
    needed. The lexical embedder re-embeds in memory; the API embedder
    refuses to mass-call at eval time and points at `picl pool embed`."""
    if pool_path is None:
        return None
    pool = load_pool(pool_path, text_mode=config.embed_text_mode, demo_template=config.demo_template)
    if len(pool) == 0:
        return pool
    sidecar = _sidecar_path(pool_path)
    if config.embedder == "api" and not sidecar.exists():
        raise click.UsageError(
            f"pool {pool_path} has no embedding sidecar for the api embedder; "
            "run `picl pool embed` first"
        )
    return embed_pool(
        pool,
        embedder,
        cache_path=sidecar if sidecar.exists() else None,
        demo_template=config.demo_template,
        write_cache=False,
    )


@click.group()
@click.version_option(version=__version__, prog_name="picl")
@click.option("--verbose", is_flag=True, default=False, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Dynamic demonstration insertion for streaming LLM reasoning."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@_engine_options
@click.option("--query", "query_text", type=str, required=True)
@click.option("--query-id", type=str, default="q0")
@click.option("--gold", type=str, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the transcript JSON here.")
@_friendly_errors
def run_command(config_path, query_text, query_id, gold, out_path, pool_path, **flags) -> None:
    """Run one query and print the extracted answer."""
    config = _build_config(config_path, pool_path=pool_path, **flags)
    backend = _make_backend(config)
    embedder = _make_embedder(config)
    reranker = _make_reranker(config)
    pool = _prepare_pool(config, pool_path, embedder)
    query = Query(id=query_id, text=query_text, gold_answer=gold)
    transcript = run_query(
        backend, query, config, pool=pool, embedder=embedder, reranker=reranker
    )
    if out_path:
        Path(out_path).write_text(
            json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8"
        )
    if transcript.failed:
        click.echo(f"run failed: {transcript.failure_reason}", err=True)
        sys.exit(1)
    click.echo(f"mode: {transcript.mode}")
    click.echo(f"interventions: {len(transcript.interventions)}")
    click.echo(f"answer: {transcript.extracted_answer}")


@main.command("eval")
@_engine_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--modes", type=str, default="zero_shot,picl",
              help="Comma-separated run modes.")
@click.option("--workers", type=int, default=1)
@click.option("--answer-type", type=click.Choice(["text", "choice"]), default="text")
@click.option("--out-dir", type=click.Path(), default="reports")
@click.option("--strict", is_flag=True, default=False,
              help="Exit nonzero if any transcript failed.")
@click.option("--figures/--no-figures", "figures", default=True)
@_friendly_errors
def eval_command(config_path, dataset_path, modes, workers, answer_type, out_dir, strict,
                 figures, pool_path, **flags) -> None:
    """Evaluate a dataset across modes; writes report JSON, per-item CSV, figures."""
    config = _build_config(config_path, pool_path=pool_path, **flags)
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    backend = _make_backend(config)
    embedder = _make_embedder(config)
    reranker = _make_reranker(config)
    pool = _prepare_pool(config, pool_path, embedder)
    dataset = load_dataset(dataset_path)
    report = evaluate(
        dataset, mode_list, config, backend, pool,
        workers=workers, embedder=embedder, reranker=reranker, answer_type=answer_type,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "report.json")
    write_items_csv(report, out / "report_items.csv")
    if figures:
        try_render(render_eval_figures, report, out)
    for summary in report.summaries:
        click.echo(
            f"{summary.mode}: accuracy {summary.accuracy:.3f} "
            f"({summary.correct}/{summary.total}), "
            f"avg tokens {summary.avg_tokens_per_question:.1f}, "
            f"failures {summary.failures}"
        )
    click.echo(f"wrote {out / 'report.json'}")
    if strict and any(s.failures for s in report.summaries):
        sys.exit(1)


@main.command("sweep")
@_engine_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--parameter", type=click.Choice(["r", "k"]), required=True)
@click.option("--values", type=str, default="1,2,3,4", help="Comma-separated integers.")
@click.option("--workers", type=int, default=1)
@click.option("--answer-type", type=click.Choice(["text", "choice"]), default="text")
@click.option("--out-dir", type=click.Path(), default="reports")
@click.option("--figures/--no-figures", "figures", default=True)
@_friendly_errors
def sweep_command(config_path, dataset_path, parameter, values, workers, answer_type,
                  out_dir, figures, pool_path, **flags) -> None:
    """Sweep r or k over a value list, one evaluation per value."""
    config = _build_config(config_path, pool_path=pool_path, **flags)
    value_list = [int(v.strip()) for v in values.split(",") if v.strip()]
    backend = _make_backend(config)
    embedder = _make_embedder(config)
    reranker = _make_reranker(config)
    pool = _prepare_pool(config, pool_path, embedder)
    dataset = load_dataset(dataset_path)
    table = run_sweep(
        dataset, parameter, value_list, config, backend, pool,
        workers=workers, embedder=embedder, reranker=reranker, answer_type=answer_type,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_sweep_csv(table, out / f"sweep_{parameter}.csv")
    if figures:
        try_render(render_sweep_figure, table, out)
    for row in table.rows:
        click.echo(f"{parameter}={row.value}: accuracy {row.accuracy:.3f}, "
                   f"avg tokens {row.avg_tokens_per_question:.1f}")
    click.echo(f"wrote {csv_path}")


@main.command("entropy")
@_engine_options
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default="entropy.csv")
@click.option("--figures/--no-figures", "figures", default=True)
@_friendly_errors
def entropy_command(config_path, dataset_path, out_path, figures, pool_path, **flags) -> None:
    """Export per-token entropy readings with interrupt flags to CSV."""
    config = _build_config(config_path, pool_path=pool_path, **flags)
    backend = _make_backend(config)
    dataset = load_dataset(dataset_path)
    result = export_entropy(dataset, config, backend, out_path)
    if result.rows == 0 and result.skipped > 0:
        click.echo("warning: degraded backend, no entropy readings", err=True)
    if figures and result.rows:
        entropies: list[float] = []
        flags_col: list[bool] = []
        with result.path.open(encoding="utf-8") as handle:
            for record in csv.DictReader(row for row in handle if not row.startswith("#")):
                entropies.append(float(record["entropy_nats"]))
                flags_col.append(record["is_interrupt"] == "true")
        try_render(render_entropy_figure, entropies, flags_col, result.path.parent)
    click.echo(f"wrote {result.rows} rows to {result.path} (skipped {result.skipped} degraded)")


@main.group("pool")
def pool_group() -> None:
    """Demonstration-pool maintenance."""


@pool_group.command("embed")
@click.option("--pool", "pool_path", type=click.Path(exists=True), required=True)
@click.option("--embedder", "embedder_kind", type=click.Choice(["lexical", "api"]),
              default="lexical")
@click.option("--embedding-url", type=str, default=None)
@click.option("--text-mode", type=click.Choice(["problem_only", "full_demo"]),
              default="problem_only")
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Sidecar path; defaults to <pool>.embeddings.json.")
@_friendly_errors
def pool_embed_command(pool_path, embedder_kind, embedding_url, text_mode, cache_path) -> None:
    """Compute and persist pool embeddings to the sidecar file."""
    config = apply_overrides(
        EngineConfig(), embedder=embedder_kind, embedding_url=embedding_url,
        embed_text_mode=text_mode,
    )
    embedder = _make_embedder(config)
    pool = load_pool(pool_path, text_mode=text_mode)
    sidecar = Path(cache_path) if cache_path else _sidecar_path(pool_path)
    embedded = embed_pool(pool, embedder, cache_path=sidecar)
    assert embedded.embedding_index is not None
    click.echo(
        f"embedded {len(embedded)} demos "
        f"(dim {embedded.embedding_index.shape[1] if len(embedded) else 0}) -> {sidecar}"
    )


if __name__ == "__main__":
    main()
