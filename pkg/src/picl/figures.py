"""Figure rendering for report outputs.

PNGs are rendered next to the delimited files as a convenience; the CSV/JSON
reports stay the canonical outputs, and any rendering failure is logged and
swallowed rather than failing a run.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import EvalReport, SweepTable

logger = logging.getLogger(__name__)


def _save(fig: plt.Figure, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_eval_figures(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Accuracy-per-mode and average-tokens-per-mode bar charts."""
    out_dir = Path(out_dir)
    modes = [s.mode for s in report.summaries]
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(modes, [s.accuracy for s in report.summaries], color="#4878a8")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_title(f"Accuracy by mode ({report.dataset})")
    written.append(_save(fig, out_dir / "eval_accuracy.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(modes, [s.avg_tokens_per_question for s in report.summaries], color="#a85448")
    ax.set_ylabel("avg tokens per question")
    ax.set_title(f"Token usage by mode ({report.dataset})")
    written.append(_save(fig, out_dir / "eval_tokens.png"))
    return written


def render_sweep_figure(table: SweepTable, out_dir: str | Path) -> Path:
    """Accuracy as a line over the swept parameter values."""
    out_dir = Path(out_dir)
    values = [row.value for row in table.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(values, [row.accuracy for row in table.rows], marker="o", color="#4878a8")
    ax.set_xticks(values)
    ax.set_xlabel(table.parameter)
    ax.set_ylabel("accuracy")
    ax.set_title(f"Sensitivity to {table.parameter}")
    return _save(fig, out_dir / f"sweep_{table.parameter}.png")


def render_entropy_figure(
    entropies: Sequence[float], interrupt_flags: Sequence[bool], out_dir: str | Path
) -> Path:
    """Density histogram of token entropy, interrupt tokens overlaid."""
    out_dir = Path(out_dir)
    rest = [h for h, flag in zip(entropies, interrupt_flags) if not flag]
    hits = [h for h, flag in zip(entropies, interrupt_flags) if flag]
    fig, ax = plt.subplots(figsize=(6, 4))
    if rest:
        ax.hist(rest, bins=40, density=True, alpha=0.6, color="#4878a8", label="other tokens")
    if hits:
        ax.hist(hits, bins=40, density=True, alpha=0.6, color="#a85448", label="interrupt tokens")
    ax.set_xlabel("entropy (nats)")
    ax.set_ylabel("density")
    ax.set_title("Token entropy density")
    if rest or hits:
        ax.legend()
    return _save(fig, out_dir / "entropy_density.png")


def try_render(render, *args, **kwargs):
    """Run a renderer, logging instead of raising on failure."""
    try:
        return render(*args, **kwargs)
    except Exception as exc:  # pragma: no cover - defensive
        logger.warning("figure rendering failed: %s", exc)
        return None
