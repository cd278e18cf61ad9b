"""Confusion detection: build the Yes/No prompt, call the backend, parse.

Parsing is total and fail-open: any malformed or errored response degrades
to an empty summary (treated as "no confusion") with a recorded warning, so
a broken sub-query never takes down the main generation. The detection
sub-query runs at temperature 0 regardless of the main sampling settings to
keep transcripts reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

from .backend import Backend, BackendError
from .config import load_asset_text
from .types import ConfusionSummary, Query

_ANSWER_WORD = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_BLOCK_MARKER = "confusion{"


@dataclass(frozen=True)
class DetectionResult:
    summary: ConfusionSummary
    raw_response: str | None
    warnings: tuple[str, ...] = ()


@lru_cache(maxsize=8)
def load_detection_template(asset: str = "detection_prompt_v1.txt") -> str:
    return load_asset_text(asset)


def build_detection_prompt(query: Query, partial_output: str, template: str | None = None) -> str:
    """Fill the detection template; query and partial text appear verbatim."""
    template = template if template is not None else load_detection_template()
    return template.replace("{{QUERY}}", query.text).replace("{{PARTIAL}}", partial_output)


def _extract_block(text: str) -> str | None:
    """Contents of the first balanced confusion{...} block, or None."""
    start = text.lower().find(_BLOCK_MARKER)
    if start < 0:
        return None
    depth = 1
    i = start + len(_BLOCK_MARKER)
    begin = i
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[begin:i]
        i += 1
    return None


def parse_detection_response(text: str) -> tuple[ConfusionSummary, tuple[str, ...]]:
    """Parse a detection response into (summary, warnings); never raises.

    A leading "No" wins regardless of anything after it; "Yes" plus a
    balanced confusion{...} block yields the block contents; "Yes" without a
    parseable block, or no recognizable answer at all, degrades to an empty
    summary with a warning.
    """
    match = _ANSWER_WORD.search(text)
    if match is None:
        return ConfusionSummary.empty(), ("unrecognized detection response",)
    if match.group(0).lower() == "no":
        return ConfusionSummary.empty(), ()
    block = _extract_block(text)
    if block is None:
        return ConfusionSummary.empty(), ("detection answered Yes without a parseable confusion{} block",)
    return ConfusionSummary(block.strip()), ()


def detect_confusion(
    backend: Backend,
    query: Query,
    partial_output: str,
    *,
    template: str | None = None,
    temperature: float = 0.0,
    max_tokens: int = 256,
) -> DetectionResult:
    """Run one detection sub-query; backend failures fail open."""
    prompt = build_detection_prompt(query, partial_output, template)
    try:
        raw = backend.complete(prompt, temperature=temperature, max_tokens=max_tokens)
    except BackendError as exc:
        return DetectionResult(
            summary=ConfusionSummary.empty(),
            raw_response=None,
            warnings=(f"confusion detection backend error: {exc}",),
        )
    summary, warnings = parse_detection_response(raw)
    return DetectionResult(summary=summary, raw_response=raw, warnings=warnings)
