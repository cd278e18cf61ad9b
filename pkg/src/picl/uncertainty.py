"""Per-step Shannon entropy and interruption-token detection.

Entropy is computed in nats over the top-n alternatives a provider exposes,
with any residual probability mass folded into a single tail bucket. That
keeps the result a lower bound on the entropy over the full vocabulary;
readings flag ``truncated`` whenever folding happened, and ``support_size``
counts the buckets actually summed (tail bucket included) so
``0 <= entropy <= ln(support_size)`` holds exactly.

Interrupt detection works on decoded text, not token ids: a vocabulary entry
counts when it appears as a whole word, case-insensitively, with surrounding
punctuation ignored. Callers suppress re-detection by trimming the tail they
pass in (see the controller), which also makes a word split across backend
tokens fire exactly once, at the event that completes it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .types import TokenEvent

RESIDUAL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EntropyReading:
    position: int
    entropy_nats: float
    support_size: int
    truncated: bool


@dataclass(frozen=True)
class EntropyProfile:
    readings: tuple[EntropyReading, ...]
    skipped: int


@dataclass(frozen=True)
class InterruptMatch:
    """A vocabulary hit: the entry, its surface form, and tail offsets."""

    word: str
    surface: str
    start: int
    end: int


def _entropy_details(logprobs: Sequence[float]) -> tuple[float, int, bool]:
    if not logprobs:
        raise ValueError("no distribution")
    probs = [math.exp(lp) for lp in logprobs]
    total = math.fsum(probs)
    if total > 1.0 + RESIDUAL_TOLERANCE:
        raise ValueError("invalid distribution")
    terms = [p * math.log(p) for p in probs if p > 0.0]
    buckets = len(probs)
    tail = 1.0 - total
    truncated = tail > RESIDUAL_TOLERANCE
    if truncated:
        terms.append(tail * math.log(tail))
        buckets += 1
    # fsum is exactly rounded, so permuting the inputs cannot change the result
    return max(0.0, -math.fsum(terms)), buckets, truncated


def shannon_entropy(logprobs: Sequence[float]) -> float:
    """Entropy in nats of the distribution given as natural-log probabilities.

    Residual mass beyond the listed alternatives (if above tolerance) is
    folded into one extra bucket; zero-probability terms contribute nothing.
    """
    entropy, _, _ = _entropy_details(logprobs)
    return entropy


def event_entropy(event: TokenEvent) -> float | None:
    """Entropy of one event's distribution, or None for degraded events."""
    if not event.top_alternatives:
        return None
    return shannon_entropy([lp for _, lp in event.top_alternatives])


@lru_cache(maxsize=64)
def _vocab_pattern(vocab: tuple[str, ...]) -> re.Pattern[str]:
    # Longest-first keeps overlapping entries deterministic at equal starts.
    ordered = sorted(vocab, key=lambda w: (-len(w), w))
    joined = "|".join(re.escape(word) for word in ordered)
    return re.compile(rf"\b(?:{joined})\b", re.IGNORECASE)


def detect_interrupt(
    event: TokenEvent, vocab: Iterable[str], decoded_tail: str
) -> InterruptMatch | None:
    """Return the leftmost whole-word vocabulary match in ``decoded_tail``.

    ``decoded_tail`` is the decoded text ending at ``event``, already trimmed
    past anything the caller has consumed. Absence of a match is not an
    error.
    """
    words = tuple(sorted({w for w in vocab}))
    if not words:
        raise ValueError("interrupt vocabulary must be non-empty")
    match = _vocab_pattern(words).search(decoded_tail)
    if match is None:
        return None
    surface = match.group(0)
    lowered = surface.lower()
    word = next((w for w in words if w.lower() == lowered), lowered)
    return InterruptMatch(word=word, surface=surface, start=match.start(), end=match.end())


def interrupt_flags(events: Sequence[TokenEvent], vocab: Iterable[str]) -> list[bool]:
    """Per-event flags marking the events at which an interrupt would fire.

    Walks the stream with an advancing watermark, so each vocabulary-word
    instance flags exactly one event: the one that completes it.
    """
    vocab = tuple(vocab)
    decoded = ""
    watermark = 0
    flags: list[bool] = []
    for event in events:
        decoded += event.text
        match = detect_interrupt(event, vocab, decoded[watermark:])
        if match is not None:
            watermark += match.end
            flags.append(True)
        else:
            flags.append(False)
    return flags


def entropy_profile(events: Sequence[TokenEvent]) -> EntropyProfile:
    """One reading per event that carries a distribution; degraded events are
    skipped and counted."""
    readings: list[EntropyReading] = []
    skipped = 0
    for position, event in enumerate(events):
        if not event.top_alternatives:
            skipped += 1
            continue
        entropy, buckets, truncated = _entropy_details([lp for _, lp in event.top_alternatives])
        readings.append(
            EntropyReading(
                position=position,
                entropy_nats=entropy,
                support_size=buckets,
                truncated=truncated,
            )
        )
    return EntropyProfile(readings=tuple(readings), skipped=skipped)
