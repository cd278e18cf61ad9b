"""Backend abstraction: streaming token generation plus non-streaming sub-queries.

A backend handle is shareable across workers; each token stream is owned by
exactly one consumer. Pausing a stream and resuming is done by issuing a
fresh request whose prompt is the original prompt plus all text so far
(including any spliced-in demonstrations) -- no server-side session state is
assumed, which keeps the mechanism portable across providers.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Iterator, TypeVar

from ..types import TokenEvent


class BackendError(Exception):
    """Terminal backend failure."""


class TransportError(BackendError):
    """Retryable transport-level failure."""


class MockScriptError(BackendError):
    """The scripted mock had no entry for a request."""


@dataclass(frozen=True)
class BackendRequest:
    """Parameters for one generation request."""

    prompt: str
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 4096
    want_logprobs: bool = False
    top_logprobs_n: int = 20

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.want_logprobs and self.top_logprobs_n < 1:
            raise ValueError("top_logprobs_n must be >= 1 when want_logprobs is set")


class TokenStream:
    """Iterator over TokenEvents with stream-level status flags.

    ``degraded`` becomes True when the backend could not provide
    log-probability distributions; ``finish_reason`` is set once the stream
    is exhausted ("stop" or "length").
    """

    def __init__(self, events: Iterator[TokenEvent], degraded: bool = False):
        self._events = events
        self.degraded = degraded
        self.finish_reason: str | None = None

    def __iter__(self) -> Iterator[TokenEvent]:
        return self._events


class Backend(ABC):
    """Completion provider: one streaming entry point, one non-streaming."""

    @abstractmethod
    def stream_generate(self, request: BackendRequest) -> TokenStream:
        """Yield TokenEvents one at a time until end of sequence."""

    @abstractmethod
    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        top_p: float = 1.0,
        max_tokens: int = 512,
    ) -> str:
        """Return the full non-streamed completion for a sub-query."""


T = TypeVar("T")


def with_retries(
    fn: Callable[[], T],
    *,
    attempts: int = 3,
    base_delay: float = 0.5,
) -> T:
    """Run ``fn`` with exponential backoff on TransportError.

    After the final attempt the error is re-raised annotated with the attempt
    count. Non-transport errors propagate immediately.
    """
    last: TransportError | None = None
    for attempt in range(1, attempts + 1):
        try:
            return fn()
        except TransportError as exc:
            last = exc
            if attempt < attempts and base_delay > 0.0:
                time.sleep(base_delay * (2 ** (attempt - 1)))
    raise TransportError(f"failed after {attempts} attempts: {last}")
