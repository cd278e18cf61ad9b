"""Deterministic scripted backend for offline testing.

Scripts and canned completions load from a JSON file of the form::

    {
      "scripts": [
        {
          "key": "substring matched against the request prompt",
          "steps": [
            {"token": " Wait", "logprob": -0.2,
             "alternatives": [[" Wait", -0.2], [" So", -1.9]]},
            {"token": " ok"}
          ],
          "fail": false
        }
      ],
      "completions": [
        {"key": "signs of confusion", "response": "No", "fail_times": 0}
      ]
    }

Steps without ``alternatives`` produce degraded events (no distribution).
For both scripts and completions the first entry whose key is a substring of
the prompt wins, so list more specific keys first.

Replay across pause/resume is prompt-anchored: the first request for a
script records its prompt as the anchor; a later request that strictly
extends the anchor resumes after the longest prefix of scripted tokens found
at the start of the extension. This verifies that callers really resume with
``original prompt + emitted text (+ insertions)``. One caveat follows from
the greedy scan: a scripted token that is a prefix of the insertion block at
the exact splice point (for example a bare newline) would be misattributed,
so keep such tokens away from insertion boundaries in fixtures.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

from ..types import TokenEvent
from .base import (
    Backend,
    BackendError,
    BackendRequest,
    MockScriptError,
    TokenStream,
    TransportError,
    with_retries,
)


@dataclass(frozen=True)
class MockStep:
    """One scripted token; empty alternatives means a degraded event."""

    token: str
    logprob: float = 0.0
    alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if not self.token:
            raise ValueError("mock step token must be non-empty")
        if self.logprob > 0.0:
            raise ValueError(f"mock step {self.token!r}: logprob must be <= 0")
        alts = tuple((str(t), float(lp)) for t, lp in self.alternatives)
        object.__setattr__(self, "alternatives", alts)
        if alts:
            if any(lp > 0.0 for _, lp in alts):
                raise ValueError(f"mock step {self.token!r}: alternative logprobs must be <= 0")
            if any(alts[i][1] < alts[i + 1][1] for i in range(len(alts) - 1)):
                raise ValueError(f"mock step {self.token!r}: alternatives must be sorted descending")
            if self.token not in {t for t, _ in alts}:
                raise ValueError(f"mock step {self.token!r}: token missing from its alternatives")

    def to_event(self) -> TokenEvent:
        return TokenEvent(text=self.token, logprob=self.logprob, top_alternatives=self.alternatives)


@dataclass(frozen=True)
class MockScript:
    """Ordered steps replayed for prompts containing ``key``."""

    key: str
    steps: tuple[MockStep, ...]
    fail: bool = False


@dataclass(frozen=True)
class CannedCompletion:
    """Non-streaming response for prompts containing ``key``.

    ``fail_times`` simulates transport failures on the first N calls.
    """

    key: str
    response: str
    fail_times: int = 0


class MockBackend(Backend):
    """Replays scripts and canned completions with bit-exact determinism."""

    def __init__(
        self,
        scripts: Sequence[MockScript] = (),
        completions: Sequence[CannedCompletion] = (),
        *,
        attempts: int = 3,
    ):
        self._scripts = list(scripts)
        self._completions = list(completions)
        self._attempts = attempts
        self._anchors: dict[int, str] = {}
        self._fail_budget = {i: c.fail_times for i, c in enumerate(self._completions)}
        self._lock = threading.Lock()
        self.complete_calls = 0
        self.complete_attempts = 0
        self.stream_requests = 0

    def reset(self) -> None:
        """Forget anchors, restore failure budgets, zero the counters."""
        with self._lock:
            self._anchors.clear()
            self._fail_budget = {i: c.fail_times for i, c in enumerate(self._completions)}
            self.complete_calls = 0
            self.complete_attempts = 0
            self.stream_requests = 0

    def _find_script(self, prompt: str) -> tuple[int, MockScript]:
        for i, script in enumerate(self._scripts):
            if script.key in prompt:
                return i, script
        raise MockScriptError("no scripted stream for prompt")

    def _resume_position(self, index: int, script: MockScript, prompt: str) -> int:
        with self._lock:
            anchor = self._anchors.get(index)
            if anchor is not None and prompt.startswith(anchor) and len(prompt) > len(anchor):
                remainder = prompt[len(anchor):]
                pos = 0
                j = 0
                while j < len(script.steps) and remainder.startswith(script.steps[j].token, pos):
                    pos += len(script.steps[j].token)
                    j += 1
                return j
            self._anchors[index] = prompt
            return 0

    def stream_generate(self, request: BackendRequest) -> TokenStream:
        index, script = self._find_script(request.prompt)
        if script.fail:
            raise BackendError(f"scripted stream failure for key {script.key!r}")
        with self._lock:
            self.stream_requests += 1
        start = self._resume_position(index, script, request.prompt)
        remaining = script.steps[start:]
        emit = remaining[: request.max_tokens]
        degraded = (
            request.want_logprobs
            and len(emit) > 0
            and all(not step.alternatives for step in emit)
        )
        stream = TokenStream(iter(()), degraded=degraded)

        def events() -> Iterator[TokenEvent]:
            for step in emit:
                yield step.to_event()
            stream.finish_reason = "length" if len(emit) < len(remaining) else "stop"

        stream._events = events()
        return stream

    def complete(
        self,
        prompt: str,
        *,
        temperature: float = 0.0,
        top_p: float = 1.0,
        max_tokens: int = 512,
    ) -> str:
        with self._lock:
            self.complete_calls += 1
        for i, canned in enumerate(self._completions):
            if canned.key in prompt:
                return with_retries(
                    lambda: self._attempt_completion(i, canned),
                    attempts=self._attempts,
                    base_delay=0.0,
                )
        raise MockScriptError("no scripted response")

    def _attempt_completion(self, index: int, canned: CannedCompletion) -> str:
        with self._lock:
            self.complete_attempts += 1
            if self._fail_budget.get(index, 0) > 0:
                self._fail_budget[index] -= 1
                raise TransportError(f"scripted transport failure for key {canned.key!r}")
        return canned.response


def _parse_step(raw: dict[str, Any], where: str) -> MockStep:
    if "token" not in raw:
        raise MockScriptError(f"{where}: missing field token")
    alts = raw.get("alternatives") or ()
    try:
        return MockStep(
            token=raw["token"],
            logprob=float(raw.get("logprob", 0.0)),
            alternatives=tuple((t, lp) for t, lp in alts),
        )
    except ValueError as exc:
        raise MockScriptError(f"{where}: {exc}") from exc


def load_mock_file(path: str | Path) -> MockBackend:
    """Build a MockBackend from the documented JSON file format."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    scripts = []
    for si, raw in enumerate(data.get("scripts", [])):
        if "key" not in raw:
            raise MockScriptError(f"scripts[{si}]: missing field key")
        steps = tuple(
            _parse_step(step, f"scripts[{si}].steps[{ti}]")
            for ti, step in enumerate(raw.get("steps", []))
        )
        scripts.append(MockScript(key=raw["key"], steps=steps, fail=bool(raw.get("fail", False))))
    completions = []
    for ci, raw in enumerate(data.get("completions", [])):
        if "key" not in raw or "response" not in raw:
            raise MockScriptError(f"completions[{ci}]: missing field key or response")
        completions.append(
            CannedCompletion(
                key=raw["key"],
                response=raw["response"],
                fail_times=int(raw.get("fail_times", 0)),
            )
        )
    return MockBackend(scripts=scripts, completions=completions)
