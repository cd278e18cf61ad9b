"""Live backend speaking the OpenAI-compatible completions wire protocol.

Streams server-sent-event chunks from ``/v1/completions`` and maps the
per-token ``logprobs`` fields onto TokenEvents. Transport failures are
retried up to three times with exponential backoff; a non-2xx response with
a parseable JSON error body is terminal. When the server omits logprobs the
stream is flagged degraded and events carry empty distributions.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Iterator

import httpx

from ..types import TokenEvent
from .base import Backend, BackendError, BackendRequest, TokenStream, TransportError, with_retries

logger = logging.getLogger(__name__)


def _clamped(logprob: float) -> float:
    # Some servers emit tiny positive values for near-certain tokens.
    return min(float(logprob), 0.0)


def _events_from_logprobs(block: dict[str, Any]) -> Iterator[TokenEvent]:
    tokens = block.get("tokens") or []
    token_logprobs = block.get("token_logprobs") or []
    top_logprobs = block.get("top_logprobs") or []
    for i, token in enumerate(tokens):
        lp = _clamped(token_logprobs[i]) if i < len(token_logprobs) else 0.0
        alts: list[tuple[str, float]] = []
        if i < len(top_logprobs) and isinstance(top_logprobs[i], dict):
            alts = [(t, _clamped(v)) for t, v in top_logprobs[i].items()]
        if alts and token not in {t for t, _ in alts}:
            alts.append((token, lp))
        alts.sort(key=lambda pair: (-pair[1], pair[0]))
        yield TokenEvent(text=token, logprob=lp, top_alternatives=tuple(alts))


class OpenAICompletionsBackend(Backend):
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        *,
        timeout: float = 120.0,
        attempts: int = 3,
        retry_delay: float = 0.5,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._attempts = attempts
        self._retry_delay = retry_delay
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    def _payload(self, request: BackendRequest, stream: bool) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.model,
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "stream": stream,
        }
        if request.want_logprobs:
            payload["logprobs"] = request.top_logprobs_n
        return payload

    def _raise_for_status(self, response: httpx.Response, body: bytes) -> None:
        if response.status_code < 400:
            return
        try:
            detail = json.loads(body)
        except (ValueError, UnicodeDecodeError):
            raise TransportError(f"HTTP {response.status_code} from {self.base_url}")
        message = detail.get("error", detail)
        raise BackendError(f"HTTP {response.status_code}: {message}")

    def stream_generate(self, request: BackendRequest) -> TokenStream:
        url = f"{self.base_url}/v1/completions"
        payload = self._payload(request, stream=True)

        def open_stream() -> httpx.Response:
            try:
                req = self._client.build_request("POST", url, json=payload)
                response = self._client.send(req, stream=True)
            except httpx.TransportError as exc:
                raise TransportError(str(exc)) from exc
            if response.status_code >= 400:
                body = response.read()
                response.close()
                self._raise_for_status(response, body)
            return response

        response = with_retries(open_stream, attempts=self._attempts, base_delay=self._retry_delay)
        stream = TokenStream(iter(()), degraded=False)

        def events() -> Iterator[TokenEvent]:
            finish: str | None = None
            try:
                for line in response.iter_lines():
                    line = line.strip()
                    if not line.startswith("data:"):
                        continue
                    data = line[len("data:"):].strip()
                    if data == "[DONE]":
                        break
                    try:
                        chunk = json.loads(data)
                    except ValueError:
                        logger.warning("skipping unparseable stream chunk")
                        continue
                    choices = chunk.get("choices") or []
                    if not choices:
                        continue
                    choice = choices[0]
                    finish = choice.get("finish_reason") or finish
                    block = choice.get("logprobs")
                    if request.want_logprobs and block:
                        yield from _events_from_logprobs(block)
                    elif choice.get("text"):
                        if request.want_logprobs:
                            stream.degraded = True
                        yield TokenEvent(text=choice["text"], logprob=0.0)
            except httpx.TransportError as exc:
                raise TransportError(f"stream interrupted: {exc}") from exc
            finally:
                response.close()
            stream.finish_reason = finish or "stop"

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
        request = BackendRequest(
            prompt=prompt, temperature=temperature, top_p=top_p, max_tokens=max_tokens
        )
        url = f"{self.base_url}/v1/completions"
        payload = self._payload(request, stream=False)

        def call() -> str:
            try:
                response = self._client.post(url, json=payload)
            except httpx.TransportError as exc:
                raise TransportError(str(exc)) from exc
            self._raise_for_status(response, response.content)
            body = response.json()
            choices = body.get("choices") or []
            if not choices:
                return ""
            return choices[0].get("text") or ""

        return with_retries(call, attempts=self._attempts, base_delay=self._retry_delay)
