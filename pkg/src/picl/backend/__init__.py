"""Backends: the streaming abstraction, a live HTTP client, a scripted mock."""

from .base import (
    Backend,
    BackendError,
    BackendRequest,
    MockScriptError,
    TokenStream,
    TransportError,
    with_retries,
)
from .mock import CannedCompletion, MockBackend, MockScript, MockStep, load_mock_file
from .openai_http import OpenAICompletionsBackend

__all__ = [
    "Backend",
    "BackendError",
    "BackendRequest",
    "CannedCompletion",
    "MockBackend",
    "MockScript",
    "MockScriptError",
    "MockStep",
    "OpenAICompletionsBackend",
    "TokenStream",
    "TransportError",
    "load_mock_file",
    "with_retries",
]
