"""Engine configuration: all tunables, validation, and file loading.

The default interruption vocabulary ships as a packaged config asset
(``assets/default_config.json``) rather than a code literal, so deployments
can extend it without touching code. Config files may be JSON or YAML; CLI
flags override file values field by field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .types import DEFAULT_DEMO_TEMPLATE, TOKENS_PER_WORD

MODES = ("zero_shot", "static_icl", "picl")
SELECTORS = ("random", "similarity", "bm25")
BACKENDS = ("mock", "openai")
EMBEDDERS = ("lexical", "api")
RERANKERS = ("lexical", "api")
EMBED_TEXT_MODES = ("problem_only", "full_demo")


def load_asset_text(name: str) -> str:
    """Read a packaged text asset."""
    return resources.files("picl.assets").joinpath(name).read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def _default_interruption_tokens() -> tuple[str, ...]:
    data = json.loads(load_asset_text("default_config.json"))
    return tuple(data["interruption_tokens"])


@dataclass(frozen=True)
class ConfigViolation:
    field: str
    constraint: str

    def __str__(self) -> str:
        return f"{self.field}: {self.constraint}"


class ConfigError(Exception):
    """Raised when a config fails validation; carries every violation."""

    def __init__(self, errors: list[ConfigViolation]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


@dataclass(frozen=True)
class EngineConfig:
    """All engine tunables.

    Notes on the less obvious fields:

    * ``max_interventions`` (r) caps interrupt-triggered detection cycles per
      query; ``insertion_count`` (k) is demonstrations per intervention;
      ``retrieval_candidates`` (N) is the phase-1 candidate set size.
    * ``entropy_threshold``: optional gate on top of vocabulary matching;
      ``None`` (default) means membership in the interruption vocabulary alone
      triggers an interrupt.
    * ``keep_trigger_token``: when False, the trigger token is dropped from
      the context before demonstrations are spliced in (ablation variant).
    * ``count_insertions_only``: when True the budget counts only actual
      insertions, not every firing (ablation variant; with it on, detections
      are no longer bounded by r, only insertions are).
    """

    interruption_tokens: tuple[str, ...] = field(default_factory=_default_interruption_tokens)
    max_interventions: int = 1
    insertion_count: int = 1
    retrieval_candidates: int = 20
    temperature: float = 0.7
    top_p: float = 0.8
    mode: str = "picl"
    static_shot_count: int = 1
    static_selector: str = "similarity"
    seed: int = 0
    samples: int = 1
    max_tokens: int = 4096
    want_logprobs: bool = True
    top_logprobs_n: int = 20
    entropy_threshold: float | None = None
    detection_temperature: float = 0.0
    demo_template: str = DEFAULT_DEMO_TEMPLATE
    tokens_per_word: float = TOKENS_PER_WORD
    embed_text_mode: str = "problem_only"
    keep_trigger_token: bool = True
    count_insertions_only: bool = False
    backend: str = "mock"
    base_url: str = ""
    model: str = ""
    api_key: str = ""
    mock_file: str = ""
    embedder: str = "lexical"
    reranker: str = "lexical"
    embedding_url: str = ""
    reranker_url: str = ""
    detection_prompt_asset: str = "detection_prompt_v1.txt"
    zero_shot_prompt_asset: str = "zero_shot_prompt_v1.txt"
    few_shot_prompt_asset: str = "few_shot_prompt_v1.txt"

    def __post_init__(self) -> None:
        object.__setattr__(self, "interruption_tokens", tuple(self.interruption_tokens))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(
                [ConfigViolation(name, "unknown config field") for name in unknown]
            )
        kwargs = dict(data)
        if "interruption_tokens" in kwargs:
            kwargs["interruption_tokens"] = tuple(kwargs["interruption_tokens"])
        return cls(**kwargs)


def config_violations(config: EngineConfig) -> list[ConfigViolation]:
    """Collect every violated invariant; empty list means valid."""
    errors: list[ConfigViolation] = []
    if not config.interruption_tokens:
        errors.append(ConfigViolation("interruption_tokens", "must be non-empty"))
    if config.max_interventions < 0:
        errors.append(ConfigViolation("max_interventions", "r must be >= 0"))
    if config.insertion_count < 1:
        errors.append(ConfigViolation("insertion_count", "k must be >= 1"))
    if config.retrieval_candidates < 1:
        errors.append(ConfigViolation("retrieval_candidates", "N must be >= 1"))
    if config.insertion_count > config.retrieval_candidates:
        errors.append(
            ConfigViolation(
                "insertion_count",
                f"k ≤ N violated (k={config.insertion_count}, N={config.retrieval_candidates})",
            )
        )
    if config.temperature < 0.0:
        errors.append(ConfigViolation("temperature", "must be >= 0"))
    if not (0.0 < config.top_p <= 1.0):
        errors.append(ConfigViolation("top_p", f"top_p in (0,1] violated (got {config.top_p})"))
    if config.mode not in MODES:
        errors.append(ConfigViolation("mode", f"must be one of {MODES}"))
    if config.static_shot_count < 0:
        errors.append(ConfigViolation("static_shot_count", "must be >= 0"))
    if config.mode == "static_icl" and config.static_shot_count < 1:
        errors.append(ConfigViolation("static_shot_count", "must be >= 1 for static_icl"))
    if config.static_selector not in SELECTORS:
        errors.append(ConfigViolation("static_selector", f"must be one of {SELECTORS}"))
    if config.samples < 1:
        errors.append(ConfigViolation("samples", "must be >= 1"))
    if config.max_tokens < 1:
        errors.append(ConfigViolation("max_tokens", "must be >= 1"))
    if config.want_logprobs and config.top_logprobs_n < 1:
        errors.append(ConfigViolation("top_logprobs_n", "must be >= 1 when want_logprobs is set"))
    if config.entropy_threshold is not None and config.entropy_threshold < 0.0:
        errors.append(ConfigViolation("entropy_threshold", "must be >= 0 when set"))
    if config.tokens_per_word <= 0.0:
        errors.append(ConfigViolation("tokens_per_word", "must be > 0"))
    if config.embed_text_mode not in EMBED_TEXT_MODES:
        errors.append(ConfigViolation("embed_text_mode", f"must be one of {EMBED_TEXT_MODES}"))
    if config.backend not in BACKENDS:
        errors.append(ConfigViolation("backend", f"must be one of {BACKENDS}"))
    if config.embedder not in EMBEDDERS:
        errors.append(ConfigViolation("embedder", f"must be one of {EMBEDDERS}"))
    if config.reranker not in RERANKERS:
        errors.append(ConfigViolation("reranker", f"must be one of {RERANKERS}"))
    return errors


def validate_config(config: EngineConfig) -> EngineConfig:
    """Return the config unchanged if valid, else raise with all violations."""
    errors = config_violations(config)
    if errors:
        raise ConfigError(errors)
    return config


def load_config(path: str | Path) -> EngineConfig:
    """Load an EngineConfig from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError([ConfigViolation("<file>", "config file must hold a mapping")])
    return EngineConfig.from_dict(data)


def apply_overrides(config: EngineConfig, **overrides: Any) -> EngineConfig:
    """Apply non-None overrides on top of a config (CLI flag semantics)."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if "interruption_tokens" in updates:
        updates["interruption_tokens"] = tuple(updates["interruption_tokens"])
    return replace(config, **updates) if updates else config
