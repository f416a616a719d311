"""Application configuration: one YAML document, strict keys, one seed.

Precedence is flags > environment > file > defaults (the CLI applies flag and
env overrides on top of the loaded file). Unknown keys are rejected rather
than ignored so typos fail loudly, and every path named in the config must
exist at load time. All randomness downstream flows from the single top-level
seed, and every output embeds the config fingerprint.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import yaml

from .crag import AST_DESCRIPTION, DEFAULT_K, DEFAULT_THRESHOLD, RAW_CODE
from .ingest import DEFAULT_SNIPPET_BUDGET
from .prompts import DEFAULT_CONTEXT_BUDGET


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class MockRule:
    contains: str
    response: str


@dataclass(frozen=True)
class ProviderSettings:
    kind: str = "mock"  # mock | http
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 30.0
    max_retries: int = 3
    max_parallel: int = 4
    temperature: float = 0.0
    request_log: str = ""  # JSONL call log destination; empty = in-memory only
    mock_default: str = ""
    mock_rules: tuple[MockRule, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"provider.kind must be mock or http, got {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ConfigError("provider.kind=http requires provider.endpoint")


@dataclass(frozen=True)
class EmbeddingSettings:
    kind: str = "offline"  # offline | http
    dimension: int = 1536
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("offline", "http"):
            raise ConfigError(f"embedding.kind must be offline or http, got {self.kind!r}")
        if self.dimension <= 0:
            raise ConfigError("embedding.dimension must be positive")


@dataclass(frozen=True)
class CragSettings:
    k: int = DEFAULT_K
    threshold: float = DEFAULT_THRESHOLD
    grader: str = "offline"  # offline | llm
    mode: str = RAW_CODE

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("crag.k must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("crag.threshold must be in [0, 1]")
        if self.grader not in ("offline", "llm"):
            raise ConfigError(f"crag.grader must be offline or llm, got {self.grader!r}")
        if self.mode not in (RAW_CODE, AST_DESCRIPTION):
            raise ConfigError(f"crag.mode must be raw_code or ast_description, got {self.mode!r}")


@dataclass(frozen=True)
class PromptSettings:
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    few_shot_path: str = ""

    def __post_init__(self) -> None:
        if self.context_budget <= 0:
            raise ConfigError("prompt.context_budget must be positive")


@dataclass(frozen=True)
class IngestSettings:
    workdir: str = ""
    snippet_budget: int = DEFAULT_SNIPPET_BUDGET

    def __post_init__(self) -> None:
        if self.snippet_budget <= 0:
            raise ConfigError("ingest.snippet_budget must be positive")


@dataclass(frozen=True)
class AppConfig:
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    crag: CragSettings = field(default_factory=CragSettings)
    prompt: PromptSettings = field(default_factory=PromptSettings)
    ingest: IngestSettings = field(default_factory=IngestSettings)
    kb_paths: tuple[str, ...] = ()
    manifest_path: str = ""
    seed: int = 0
    jobs: int = 0  # 0 = logical CPU count

    def fingerprint(self) -> str:
        # jobs is execution parallelism, not semantics: results must be
        # byte-identical across --jobs values, so it stays out of the hash
        payload = asdict(self)
        payload.pop("jobs")
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


_SECTION_TYPES = {
    "provider": ProviderSettings,
    "embedding": EmbeddingSettings,
    "crag": CragSettings,
    "prompt": PromptSettings,
    "ingest": IngestSettings,
}

_SCALAR_KEYS = {"kb_paths", "manifest_path", "seed", "jobs"}


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys in section {name!r}: {sorted(unknown)}")
    if name == "provider" and "mock_rules" in data:
        data = dict(data)
        rules = data["mock_rules"]
        if not isinstance(rules, list):
            raise ConfigError("provider.mock_rules must be a list")
        data["mock_rules"] = tuple(
            MockRule(str(r["contains"]), str(r["response"])) for r in rules
        )
    try:
        return cls(**data)
    except TypeError as err:
        raise ConfigError(f"bad config section {name!r}: {err}") from err


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> AppConfig:
    """Load, validate, and freeze the configuration.

    ``overrides`` is a flat mapping of dotted keys (e.g. ``crag.threshold``)
    applied after the file, the CLI feeds flag/env values through it.
    """
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        data = loaded

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            section, key = dotted.split(".", 1)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"config section {section!r} must be a mapping")
            data[section][key] = value
        else:
            data[dotted] = value

    unknown = set(data) - set(_SECTION_TYPES) - _SCALAR_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        section_data = data.get(name, {})
        if not isinstance(section_data, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        sections[name] = _build_section(name, cls, section_data)

    kb_paths = data.get("kb_paths", ())
    if isinstance(kb_paths, str):
        kb_paths = (kb_paths,)
    cfg = AppConfig(
        **sections,
        kb_paths=tuple(str(p) for p in kb_paths),
        manifest_path=str(data.get("manifest_path", "")),
        seed=int(data.get("seed", 0)),
        jobs=int(data.get("jobs", 0)),
    )
    _check_paths(cfg)
    return cfg


def _check_paths(cfg: AppConfig) -> None:
    for kb_path in cfg.kb_paths:
        if not Path(kb_path).exists():
            raise ConfigError(f"kb collection file does not exist: {kb_path}")
    if cfg.manifest_path and not Path(cfg.manifest_path).exists():
        raise ConfigError(f"signature manifest does not exist: {cfg.manifest_path}")
    if cfg.prompt.few_shot_path and not Path(cfg.prompt.few_shot_path).exists():
        raise ConfigError(f"few-shot file does not exist: {cfg.prompt.few_shot_path}")
    if cfg.ingest.workdir and not Path(cfg.ingest.workdir).exists():
        raise ConfigError(f"ingest workdir does not exist: {cfg.ingest.workdir}")
