"""Uniform access to chat-completion providers, plus a deterministic mock.

The gateway owns retries (exponential backoff with full jitter), the
parallelism bound, and the request log. API keys are reached only through
environment-variable indirection and never logged; the log records a prompt
fingerprint, latency, and outcome per call.
"""
from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .prompts import ChatMessage

BACKOFF_BASE_S = 0.5
BACKOFF_FACTOR = 2.0


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    """Transient transport failure; retried."""


class RateLimited(GatewayError):
    """Provider pushed back (429/5xx); retried."""


class ProviderRejection(GatewayError):
    """4xx-class rejection; never retried."""


class UnscriptedPrompt(GatewayError):
    """The mock had no scripted response and no default."""


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 30.0
    max_retries: int = 3
    max_parallel: int = 4
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


def prompt_fingerprint(messages: Sequence[ChatMessage]) -> str:
    """Stable hash of a message list; the mock keys on it and the log records it."""
    canonical = json.dumps([[m.role, m.content] for m in messages], ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RequestLog:
    """Thread-safe call log, optionally mirrored to a JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.Lock()
        self._path = Path(path) if path else None
        self.entries: list[dict] = []

    def record(self, fingerprint: str, latency_s: float, outcome: str) -> None:
        entry = {"prompt": fingerprint, "latency_s": round(latency_s, 6), "outcome": outcome}
        with self._lock:
            self.entries.append(entry)
            if self._path is not None:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")


class ChatProvider(Protocol):
    def complete(self, messages: Sequence[ChatMessage]) -> str: ...


class MockProvider:
    """Deterministic scripted provider with latency and failure injection.

    Responses resolve in order: exact script entry (keyed by prompt
    fingerprint), then the rule callable, then the default. Identical
    messages always produce identical responses.
    """

    def __init__(
        self,
        script: Mapping[str, str] | None = None,
        *,
        rule: Callable[[Sequence[ChatMessage]], str | None] | None = None,
        default: str | None = None,
        fail_times: int = 0,
        always_fail: bool = False,
        failure: GatewayError | None = None,
        latency_s: float = 0.0,
        clock: Callable[[float], None] = time.sleep,
    ):
        self.script = dict(script or {})
        self.rule = rule
        self.default = default
        self.failure = failure or Timeout("injected failure")
        self.latency_s = latency_s
        self.always_fail = always_fail
        self._clock = clock
        self._lock = threading.Lock()
        self._remaining_failures = fail_times
        self.calls: list[str] = []

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        fingerprint = prompt_fingerprint(messages)
        with self._lock:
            self.calls.append(fingerprint)
            should_fail = self.always_fail or self._remaining_failures > 0
            if self._remaining_failures > 0:
                self._remaining_failures -= 1
        if self.latency_s:
            self._clock(self.latency_s)
        if should_fail:
            raise self.failure
        if fingerprint in self.script:
            return self.script[fingerprint]
        if self.rule is not None:
            answer = self.rule(messages)
            if answer is not None:
                return answer
        if self.default is not None:
            return self.default
        raise UnscriptedPrompt(f"no scripted response for prompt {fingerprint[:12]}")


class HttpProvider:
    """Chat-completions JSON over HTTPS; developer role maps to system."""

    _ROLE_MAP = {"developer": "system", "user": "user"}

    def __init__(self, cfg: ProviderConfig):
        if not cfg.endpoint:
            raise ValueError("http provider requires an endpoint")
        self.cfg = cfg

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        headers = {}
        if self.cfg.api_key_env:
            import os

            key = os.environ.get(self.cfg.api_key_env, "")
            if not key:
                raise ProviderRejection(f"api key env var {self.cfg.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": self._ROLE_MAP[m.role], "content": m.content} for m in messages
            ],
        }
        try:
            resp = requests.post(
                self.cfg.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout_s
            )
        except requests.Timeout as err:
            raise Timeout(f"chat request timed out: {err}") from err
        except requests.RequestException as err:
            raise Timeout(f"chat transport failed: {err}") from err
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RateLimited(f"chat endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderRejection(f"chat endpoint returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError, TypeError) as err:
            raise ProviderRejection(f"malformed chat response: {err}") from err


@dataclass
class Gateway:
    """Retry/backoff, parallelism bound, and logging around one provider."""

    provider: ChatProvider
    cfg: ProviderConfig = field(default_factory=ProviderConfig)
    log: RequestLog = field(default_factory=RequestLog)
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def __post_init__(self) -> None:
        self._semaphore = threading.BoundedSemaphore(self.cfg.max_parallel)

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        fingerprint = prompt_fingerprint(messages)
        attempts = self.cfg.max_retries + 1
        last_error: GatewayError = Timeout("no attempts made")
        for attempt in range(attempts):
            started = time.perf_counter()
            try:
                with self._semaphore:
                    text = self.provider.complete(messages)
            except ProviderRejection:
                self.log.record(fingerprint, time.perf_counter() - started, "rejected")
                raise
            except (Timeout, RateLimited) as err:
                self.log.record(fingerprint, time.perf_counter() - started, "retryable-error")
                last_error = err
            else:
                self.log.record(fingerprint, time.perf_counter() - started, "ok")
                return text
            if attempt < attempts - 1:
                # full jitter: uniform over [0, base * factor^attempt]
                self.sleep(self.rng.uniform(0.0, BACKOFF_BASE_S * BACKOFF_FACTOR**attempt))
        raise last_error


def chat(
    messages: Sequence[ChatMessage],
    cfg: ProviderConfig,
    provider: ChatProvider | None = None,
    **gateway_kwargs,
) -> str:
    """One-shot convenience wrapper building a Gateway around cfg."""
    if provider is None:
        provider = HttpProvider(cfg)
    return Gateway(provider, cfg, **gateway_kwargs).chat(messages)
