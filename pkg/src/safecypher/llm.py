"""Prompt construction and LLM backends.

Backends expose ``complete(prompt: PromptBundle) -> str``.  Three ship here:
:class:`MockBackend` (fixture replies, records every prompt for audits),
:class:`ChatCompletionBackend` (HTTPS JSON chat-completion API) and
:class:`CachingBackend` (content-addressed reply cache around another one).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from .errors import (
    BackendTimeoutError,
    BackendUnavailableError,
    ConfigurationError,
    ParseError,
    TransportError,
)
from .masker import MaskedQuestion

log = logging.getLogger(__name__)

RULES_VERSION = "v1"
RULES_TEXT = resources.files("safecypher").joinpath(f"prompts/cypher_rules_{RULES_VERSION}.txt").read_text(encoding="utf-8")
MOCK_FALLBACK = "MATCH (n) RETURN n.name"


def estimate_tokens(text: str) -> int:
    """Rough token count: characters / 4, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class PromptBundle:
    system_rules: str
    schema_text: str
    masked_question: str
    full_text: str
    token_estimate: int

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.full_text.encode("utf-8")).hexdigest()


def build_prompt(schema_text: str, masked: MaskedQuestion | str, rules: str = RULES_TEXT) -> PromptBundle:
    if not schema_text.strip():
        raise ValueError("schema text must be non-empty")
    question = masked.masked_text if isinstance(masked, MaskedQuestion) else masked
    full = f"{rules.rstrip()}\n\nGraph structure:\n{schema_text}\n\nQuestion: {question}\n"
    return PromptBundle(rules, schema_text, question, full, estimate_tokens(full))


# -- configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class LlmBackendConfig:
    """Where and how to reach a model.  Secrets are referenced, never stored."""

    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-5"
    credential_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    provider: str = "chat"  # "chat" | "mock"
    fixtures: str | None = None
    decoding: Mapping[str, Any] = field(default_factory=lambda: {"temperature": 0})

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.provider not in ("chat", "mock"):
            raise ValueError(f"unknown provider {self.provider!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LlmBackendConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown backend setting(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from None


class Backend(Protocol):
    def complete(self, prompt: PromptBundle) -> str: ...


# -- mock --------------------------------------------------------------------------

class MockBackend:
    """Replies from a fixture map keyed on the exact masked question."""

    def __init__(self, fixtures: Mapping[str, str] | None = None, fallback: str = MOCK_FALLBACK, model: str = "mock"):
        self.fixtures = dict(fixtures or {})
        self.fallback = fallback
        self.model = model
        self.prompts: list[PromptBundle] = []
        self._lock = threading.Lock()

    def complete(self, prompt: PromptBundle) -> str:
        with self._lock:
            self.prompts.append(prompt)
        return self.fixtures.get(prompt.masked_question, self.fallback)

    @property
    def calls(self) -> int:
        return len(self.prompts)


def load_fixtures(path: str | Path) -> MockBackend:
    """Read ``{"fallback": ..., "replies": {question: reply}}``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read mock fixtures: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    replies = doc.get("replies", {})
    if not isinstance(replies, dict):
        raise ParseError("'replies' must map questions to replies", field="replies")
    return MockBackend(replies, doc.get("fallback", MOCK_FALLBACK))


# -- remote ------------------------------------------------------------------------

_TRANSIENT_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class ChatCompletionBackend:
    """POSTs the prompt as a single user message to a chat-completion endpoint."""

    def __init__(self, config: LlmBackendConfig, client=None, sleep: Callable[[float], None] = time.sleep, backoff: float = 0.5):
        self.config = config
        self.model = config.model
        self._client = client
        self._sleep = sleep
        self._backoff = backoff

    def _credential(self) -> str:
        secret = os.environ.get(self.config.credential_env)
        if not secret:
            raise ConfigurationError(f"environment variable {self.config.credential_env} is not set")
        return secret

    def _client_or_new(self):
        if self._client is None:
            import httpx

            self._client = httpx.Client(timeout=self.config.timeout)
        return self._client

    def complete(self, prompt: PromptBundle) -> str:
        import httpx

        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt.full_text}],
            **dict(self.config.decoding),
        }
        headers = {"Authorization": f"Bearer {self._credential()}", "Content-Type": "application/json"}
        client = self._client_or_new()
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self._backoff * 2 ** (attempt - 1))
            try:
                resp = client.post(self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout)
            except httpx.TimeoutException as exc:
                last = BackendTimeoutError(f"request timed out after {self.config.timeout}s")
                last.__cause__ = exc
                log.warning("LLM request timed out (attempt %d)", attempt + 1)
                continue
            except httpx.TransportError as exc:
                last = TransportError(f"cannot reach {self.config.endpoint}: {exc}")
                log.warning("LLM transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code in _TRANSIENT_STATUS:
                last = TransportError(f"HTTP {resp.status_code} from {self.config.endpoint}")
                continue
            if 400 <= resp.status_code < 500:
                raise ConfigurationError(f"HTTP {resp.status_code} from {self.config.endpoint}: {resp.text[:200]}")
            if resp.status_code >= 300:
                raise TransportError(f"HTTP {resp.status_code} from {self.config.endpoint}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"unexpected response body: {exc}") from None
        if isinstance(last, BackendTimeoutError):
            raise last
        raise BackendUnavailableError(
            f"backend unavailable after {self.config.max_retries + 1} attempt(s): {last}"
        ) from last


# -- cache -------------------------------------------------------------------------

class CachingBackend:
    """Stores replies under ``cache_dir`` keyed by a hash of model and prompt."""

    def __init__(self, inner: Backend, cache_dir: str | Path, model: str | None = None):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.model = model or getattr(inner, "model", "unknown")
        self.hits = 0
        self.misses = 0

    def _path(self, prompt: PromptBundle) -> Path:
        key = hashlib.sha256(f"{self.model}\n{prompt.full_text}".encode("utf-8")).hexdigest()
        return self.cache_dir / key[:2] / f"{key}.json"

    def complete(self, prompt: PromptBundle) -> str:
        path = self._path(prompt)
        if path.exists():
            self.hits += 1
            return json.loads(path.read_text(encoding="utf-8"))["reply"]
        self.misses += 1
        reply = self.inner.complete(prompt)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps({"model": self.model, "reply": reply}), encoding="utf-8")
        tmp.replace(path)
        return reply


def make_backend(config: LlmBackendConfig, cache_dir: str | Path | None = None) -> Backend:
    if config.provider == "mock":
        backend = load_fixtures(config.fixtures) if config.fixtures else MockBackend()
    else:
        backend = ChatCompletionBackend(config)
    if cache_dir is not None:
        backend = CachingBackend(backend, cache_dir, config.model)
    return backend


def complete(config: LlmBackendConfig, prompt: PromptBundle) -> str:
    return make_backend(config).complete(prompt)
