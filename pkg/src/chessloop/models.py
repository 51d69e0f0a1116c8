"""Text-generating model endpoints: HTTP completion APIs, scripted queues, engines."""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Protocol

import requests

from .board import parse_fen
from .engine import EngineConfig, EngineLimits, EngineSession, GROUND_TRUTH_LIMITS, open_session
from .parsing import RawResponse

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 409, 425, 429, 500, 502, 503, 504})
FEN_LINE_RE = re.compile(r"^FEN: (.+)$", re.MULTILINE)


class ModelError(RuntimeError):
    """The endpoint could not produce a response."""


class TransportError(ModelError):
    pass


class AuthError(ModelError):
    pass


class ScriptExhausted(ModelError):
    """A scripted model ran out of responses; the test script is too short."""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 64
    stop: tuple[str, ...] = ("\n",)
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens,
                "stop": list(self.stop), "seed": self.seed}


class ModelEndpoint(Protocol):
    def complete(self, prompt: str, params: GenerationParams) -> RawResponse:
        ...

    def describe(self) -> dict:
        ...


def complete(endpoint: ModelEndpoint, prompt: str, params: GenerationParams) -> RawResponse:
    return endpoint.complete(prompt, params)


class ScriptedModel:
    """Returns canned responses in order, ignoring the prompt."""

    def __init__(self, responses: Iterable[str], token_usage: Optional[Iterable[Optional[int]]] = None) -> None:
        self._responses = deque(responses)
        self._usage = deque(token_usage) if token_usage is not None else None
        self.prompts: list[str] = []

    def complete(self, prompt: str, params: GenerationParams) -> RawResponse:
        if not self._responses:
            raise ScriptExhausted("scripted model has no responses left")
        self.prompts.append(prompt)
        text = self._responses.popleft()
        usage = self._usage.popleft() if self._usage else None
        return RawResponse(text=text, token_usage=usage, latency=0.0)

    @property
    def remaining(self) -> int:
        return len(self._responses)

    def describe(self) -> dict:
        return {"kind": "scripted", "remaining": len(self._responses)}


class EngineAsModel:
    """Answers a prompt with the engine's best move for the FEN it contains."""

    def __init__(
        self,
        config: EngineConfig,
        limits: EngineLimits = GROUND_TRUTH_LIMITS,
        session: Optional[EngineSession] = None,
    ) -> None:
        self.config = config
        self.limits = limits
        self._session = session
        self._owns_session = session is None

    @property
    def session(self) -> EngineSession:
        if self._session is None:
            self._session = open_session(self.config)
        return self._session

    def complete(self, prompt: str, params: GenerationParams) -> RawResponse:
        m = FEN_LINE_RE.search(prompt)
        if not m:
            return RawResponse(text="", latency=0.0)
        start = time.monotonic()
        move = self.session.best_move(parse_fen(m.group(1).strip()), self.limits)
        return RawResponse(text=move.uci(), latency=time.monotonic() - start)

    def close(self) -> None:
        if self._owns_session and self._session is not None:
            self._session.close()
            self._session = None

    def describe(self) -> dict:
        return {"kind": "engine", "engine": self.config.to_dict(), "limits": self.limits.to_dict()}


def _dig(data: Any, path: str) -> Any:
    """Follow a dotted path such as ``choices.0.text`` through JSON data."""
    for part in path.split("."):
        if isinstance(data, list):
            data = data[int(part)]
        else:
            data = data[part]
    return data


@dataclass
class HttpCompletionModel:
    """POSTs ``{model, prompt, temperature, max_tokens, stop}`` to a completion API.

    The bearer token is read from the environment variable named by
    ``auth_env`` at request time and never stored on the object.
    """

    base_url: str
    model: str
    path: str = "/v1/completions"
    auth_env: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0
    text_field: str = "choices.0.text"
    usage_field: Optional[str] = "usage.completion_tokens"
    prompt_prefix: str = ""
    prompt_suffix: str = ""
    max_concurrency: int = 4
    extra_body: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        self._limiter = threading.BoundedSemaphore(self.max_concurrency)
        self._http = requests.Session()

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.path.lstrip("/")

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if not token:
                raise AuthError(f"environment variable {self.auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def request_body(self, prompt: str, params: GenerationParams) -> dict:
        body = {
            "model": self.model,
            "prompt": self.prompt_prefix + prompt + self.prompt_suffix,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "stop": list(params.stop),
        }
        if params.seed is not None:
            body["seed"] = params.seed
        body.update(self.extra_body)
        return body

    def complete(self, prompt: str, params: GenerationParams) -> RawResponse:
        body = self.request_body(prompt, params)
        headers = self._headers()
        start = time.monotonic()
        last_error: Optional[str] = None
        with self._limiter:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._http.post(self.url, json=body, headers=headers, timeout=self.timeout)
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    log.warning("completion request failed (attempt %d): %s", attempt + 1, last_error)
                    continue
                if resp.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials ({resp.status_code})")
                if resp.status_code in RETRYABLE_STATUS:
                    last_error = f"HTTP {resp.status_code}"
                    log.warning("completion request failed (attempt %d): %s", attempt + 1, last_error)
                    continue
                if resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    payload = resp.json()
                    text = _dig(payload, self.text_field)
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise TransportError(f"unexpected response shape: {exc}") from exc
                usage = None
                if self.usage_field:
                    try:
                        usage = int(_dig(payload, self.usage_field))
                    except (KeyError, IndexError, TypeError, ValueError):
                        usage = None
                return RawResponse(
                    text=str(text) if text is not None else "",
                    token_usage=usage,
                    latency=time.monotonic() - start,
                    retries=attempt,
                )
        raise TransportError(f"gave up after {self.max_retries + 1} attempts: {last_error}")

    def describe(self) -> dict:
        return {
            "kind": "http",
            "base_url": self.base_url,
            "path": self.path,
            "model": self.model,
            "auth_env": self.auth_env,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "text_field": self.text_field,
            "usage_field": self.usage_field,
        }

    @classmethod
    def from_config(cls, data: Mapping[str, Any]) -> "HttpCompletionModel":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - allowed - {"kind"}
        if unknown:
            raise ValueError(f"unknown endpoint settings: {sorted(unknown)}")
        if "token" in data or "api_key" in data:
            raise ValueError("secrets belong in the environment, not the endpoint config")
        return cls(**{k: v for k, v in data.items() if k in allowed})
