"""Multi-turn chat interface to a multimodal LLM endpoint.

Two interchangeable clients expose ``chat(history) -> assistant text``:

* :class:`HttpChatClient` speaks chat-completions-style JSON — a ``messages``
  array whose user-message content is a list of parts, images inline as
  base64 PNG data URIs. Transport failures and 429/5xx responses retry with
  exponential jittered backoff up to ``max_retries``; other 4xx never retry
  (401/403 raise :class:`~fastools.errors.AuthError`). The auth token is
  read from an environment variable at request time — never from config
  files — and requests are sent unauthenticated when the variable is unset
  (keyless local endpoints).
* :class:`ScriptedClient` replays canned completions in order and records
  every request history verbatim, so orchestration tests are deterministic
  and offline.

Both share the Message/part model: a history starts with exactly one system
message and alternates user/assistant; image parts may appear only in user
messages. ``chat`` never mutates its input.

A token-bucket :class:`RateLimiter` (requests per minute) can be attached to
the HTTP client; concurrent annotation workers then share one admission
queue. Clock and sleep are injectable for tests.
"""

from __future__ import annotations

import base64
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, Union

import requests

from .errors import AuthError, ProtocolError, ScriptExhausted, TransportError
from .imaging import Raster, encode_png_bytes
from .trajectory import ImagePart, Part, TextPart

__all__ = [
    "Message",
    "ClientConfig",
    "ChatClient",
    "HttpChatClient",
    "ScriptedClient",
    "RateLimiter",
    "scripted_mock",
    "user_message",
    "system_message",
    "assistant_message",
]

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("a message needs at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in parts):
            raise ValueError("image parts are only allowed in user messages")
        object.__setattr__(self, "parts", parts)

    def text(self) -> str:
        """All text parts joined by newlines (images skipped)."""
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


def system_message(text: str) -> Message:
    return Message("system", (TextPart(text),))


def user_message(parts: Sequence[Part]) -> Message:
    return Message("user", tuple(parts))


def assistant_message(text: str) -> Message:
    return Message("assistant", (TextPart(text),))


def validate_history(history: Sequence[Message]) -> None:
    """Exactly one system message first, then strictly alternating user/assistant."""
    if not history or history[0].role != "system":
        raise ValueError("history must start with a system message")
    expected = "user"
    for msg in history[1:]:
        if msg.role == "system":
            raise ValueError("only one system message is allowed")
        if msg.role != expected:
            raise ValueError(f"expected a {expected} message, got {msg.role}")
        expected = "assistant" if expected == "user" else "user"


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str
    auth_env: str = "FASTOOLS_API_KEY"
    model: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    #: Decoding temperature passthrough. None defers to the context default:
    #: the request payload falls back to 1.0 (rollout default) and the
    #: annotation CLI constructs its client with 0.3.
    temperature: float | None = None
    rate_limit_per_minute: float | None = None
    extra_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


class ChatClient(Protocol):
    def chat(self, history: Sequence[Message]) -> str:  # pragma: no cover
        ...


class RateLimiter:
    """Token bucket admitting ``per_minute`` requests/minute (burst = capacity)."""

    def __init__(
        self,
        per_minute: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if per_minute <= 0:
            raise ValueError("per_minute must be > 0")
        self._rate = per_minute / 60.0
        self._capacity = capacity if capacity is not None else max(1.0, per_minute / 60.0)
        self._tokens = self._capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        """Block until one request token is available."""
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)


def _part_to_wire(part: Part) -> dict:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    payload = base64.b64encode(encode_png_bytes(part.image)).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{payload}"}}


def history_to_wire(history: Sequence[Message]) -> list[dict]:
    return [{"role": m.role, "content": [_part_to_wire(p) for p in m.parts]} for m in history]


#: transport(url, payload_json, headers, timeout) -> (status_code, body_object)
Transport = Callable[[str, dict, dict, float], tuple[int, object]]


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, object]:
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = resp.text
    return resp.status_code, body


class HttpChatClient:
    """Chat-completions client with bounded retries and optional rate limiting.

    ``transport``, ``sleep``, and ``rng`` are injectable so fault injection
    and backoff timing are testable without sockets or real clocks.
    """

    def __init__(
        self,
        cfg: ClientConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        rate_limiter: RateLimiter | None = None,
    ):
        self.cfg = cfg
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._rng = rng or random.Random()
        if rate_limiter is None and cfg.rate_limit_per_minute:
            rate_limiter = RateLimiter(cfg.rate_limit_per_minute)
        self._limiter = rate_limiter

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.cfg.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _payload(self, history: Sequence[Message]) -> dict:
        payload: dict = {
            "messages": history_to_wire(history),
            "temperature": 1.0 if self.cfg.temperature is None else self.cfg.temperature,
        }
        if self.cfg.model is not None:
            payload["model"] = self.cfg.model
        payload.update(self.cfg.extra_params)
        return payload

    @staticmethod
    def _extract_text(body: object) -> str:
        if not isinstance(body, dict):
            raise ProtocolError(f"response body is not a JSON object: {type(body).__name__}")
        try:
            choices = body["choices"]
            content = choices[0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"response missing choices[0].message.content: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError(f"completion content is not a string: {type(content).__name__}")
        return content

    def chat(self, history: Sequence[Message]) -> str:
        validate_history(history)
        payload = self._payload(history)
        attempts = self.cfg.max_retries + 1
        last_failure = "no attempt made"
        for attempt in range(attempts):
            if self._limiter is not None:
                self._limiter.acquire()
            try:
                status, body = self._transport(
                    self.cfg.endpoint, payload, self._headers(), self.cfg.timeout
                )
            except (ConnectionError, OSError) as exc:
                last_failure = f"transport failure: {exc}"
            else:
                if status == 200:
                    return self._extract_text(body)
                if status in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {status})")
                if status == 429 or 500 <= status < 600:
                    last_failure = f"HTTP {status}"
                else:
                    raise TransportError(f"HTTP {status} is not retryable: {body!r}")
            if attempt < attempts - 1:
                backoff = self.cfg.backoff_base * (2.0**attempt)
                backoff += self._rng.uniform(0.0, self.cfg.backoff_base)
                self._sleep(backoff)
        raise TransportError(f"gave up after {attempts} attempts; last failure: {last_failure}")


class ScriptedClient:
    """Deterministic test double: replays ``script`` in order, records requests."""

    def __init__(self, script: Sequence[str]):
        if not script:
            raise ValueError("scripted client needs a non-empty script")
        self._script = list(script)
        self._cursor = 0
        self.requests: list[tuple[Message, ...]] = []

    @property
    def remaining(self) -> int:
        return len(self._script) - self._cursor

    def chat(self, history: Sequence[Message]) -> str:
        validate_history(history)
        self.requests.append(tuple(history))
        if self._cursor >= len(self._script):
            raise ScriptExhausted(
                f"script exhausted after {len(self._script)} completions"
            )
        completion = self._script[self._cursor]
        self._cursor += 1
        return completion


def scripted_mock(script: Sequence[str]) -> ScriptedClient:
    """Factory matching the module interface name."""
    return ScriptedClient(script)


class ScriptBook:
    """Per-sample, per-attempt scripts for offline pipeline runs.

    Shape: ``{"default": {"1": [...], "2": [...]}, "samples": {<sample_id>:
    {"1": [...], ...}}}``. A sample's entry wins over the default; a missing
    attempt key falls back to attempt "1". Each lookup yields a *fresh*
    ScriptedClient.
    """

    def __init__(self, default: dict[str, list[str]] | None = None,
                 samples: dict[str, dict[str, list[str]]] | None = None):
        self.default = default or {}
        self.samples = samples or {}

    @classmethod
    def from_obj(cls, obj: dict) -> "ScriptBook":
        if not isinstance(obj, dict):
            raise ValueError("script book must be a JSON object")
        unknown = set(obj) - {"default", "samples"}
        if unknown:
            raise ValueError(f"unknown script book keys {sorted(unknown)}")
        return cls(default=obj.get("default"), samples=obj.get("samples"))

    def script_for(self, sample_id: str, attempt: int) -> list[str]:
        table = self.samples.get(sample_id, self.default)
        key = str(attempt)
        lines = table.get(key)
        if lines is None:
            lines = table.get("1")
        if lines is None:
            raise ValueError(f"no script for sample {sample_id!r} attempt {attempt}")
        return list(lines)

    def client_factory(self) -> Callable[[str, int], ScriptedClient]:
        def factory(sample_id: str, attempt: int) -> ScriptedClient:
            return ScriptedClient(self.script_for(sample_id, attempt))

        return factory
