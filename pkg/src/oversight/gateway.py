"""Chat-completion access for the five model roles.

One real backend speaks the common wire format over HTTP ({model, messages[],
temperature, max_tokens} -> choices[0].message.content); a family of scripted
backends makes every loop in the system runnable deterministically without
network access. The gateway itself never alters message content.
"""

from __future__ import annotations

import random
import re
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol

import requests

__all__ = [
    "MODEL_ROLES",
    "ModelParams",
    "Usage",
    "ChatExchange",
    "GatewayError",
    "TransportError",
    "BackendRefusal",
    "ScriptExhausted",
    "Backend",
    "approx_usage",
    "HttpBackend",
    "ScriptRule",
    "ScriptedBackend",
    "SequenceBackend",
    "StaticBackend",
    "EchoBackend",
    "Gateway",
    "default_params",
]

MODEL_ROLES = ("interaction_policy", "tree_updater", "doc_generator", "user_sim", "judge")

# Dialogue roles sample for variety; structured-output roles stay greedy.
_DEFAULT_TEMPERATURE = {
    "interaction_policy": 0.7,
    "user_sim": 0.7,
    "tree_updater": 0.0,
    "doc_generator": 0.0,
    "judge": 0.0,
}

MAX_RETRIES = 3


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    pass


class BackendRefusal(GatewayError):
    """HTTP 4xx: the provider rejected the request; body attached, no retry."""


class ScriptExhausted(GatewayError):
    pass


@dataclass(frozen=True)
class ModelParams:
    temperature: float = 0.0
    max_tokens: int = 4096
    timeout: float = 120.0


def default_params(model_role: str) -> ModelParams:
    if model_role not in MODEL_ROLES:
        raise ValueError(f"unknown model role {model_role!r}")
    return ModelParams(temperature=_DEFAULT_TEMPERATURE[model_role])


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class ChatExchange:
    model_role: str
    messages: tuple[dict, ...]
    params: ModelParams
    response: str
    usage: Usage
    latency_ms: float


def _validate_messages(messages: list[dict]) -> None:
    if not messages:
        raise ValueError("messages must be nonempty")
    for m in messages:
        if m.get("role") not in ("system", "user", "assistant"):
            raise ValueError(f"bad message role {m.get('role')!r}")
        if not isinstance(m.get("content"), str):
            raise ValueError("message content must be a string")


def approx_usage(messages: list[dict], response: str) -> Usage:
    # Deterministic stand-in used by offline backends.
    return Usage(
        prompt_tokens=sum(len(m["content"].split()) for m in messages),
        completion_tokens=len(response.split()),
    )


class Backend(Protocol):
    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        ...


class HttpBackend:
    """OpenAI-compatible chat completions over HTTP with bounded retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        *,
        max_retries: int = MAX_RETRIES,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.session = session or requests.Session()
        self._sleep = sleep

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        url = f"{self.base_url}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        deadline = time.monotonic() + (self.max_retries + 1) * params.timeout
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            try:
                resp = self.session.post(
                    url, json=body, headers=headers, timeout=min(params.timeout, remaining))
            except requests.RequestException as exc:
                last_error = exc
            else:
                if 400 <= resp.status_code < 500:
                    raise BackendRefusal(f"HTTP {resp.status_code}: {resp.text[:2000]}")
                if resp.status_code >= 500:
                    last_error = TransportError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                else:
                    return self._parse(resp)
            if attempt < self.max_retries:
                backoff = min(0.5 * 2**attempt, 8.0) * (1 + random.random() * 0.1)
                self._sleep(min(backoff, max(0.0, deadline - time.monotonic())))
        raise TransportError(f"gave up after {self.max_retries + 1} attempts: {last_error}")

    @staticmethod
    def _parse(resp: requests.Response) -> tuple[str, Usage]:
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        usage_raw = payload.get("usage") or {}
        usage = Usage(
            prompt_tokens=int(usage_raw.get("prompt_tokens", 0)),
            completion_tokens=int(usage_raw.get("completion_tokens", 0)),
        )
        return text, usage


@dataclass
class ScriptRule:
    """role + pattern over the last user message; multiplicity None = unlimited."""

    model_role: str
    pattern: str | re.Pattern
    response: str
    multiplicity: int | None = 1
    remaining: int | None = field(init=False, default=None)

    def __post_init__(self):
        self.remaining = self.multiplicity

    def matches(self, model_role: str, probe: str) -> bool:
        if self.model_role != model_role:
            return False
        if self.remaining is not None and self.remaining <= 0:
            return False
        if isinstance(self.pattern, re.Pattern):
            return bool(self.pattern.search(probe))
        return self.pattern in probe

    def consume(self) -> str:
        if self.remaining is not None:
            self.remaining -= 1
        return self.response


def last_user_content(messages: list[dict]) -> str:
    for m in reversed(messages):
        if m["role"] == "user":
            return m["content"]
    return ""


class ScriptedBackend:
    """Ordered rule list; first live match wins. strict=True raises on no match."""

    def __init__(self, rules: list[ScriptRule], *, strict: bool = True,
                 fallback: str = ""):
        self.rules = rules
        self.strict = strict
        self.fallback = fallback

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        probe = last_user_content(messages)
        for rule in self.rules:
            if rule.matches(model_role, probe):
                text = rule.consume()
                return text, approx_usage(messages, text)
        if self.strict:
            raise ScriptExhausted(
                f"no scripted response for role={model_role} probe={probe[:120]!r}")
        return self.fallback, approx_usage(messages, self.fallback)


class SequenceBackend:
    """Plays back per-role FIFO queues; used for transcript replay."""

    def __init__(self, queues: dict[str, list[str]]):
        self.queues = {role: deque(items) for role, items in queues.items()}

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        queue = self.queues.get(model_role)
        if not queue:
            raise ScriptExhausted(f"no queued response left for role={model_role}")
        text = queue.popleft()
        return text, approx_usage(messages, text)


class StaticBackend:
    def __init__(self, response: str):
        self.response = response

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        return self.response, approx_usage(messages, self.response)


class EchoBackend:
    """Returns the last message content verbatim; handy as a document generator."""

    def complete(self, model_role: str, messages: list[dict], params: ModelParams) -> tuple[str, Usage]:
        text = messages[-1]["content"]
        return text, approx_usage(messages, text)


class Gateway:
    """Routes each model role to its backend and stamps exchanges with timing.

    recorder, when set, receives every ChatExchange right after completion;
    the engine wires this to the session transcript. clock is injectable so
    deterministic runs can zero out timing fields.
    """

    def __init__(
        self,
        backends: dict[str, Backend],
        *,
        params: dict[str, ModelParams] | None = None,
        recorder: Callable[[ChatExchange], None] | None = None,
        clock: Callable[[], float] = time.time,
    ):
        unknown = set(backends) - set(MODEL_ROLES)
        if unknown:
            raise ValueError(f"unknown model roles: {sorted(unknown)}")
        self.backends = backends
        self.params = params or {}
        self.recorder = recorder
        self.clock = clock

    def complete(
        self,
        model_role: str,
        messages: list[dict],
        *,
        temperature: float | None = None,
        max_tokens: int | None = None,
    ) -> ChatExchange:
        if model_role not in self.backends:
            raise ValueError(f"no backend configured for role {model_role!r}")
        _validate_messages(messages)
        params = self.params.get(model_role, default_params(model_role))
        if temperature is not None or max_tokens is not None:
            params = ModelParams(
                temperature=params.temperature if temperature is None else temperature,
                max_tokens=params.max_tokens if max_tokens is None else max_tokens,
                timeout=params.timeout,
            )
        started = self.clock()
        text, usage = self.backends[model_role].complete(model_role, messages, params)
        exchange = ChatExchange(
            model_role=model_role,
            messages=tuple(dict(m) for m in messages),
            params=params,
            response=text,
            usage=usage,
            latency_ms=max(0.0, (self.clock() - started) * 1000.0),
        )
        if self.recorder is not None:
            self.recorder(exchange)
        return exchange
