"""Chat-completion backends behind one ``generate`` call.

``HttpBackend`` speaks the OpenAI-compatible ``/v1/chat/completions``
protocol. ``ScriptedBackend`` replays fixture responses keyed by prompt
pattern and sample index, so whole pipelines can run offline and
reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class InvalidRequest(ValueError):
    pass


class GatewayError(RuntimeError):
    retryable = False


class TransportError(GatewayError):
    retryable = True

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (attempt {attempts})")
        self.attempts = attempts


class HTTPStatusError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body_excerpt = body[:200]
        self.retryable = status == 429 or status >= 500


class FixtureMiss(GatewayError):
    def __init__(self, prompt: str):
        self.prompt_hash = prompt_hash(prompt)
        super().__init__(f"no fixture matches prompt {self.prompt_hash}")


class RetryExhausted(GatewayError):
    def __init__(self, history: list[str]):
        super().__init__(f"gave up after {len(history)} attempts: {history[-1]}")
        self.history = history
        self.attempts = len(history)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class GenRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    n: int = 1
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        msgs = tuple(m if isinstance(m, Message) else Message(**m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs:
            raise InvalidRequest("messages must be non-empty")
        if any(m.role not in ROLES for m in msgs):
            raise InvalidRequest(f"roles must be one of {ROLES}")
        if msgs[-1].role != "user":
            raise InvalidRequest("last message must have role 'user'")
        if self.temperature < 0:
            raise InvalidRequest("temperature must be >= 0")
        if self.n < 1:
            raise InvalidRequest(f"n must be >= 1, got {self.n}")
        if self.max_tokens < 1:
            raise InvalidRequest("max_tokens must be >= 1")

    @classmethod
    def user(cls, model: str, prompt: str, **kwargs: Any) -> "GenRequest":
        return cls(model, (Message("user", prompt),), **kwargs)

    @property
    def prompt(self) -> str:
        return self.messages[-1].content


@dataclass(frozen=True)
class GenResponse:
    texts: tuple[str, ...]
    backend_id: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class Backend(Protocol):
    backend_id: str

    def generate(self, req: GenRequest) -> GenResponse: ...


def generate(backend: Backend, req: GenRequest) -> GenResponse:
    resp = backend.generate(req)
    if len(resp.texts) != req.n:
        raise GatewayError(f"backend {resp.backend_id} returned {len(resp.texts)} texts, expected {req.n}")
    return resp


def wire_body(req: GenRequest) -> dict[str, Any]:
    return {
        "model": req.model,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "n": req.n,
        "max_tokens": req.max_tokens,
    }


class HttpBackend:
    """Client for an OpenAI-compatible chat-completions server."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        api_key_header: str = "Authorization",
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.backend_id = f"http:{self.base_url}"
        headers = {"Content-Type": "application/json"}
        if api_key:
            value = f"Bearer {api_key}" if api_key_header.lower() == "authorization" else api_key
            headers[api_key_header] = value
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        try:
            r = self._client.post(f"{self.base_url}/v1/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if not 200 <= r.status_code < 300:
            raise HTTPStatusError(r.status_code, r.text)
        try:
            return r.json()
        except ValueError:
            raise GatewayError(f"response is not JSON: {r.text[:200]}") from None

    def generate(self, req: GenRequest) -> GenResponse:
        texts: list[str] = []
        prompt_tokens = completion_tokens = 0
        # some servers ignore n > 1; top up with further requests
        while len(texts) < req.n:
            body = wire_body(req)
            body["n"] = req.n - len(texts)
            data = self._post(body)
            try:
                got = [c["message"]["content"] or "" for c in data["choices"]]
            except (KeyError, TypeError) as exc:
                raise GatewayError(f"malformed completion payload: missing {exc}") from None
            if not got:
                raise GatewayError("server returned no choices")
            texts.extend(got[: req.n - len(texts)])
            usage = data.get("usage") or {}
            prompt_tokens += int(usage.get("prompt_tokens", 0))
            completion_tokens += int(usage.get("completion_tokens", 0))
        return GenResponse(tuple(texts), self.backend_id, prompt_tokens, completion_tokens)


@dataclass
class FixtureRule:
    match: str
    responses: list[str]
    _regex: re.Pattern | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.responses:
            raise ValueError(f"fixture {self.match!r} has no responses")
        try:
            self._regex = re.compile(self.match, re.S)
        except re.error:
            self._regex = None

    def hits(self, prompt: str) -> bool:
        if self.match in prompt:
            return True
        return self._regex is not None and self._regex.search(prompt) is not None


class ScriptedBackend:
    """Deterministic mock: first matching rule wins, sample i gets
    ``responses[i % len(responses)]``.

    A rule's ``match`` is tried as a plain substring of the last user
    message, then as a regular expression. Every request is appended to
    ``calls`` for later assertions.
    """

    def __init__(self, rules: Iterable[FixtureRule], backend_id: str = "scripted"):
        self.rules = list(rules)
        self.backend_id = backend_id
        self.calls: list[GenRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Sequence[str] | str]], **kw: Any) -> "ScriptedBackend":
        rules = [FixtureRule(m, [r] if isinstance(r, str) else list(r)) for m, r in pairs]
        return cls(rules, **kw)

    @classmethod
    def from_jsonl(cls, path: str | Path, **kw: Any) -> "ScriptedBackend":
        rules = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    rules.append(FixtureRule(obj["match"], list(obj["responses"])))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad fixture line ({exc})") from None
        kw.setdefault("backend_id", f"scripted:{Path(path).name}")
        return cls(rules, **kw)

    def generate(self, req: GenRequest) -> GenResponse:
        with self._lock:
            self.calls.append(req)
        prompt = req.prompt
        for rule in self.rules:
            if rule.hits(prompt):
                texts = tuple(rule.responses[i % len(rule.responses)] for i in range(req.n))
                return GenResponse(
                    texts,
                    self.backend_id,
                    prompt_tokens=sum(len(m.content.split()) for m in req.messages),
                    completion_tokens=sum(len(t.split()) for t in texts),
                )
        raise FixtureMiss(prompt)


class RetryingBackend:
    def __init__(
        self,
        inner: Backend,
        max_attempts: int = 3,
        backoff_ms: int = 500,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.inner = inner
        self.backend_id = inner.backend_id
        self.max_attempts = max_attempts
        self.backoff_ms = backoff_ms
        self._sleep = sleep

    def generate(self, req: GenRequest) -> GenResponse:
        history: list[str] = []
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.inner.generate(req)
            except GatewayError as exc:
                if not exc.retryable:
                    raise
                history.append(f"attempt {attempt}: {exc}")
                logger.warning("%s failed (%s)", self.backend_id, history[-1])
                if attempt < self.max_attempts and self.backoff_ms > 0:
                    self._sleep(self.backoff_ms * 2 ** (attempt - 1) / 1000.0)
        raise RetryExhausted(history)


def with_retry(backend: Backend, max_attempts: int = 3, backoff_ms: int = 500, **kw: Any) -> RetryingBackend:
    return RetryingBackend(backend, max_attempts=max_attempts, backoff_ms=backoff_ms, **kw)


class LimitedBackend:
    """Caps the number of in-flight requests to ``inner``."""

    def __init__(self, inner: Backend, max_parallel: int = 4):
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.inner = inner
        self.backend_id = inner.backend_id
        self._sem = threading.BoundedSemaphore(max_parallel)

    def generate(self, req: GenRequest) -> GenResponse:
        with self._sem:
            return self.inner.generate(req)


def backend_from_config(cfg: Mapping[str, Any], base_dir: Path | None = None) -> Backend:
    """Build a backend from a config section (see leaf.config)."""
    kind = cfg.get("kind", "http")
    if kind == "scripted":
        if not cfg.get("fixtures"):
            raise ValueError("scripted backend needs fixtures")
        path = Path(cfg["fixtures"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        backend: Backend = ScriptedBackend.from_jsonl(path)
    elif kind == "http":
        if not cfg.get("base_url"):
            raise ValueError("http backend needs base_url")
        key = os.environ.get(cfg["api_key_env"]) if cfg.get("api_key_env") else None
        backend = HttpBackend(
            cfg["base_url"],
            key,
            api_key_header=cfg.get("api_key_header", "Authorization"),
            timeout=float(cfg.get("timeout_s", 120.0)),
        )
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    retry = cfg.get("retry", {})
    backend = with_retry(backend, int(retry.get("max_attempts", 3)), int(retry.get("backoff_ms", 500)))
    return LimitedBackend(backend, int(cfg.get("max_parallel", 4)))
