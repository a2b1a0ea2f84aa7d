"""Chat-completion providers: an OpenAI-compatible HTTP client plus record and
replay wrappers for deterministic offline runs."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = frozenset({"system", "user", "assistant"})
API_KEY_ENV = "PEEK_API_KEY"
API_BASE_ENV = "PEEK_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com"


class ProviderError(Exception):
    pass


class TransportError(ProviderError):
    pass


class HTTPStatusError(ProviderError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class ReplayError(ProviderError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        object.__setattr__(self, "messages", tuple(self.messages))

    def body(self) -> dict:
        body: dict = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
        }
        if self.temperature is not None:
            body["temperature"] = self.temperature
        return body


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: Usage | None = None
    attempts: int = 1


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def _norm_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def fingerprint(request: ChatRequest) -> str:
    """SHA-256 over a canonical rendering of the model and messages."""
    doc = {
        "model": request.model,
        "messages": [{"role": m.role, "content": _norm_newlines(m.content)} for m in request.messages],
    }
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class HTTPProvider:
    """Client for ``POST {base}/v1/chat/completions``.

    Transport failures, 429 and 5xx responses are retried with exponential
    backoff up to ``max_attempts`` total attempts.
    """

    RETRY_STATUS = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        client: httpx.Client | None = None,
    ):
        self.api_base = (api_base or os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max(1, max_attempts)
        self.backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    @property
    def url(self) -> str:
        if self.api_base.endswith("/v1"):
            return self.api_base + "/chat/completions"
        return self.api_base + "/v1/chat/completions"

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: ProviderError | None = None
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                self._sleep(self.backoff * 2 ** (attempt - 2))
            try:
                resp = self._client.post(self.url, json=request.body(), headers=headers)
            except httpx.HTTPError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
                logger.warning("attempt %d/%d failed: %s", attempt, self.max_attempts, last)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last = HTTPStatusError(resp.status_code, resp.text)
                logger.warning("attempt %d/%d got HTTP %d", attempt, self.max_attempts, resp.status_code)
                continue
            if not 200 <= resp.status_code < 300:
                raise HTTPStatusError(resp.status_code, resp.text)
            return self._parse(resp, attempt)
        assert last is not None
        raise last

    @staticmethod
    def _parse(resp: httpx.Response, attempts: int) -> ChatResponse:
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected completion payload: {resp.text[:500]}") from exc
        if not isinstance(content, str):
            raise ProviderError("completion has no text content")
        usage = None
        raw = data.get("usage") or {}
        if "prompt_tokens" in raw and "completion_tokens" in raw:
            usage = Usage(int(raw["prompt_tokens"]), int(raw["completion_tokens"]))
        return ChatResponse(content, usage, attempts)

    def close(self) -> None:
        self._client.close()


@dataclass
class FixtureEntry:
    fingerprint: str
    response: str


def read_fixture(path: str | Path) -> list[FixtureEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                entries.append(FixtureEntry(row["fingerprint"], row["response"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ReplayError(f"{path}:{lineno}: bad fixture line ({exc})") from None
    return entries


class ReplayProvider:
    """Serves canned responses in order, checking each request's fingerprint.

    Not thread-safe by design: a fixture is one ordered conversation.
    """

    def __init__(self, entries: Iterable[FixtureEntry] | str | Path):
        if isinstance(entries, (str, Path)):
            entries = read_fixture(entries)
        self.entries: list[FixtureEntry] = list(entries)
        self.position = 0

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.exhausted:
            raise ReplayError(f"replay fixture exhausted after {len(self.entries)} entries")
        entry = self.entries[self.position]
        got = fingerprint(request)
        if got != entry.fingerprint:
            raise ReplayError(
                f"fixture fingerprint mismatch at entry {self.position}: "
                f"expected {entry.fingerprint}, got {got}"
            )
        self.position += 1
        return ChatResponse(entry.response)


class RecordingProvider:
    """Forwards to a live provider and appends every exchange to a JSONL fixture."""

    def __init__(self, live: Provider, sink: str | Path):
        self.live = live
        self.sink = Path(sink)
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        return record(request, self.live, self.sink, self._lock)


def record(request: ChatRequest, live: Provider, sink: str | Path, lock: threading.Lock | None = None) -> ChatResponse:
    resp = live.complete(request)
    line = json.dumps({"fingerprint": fingerprint(request), "response": resp.content}, ensure_ascii=False)
    with lock or threading.Lock():
        with open(sink, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(line + "\n")
    return resp


@dataclass
class ScriptedProvider:
    """Returns queued responses regardless of the request; records every request.

    Used to stand in for a live model when generating fixtures or in tests.
    """

    responses: Sequence[str | Exception] = ()
    requests: list[ChatRequest] = field(default_factory=list)

    def __post_init__(self):
        self._queue = list(self.responses)

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        if not self._queue:
            raise ProviderError("scripted provider has no responses left")
        nxt = self._queue.pop(0)
        if isinstance(nxt, Exception):
            raise nxt
        return ChatResponse(nxt)
