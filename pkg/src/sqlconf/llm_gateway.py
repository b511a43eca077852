"""Chat-completion gateway with a record/replay response cache.

Every request is keyed by the sha256 of its canonical JSON form.  In Record
mode cache misses go to the provider and are appended to a JSONL file; in
Replay mode a miss raises :class:`CacheMiss`, so runs are reproducible offline.
Logprobs stay natural-log on the wire and in the cache; they become linear
probabilities only when :attr:`GenerationResponse.tokens` is read.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

from sqlconf.lexer import TokenRecord

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
DEFAULT_MAX_TOKENS = 512
RETRY_ATTEMPTS = 3
RETRY_BACKOFF = 1.0
LOGPROB_SUM_SLACK = 1e-6
_MIN_PROB = 1e-300


class CacheMiss(KeyError):
    pass


class ProviderError(RuntimeError):
    def __init__(self, message: str, status: int | None = None,
                 retry_after: float | None = None, transient: bool = False):
        super().__init__(message)
        self.status = status
        self.retry_after = retry_after
        self.transient = transient


class Mode(enum.Enum):
    RECORD = "Record"
    REPLAY = "Replay"

    @classmethod
    def parse(cls, text: str) -> Mode:
        for m in cls:
            if m.value.lower() == text.strip().lower():
                return m
        raise ValueError(f"unknown mode {text!r}")


class FinishReason(enum.Enum):
    STOP = "Stop"
    LENGTH = "Length"
    ERROR = "Error"

    @classmethod
    def from_wire(cls, value: str | None) -> FinishReason:
        return {"stop": cls.STOP, "length": cls.LENGTH}.get((value or "").lower(), cls.ERROR)


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    top_k_logprobs: int = 0
    max_tokens: int = DEFAULT_MAX_TOKENS
    sample_index: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")
        if self.top_k_logprobs < 0:
            raise ValueError("top_k_logprobs must be >= 0")
        object.__setattr__(self, "messages", tuple((str(r), str(t)) for r, t in self.messages))

    def to_json(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "messages": [[r, t] for r, t in self.messages],
            "temperature": float(self.temperature),
            "top_k_logprobs": int(self.top_k_logprobs),
            "max_tokens": int(self.max_tokens),
            "sample_index": int(self.sample_index),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> GenerationRequest:
        return cls(
            model_id=data["model_id"],
            messages=tuple(tuple(m) for m in data["messages"]),
            temperature=data["temperature"],
            top_k_logprobs=data["top_k_logprobs"],
            max_tokens=data["max_tokens"],
            sample_index=data["sample_index"],
        )

    def key(self) -> str:
        return request_key(self.to_json())


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def request_key(request_json: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(request_json).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class WireToken:
    """A token as providers send it: text, natural-log probability, top alternatives."""

    token: str
    logprob: float
    top_logprobs: tuple[tuple[str, float], ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "token": self.token,
            "logprob": self.logprob,
            "top_logprobs": [{"token": t, "logprob": lp} for t, lp in self.top_logprobs],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> WireToken:
        tops = tuple((c["token"], float(c["logprob"])) for c in data.get("top_logprobs") or ())
        return cls(data["token"], float(data["logprob"]), tops)

    def to_record(self) -> TokenRecord:
        return to_token_record(self)


def _prob(logprob: float) -> float:
    return min(max(math.exp(logprob), _MIN_PROB), 1.0)


def to_token_record(tok: WireToken) -> TokenRecord:
    """Linear-probability view of a wire token.

    Duplicate alternatives keep their largest probability; alternatives are
    scaled down if rounding pushed their total marginally above one.
    """
    chosen = _prob(tok.logprob)
    cands: dict[str, float] = {}
    for text, lp in tok.top_logprobs:
        cands[text] = max(cands.get(text, 0.0), _prob(lp))
    cands[tok.token] = chosen
    total = math.fsum(cands.values())
    if total > 1.0:
        cands = {t: p / total for t, p in cands.items()}
        chosen = cands[tok.token]
    return TokenRecord(tok.token, chosen, tuple(cands.items()))


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    logprobs: tuple[WireToken, ...] = ()
    finish_reason: FinishReason = FinishReason.STOP
    tokens: tuple[TokenRecord, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(to_token_record(t) for t in self.logprobs))

    def to_json(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "finish_reason": self.finish_reason.value,
            "logprobs": [t.to_json() for t in self.logprobs],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> GenerationResponse:
        return cls(
            text=data["text"],
            logprobs=tuple(WireToken.from_json(t) for t in data.get("logprobs") or ()),
            finish_reason=FinishReason(data.get("finish_reason", "Stop")),
        )


class Provider(Protocol):
    def complete(self, req: GenerationRequest) -> GenerationResponse: ...


class CallableProvider:
    """Adapts a plain function into a provider (offline use and tests)."""

    def __init__(self, fn: Callable[[GenerationRequest], GenerationResponse]):
        self.fn = fn

    def complete(self, req: GenerationRequest) -> GenerationResponse:
        return self.fn(req)


def _retry_after(headers: Any) -> float | None:
    value = headers.get("Retry-After") if headers is not None else None
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


class OpenAICompatibleProvider:
    """JSON-over-HTTP chat completions with ``logprobs.top_logprobs``."""

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0,
                 attempts: int = RETRY_ATTEMPTS, backoff: float = RETRY_BACKOFF,
                 sleep: Callable[[float], None] = time.sleep):
        import requests

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.sleep = sleep
        self._session = requests.Session()

    @classmethod
    def from_env(cls, base_url: str | None = None, api_key: str | None = None) -> OpenAICompatibleProvider:
        url = os.environ.get("SQLCONF_BASE_URL") or base_url
        key = os.environ.get("SQLCONF_API_KEY") or os.environ.get("OPENAI_API_KEY") or api_key
        if not url:
            raise ProviderError("no provider base URL configured (SQLCONF_BASE_URL)")
        return cls(url, key)

    def _payload(self, req: GenerationRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": req.model_id,
            "messages": [{"role": r, "content": t} for r, t in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.top_k_logprobs > 0:
            body["logprobs"] = True
            body["top_logprobs"] = req.top_k_logprobs
        return body

    def _post_once(self, req: GenerationRequest) -> GenerationResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session.post(self.url, json=self._payload(req), headers=headers,
                                      timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"request failed: {exc}", transient=True) from exc
        if resp.status_code != 200:
            transient = resp.status_code == 429 or resp.status_code >= 500
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code,
                                _retry_after(resp.headers), transient)
        try:
            return parse_chat_completion(resp.json())
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc

    def complete(self, req: GenerationRequest) -> GenerationResponse:
        delay = self.backoff
        for attempt in range(1, self.attempts + 1):
            try:
                return self._post_once(req)
            except ProviderError as exc:
                if not exc.transient or attempt == self.attempts:
                    raise
                wait = max(delay, exc.retry_after or 0.0)
                log.warning("provider error (%s), retry %d in %.1fs", exc, attempt, wait)
                self.sleep(wait)
                delay *= 2
        raise AssertionError("unreachable")


def parse_chat_completion(payload: dict[str, Any]) -> GenerationResponse:
    choice = payload["choices"][0]
    text = choice["message"]["content"] or ""
    content = (choice.get("logprobs") or {}).get("content") or ()
    return GenerationResponse(
        text=text,
        logprobs=tuple(WireToken.from_json(t) for t in content),
        finish_reason=FinishReason.from_wire(choice.get("finish_reason")),
    )


class ResponseCache:
    """Append-only JSONL store: one ``{key, request, response, timestamp}`` per line.

    Reads are lock-free dictionary lookups; appends are serialized.
    """

    def __init__(self, path: str | Path, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> GenerationResponse | None:
        data = self._entries.get(key)
        return GenerationResponse.from_json(data) if data is not None else None

    def put(self, req: GenerationRequest, resp: GenerationResponse) -> None:
        key = req.key()
        record = {"key": key, "request": req.to_json(), "response": resp.to_json(),
                  "timestamp": self.clock()}
        line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            if key in self._entries:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
            self._entries[key] = record["response"]


class Gateway:
    """Single entry point for generations; safe for concurrent callers."""

    def __init__(self, cache: ResponseCache, mode: Mode = Mode.REPLAY,
                 provider: Provider | None = None, max_in_flight: int = 4):
        if mode is Mode.RECORD and provider is None:
            raise ValueError("Record mode needs a provider")
        self.cache = cache
        self.mode = mode
        self.provider = provider
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        key = req.key()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if self.mode is Mode.REPLAY:
            raise CacheMiss(key)
        with self._slots:
            resp = self.provider.complete(req)
        self.cache.put(req, resp)
        return resp


def verify_cache(path: str | Path) -> list[str]:
    """Integrity problems in a cache file, one message per problem; empty when clean."""
    problems: list[str] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = rec["key"]
                request, response = rec["request"], rec["response"]
                GenerationRequest.from_json(request)
                resp = GenerationResponse.from_json(response)
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"line {lineno}: unreadable record ({exc})")
                continue
            if key != key.lower() or request_key(request) != key:
                problems.append(f"line {lineno}: key does not match request hash")
            if resp.logprobs and "".join(t.token for t in resp.logprobs) != resp.text:
                problems.append(f"line {lineno}: token texts do not concatenate to the response text")
            for i, tok in enumerate(resp.logprobs):
                cands = dict(tok.top_logprobs)
                cands.setdefault(tok.token, tok.logprob)
                total = math.fsum(math.exp(lp) for lp in cands.values())
                if total > 1.0 + LOGPROB_SUM_SLACK:
                    problems.append(f"line {lineno}: token {i} candidate mass {total:.8f} exceeds 1")
    return problems
