"""Chat-completion gateway: role prompts, HTTP provider and a record/replay cache."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import CacheMiss, GatewayError, MissingPlaceholder, ProviderError

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "o3-mini"
MODES = ("live", "replay", "record")

_PLACEHOLDER_RE = re.compile(r"\{\{\s*(\w+)(\?)?\s*\}\}")


class Role(str, Enum):
    CLEANSER = "Cleanser"
    DESCRIBER = "Describer"
    ANALYZER = "Analyzer"
    RELEVANCE_REVIEWER = "RelevanceReviewer"
    COLLISION_REVIEWER = "CollisionReviewer"
    QUERY_REVIEWER = "QueryReviewer"
    ORGANIZER = "Organizer"


_TEMPLATE_FILES = {
    Role.CLEANSER: "cleanser.txt",
    Role.DESCRIBER: "describer.txt",
    Role.ANALYZER: "analyzer.txt",
    Role.RELEVANCE_REVIEWER: "relevance_reviewer.txt",
    Role.COLLISION_REVIEWER: "collision_reviewer.txt",
    Role.QUERY_REVIEWER: "query_reviewer.txt",
    Role.ORGANIZER: "organizer.txt",
}


@dataclass(frozen=True)
class PromptTemplate:
    """Template text with ``{{name}}`` (required) and ``{{name?}}`` (optional) slots."""

    role: Role
    template_text: str

    @property
    def required_placeholders(self) -> frozenset[str]:
        return frozenset(m.group(1) for m in _PLACEHOLDER_RE.finditer(self.template_text) if not m.group(2))

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(m.group(1) for m in _PLACEHOLDER_RE.finditer(self.template_text))

    def render(self, variables: dict[str, str]) -> str:
        for name in sorted(self.required_placeholders):
            if name not in variables or variables[name] is None:
                raise MissingPlaceholder(name)

        def sub(m: re.Match) -> str:
            value = variables.get(m.group(1))
            return "" if value is None else str(value)

        # single pass: substituted values are never rescanned
        return _PLACEHOLDER_RE.sub(sub, self.template_text)


class PromptLibrary:
    """One template per role, plus named text fragments, read from a directory."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self.templates: dict[Role, PromptTemplate] = {}
        for role, fname in _TEMPLATE_FILES.items():
            self.templates[role] = PromptTemplate(role, self._read(fname))
        self._fragments: dict[str, PromptTemplate] = {}

    def _read(self, relpath: str) -> str:
        if self.directory is not None:
            candidate = self.directory / relpath
            if candidate.is_file():
                return candidate.read_text(encoding="utf-8")
        node = resources.files("droidtrace").joinpath("templates")
        for part in relpath.split("/"):
            node = node.joinpath(part)
        return node.read_text(encoding="utf-8")

    def render(self, role: Role | str, variables: dict[str, str]) -> str:
        return self.templates[Role(role)].render(variables)

    def fragment(self, name: str, **variables: str) -> str:
        if name not in self._fragments:
            self._fragments[name] = PromptTemplate(Role.ORGANIZER, self._read(f"fragments/{name}.txt"))
        return self._fragments[name].render(variables).strip()


_default_library: PromptLibrary | None = None


def default_library() -> PromptLibrary:
    global _default_library
    if _default_library is None:
        _default_library = PromptLibrary()
    return _default_library


def render_prompt(role: Role | str, variables: dict[str, str]) -> str:
    return default_library().render(role, variables)


@dataclass(frozen=True)
class CompletionRequest:
    role: Role
    prompt: str
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_tokens: int = 4096


@dataclass
class CompletionResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    cached: bool = False


def cache_key(role: Role | str, model: str, prompt: str) -> str:
    role_name = Role(role).value
    digest = hashlib.sha256()
    for part in (role_name, model, prompt):
        digest.update(part.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayCache:
    """JSON Lines store of completions keyed by ``cache_key``.

    New entries are appended as they are recorded; on load, later lines for
    the same key win.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    self._entries[entry["key"]] = entry
                except (json.JSONDecodeError, KeyError) as exc:
                    raise GatewayError(f"{self.path}:{lineno}: bad cache line: {exc}") from exc

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> dict | None:
        return self._entries.get(key)

    def put(self, key: str, role: Role | str, response: CompletionResponse) -> None:
        entry = {
            "key": key,
            "role": Role(role).value,
            "response": response.text,
            "tokens": {"input": response.input_tokens, "output": response.output_tokens},
        }
        with self._lock:
            self._entries[key] = entry
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")

    def save(self, path: str | Path) -> None:
        """Write a compacted copy, sorted by key."""
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self._entries):
                fh.write(json.dumps(self._entries[key], sort_keys=True, ensure_ascii=False) + "\n")

    def entries(self) -> list[dict]:
        return [self._entries[k] for k in sorted(self._entries)]


class ChatProvider(Protocol):
    def chat(self, request: CompletionRequest) -> CompletionResponse: ...


class HTTPChatProvider:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, base_url: str, api_key: str | None, timeout: float = 120.0,
                 send_temperature: bool = True):
        self.base_url = base_url.rstrip("/")
        self._api_key = api_key
        self.timeout = timeout
        self.send_temperature = send_temperature

    def __repr__(self) -> str:
        return f"HTTPChatProvider(base_url={self.base_url!r})"

    def chat(self, request: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_completion_tokens": request.max_tokens,
        }
        if self.send_temperature:
            payload["temperature"] = request.temperature
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        t0 = time.monotonic()
        try:
            resp = httpx.post(f"{self.base_url}/chat/completions", json=payload,
                              headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ProviderError(None, str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderError(resp.status_code, resp.text[:500])
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError) as exc:
            raise ProviderError(resp.status_code, f"unexpected response body: {exc}") from exc
        usage = body.get("usage") or {}
        return CompletionResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            latency=time.monotonic() - t0,
        )


class CallbackProvider:
    """Adapter turning ``fn(request) -> str`` into a provider; counts calls."""

    def __init__(self, fn: Callable[[CompletionRequest], str]):
        self.fn = fn
        self.calls = 0
        self._lock = threading.Lock()

    def chat(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls += 1
        text = self.fn(request)
        return CompletionResponse(text=text, input_tokens=len(request.prompt.split()),
                                  output_tokens=len(text.split()))


@dataclass
class GatewayStats:
    calls: Counter = field(default_factory=Counter)
    live_calls: int = 0
    cache_hits: int = 0
    input_tokens: int = 0
    output_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "calls_by_role": {k: self.calls[k] for k in sorted(self.calls)},
            "total_calls": sum(self.calls.values()),
            "live_calls": self.live_calls,
            "cache_hits": self.cache_hits,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_tokens": self.input_tokens + self.output_tokens,
        }


class LLMGateway:
    """Single entry point for every LLM call made by the pipeline.

    ``replay`` serves only from the cache; ``record`` serves from the cache
    when possible and otherwise calls the provider and persists the answer;
    ``live`` always calls the provider and never touches the cache.
    """

    def __init__(
        self,
        provider: ChatProvider | None = None,
        cache: ReplayCache | None = None,
        mode: str = "replay",
        model: str = DEFAULT_MODEL,
        concurrency: int = 4,
        max_attempts: int = 3,
        backoff: float = 1.0,
        library: PromptLibrary | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise GatewayError(f"unknown mode {mode!r}")
        if mode == "replay" and cache is None:
            raise GatewayError("replay mode requires a cache")
        if mode in ("live", "record") and provider is None:
            raise GatewayError(f"{mode} mode requires a provider")
        self.provider = provider
        self.cache = cache
        self.mode = mode
        self.model = model
        self.concurrency = concurrency
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.library = library or default_library()
        self.stats = GatewayStats()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, concurrency))
        self._stats_lock = threading.Lock()

    def render(self, role: Role | str, variables: dict[str, str]) -> str:
        return self.library.render(role, variables)

    def fragment(self, name: str, **variables: str) -> str:
        return self.library.fragment(name, **variables)

    def ask(self, role: Role | str, variables: dict[str, str], max_tokens: int = 4096) -> CompletionResponse:
        prompt = self.render(role, variables)
        return self.complete(CompletionRequest(Role(role), prompt, self.model, 0.0, max_tokens))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._stats_lock:
            self.stats.calls[Role(request.role).value] += 1
        key = cache_key(request.role, request.model, request.prompt)
        if self.mode in ("replay", "record") and self.cache is not None:
            entry = self.cache.get(key)
            if entry is not None:
                tokens = entry.get("tokens", {})
                resp = CompletionResponse(entry["response"], int(tokens.get("input", 0)),
                                          int(tokens.get("output", 0)), 0.0, True)
                self._account(resp)
                return resp
            if self.mode == "replay":
                raise CacheMiss(key)
        resp = self._call_with_retry(request)
        if self.mode == "record" and self.cache is not None:
            self.cache.put(key, request.role, resp)
        self._account(resp)
        return resp

    def _call_with_retry(self, request: CompletionRequest) -> CompletionResponse:
        last: ProviderError | None = None
        for attempt in range(self.max_attempts):
            try:
                with self._slots:
                    with self._stats_lock:
                        self.stats.live_calls += 1
                    return self.provider.chat(request)
            except ProviderError as exc:
                last = exc
                logger.warning("%s call failed (attempt %d/%d): %s", Role(request.role).value,
                               attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    self._sleep(self.backoff * (2 ** attempt))
        assert last is not None
        raise last

    def _account(self, resp: CompletionResponse) -> None:
        with self._stats_lock:
            if resp.cached:
                self.stats.cache_hits += 1
            self.stats.input_tokens += resp.input_tokens
            self.stats.output_tokens += resp.output_tokens
