"""LLM gateway: deterministic generation config, response cache, backends, parsers."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from graphmind.errors import BackendError, BackendUnreachable, ConfigError, UnparsableBool
from graphmind.prompts import TEMPLATES, PromptTemplate, get_template

logger = logging.getLogger(__name__)

CACHE_HEADER = "CACHE v1"

ENV_LLM_URL = "GRAPHMIND_LLM_URL"
ENV_LLM_MODEL = "GRAPHMIND_LLM_MODEL"
ENV_CACHE_PATH = "GRAPHMIND_CACHE_PATH"


@dataclass(frozen=True)
class GenerationConfig:
    max_tokens: int = 2048
    seed: int = 42
    temperature: float = 0.0
    top_k: int = 1

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class ChatRequest:
    template: str
    bindings: Mapping[str, str]
    config: GenerationConfig = field(default_factory=GenerationConfig)


@dataclass(frozen=True)
class RenderedRequest:
    template: str
    messages: tuple[Mapping[str, str], ...]
    config: GenerationConfig
    bindings: Mapping[str, str] = field(default_factory=dict)

    @property
    def text(self) -> str:
        return "\n\n".join(m["content"] for m in self.messages)


class LlmBackend(Protocol):
    backend_id: str

    @property
    def call_count(self) -> int: ...

    def complete(self, request: RenderedRequest) -> str: ...


class _CountingBackend:
    backend_id = "abstract"

    def __init__(self) -> None:
        self._calls = 0
        self._count_lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def _tick(self) -> None:
        with self._count_lock:
            self._calls += 1


@dataclass(frozen=True)
class ScriptRule:
    response: str
    template: str | None = None
    contains: tuple[str, ...] = ()

    def matches(self, request: RenderedRequest) -> bool:
        if self.template not in (None, "*", request.template):
            return False
        text = request.text
        return all(needle in text for needle in self.contains)


class ScriptedBackend(_CountingBackend):
    """Answers from an ordered rule list; the first matching rule wins.

    Rules match on template name and on substrings of the rendered prompt.
    A request no rule matches raises BackendError(404) unless a default
    response was given.
    """

    def __init__(self, rules: list[ScriptRule], default: str | None = None, backend_id: str = "scripted") -> None:
        super().__init__()
        self.rules = list(rules)
        self.default = default
        self.backend_id = backend_id

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike, default: str | None = None) -> ScriptedBackend:
        rules = []
        path = Path(path)
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                match = obj.get("match", {})
                rules.append(
                    ScriptRule(
                        response=str(obj["response"]),
                        template=match.get("template"),
                        contains=tuple(match.get("contains", ())),
                    )
                )
            except (json.JSONDecodeError, KeyError, AttributeError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad script rule ({exc})") from exc
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
        return cls(rules, default=default, backend_id=f"scripted:{digest}")

    def complete(self, request: RenderedRequest) -> str:
        self._tick()
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if self.default is not None:
            return self.default
        raise BackendError(404, f"no scripted response for template {request.template!r}")


class FunctionBackend(_CountingBackend):
    """Wraps a plain ``(RenderedRequest) -> str`` function as a backend."""

    def __init__(self, fn: Callable[[RenderedRequest], str], backend_id: str = "function") -> None:
        super().__init__()
        self.fn = fn
        self.backend_id = backend_id

    def complete(self, request: RenderedRequest) -> str:
        self._tick()
        return self.fn(request)


class HttpBackend(_CountingBackend):
    """Chat-completion client for a local LLM server.

    Sends ``{model, messages, options, stream: false}`` and reads
    ``message.content`` from the response body.
    """

    def __init__(
        self,
        url: str,
        model: str,
        timeout: float = 300.0,
        client: httpx.Client | None = None,
    ) -> None:
        super().__init__()
        self.url = url
        self.model = model
        self.backend_id = f"http:{url}#{model}"
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: RenderedRequest) -> str:
        self._tick()
        payload = {
            "model": self.model,
            "messages": [dict(m) for m in request.messages],
            "options": {
                "temperature": request.config.temperature,
                "seed": request.config.seed,
                "top_k": request.config.top_k,
                "num_predict": request.config.max_tokens,
            },
            "stream": False,
        }
        try:
            resp = self._client.post(self.url, json=payload)
        except httpx.TransportError as exc:
            raise BackendUnreachable(f"LLM endpoint {self.url}: {exc}") from exc
        if resp.status_code >= 400:
            raise BackendError(resp.status_code, resp.text[:200])
        try:
            return str(resp.json()["message"]["content"])
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(resp.status_code, f"unexpected response body: {exc}") from exc


class ResponseCache:
    """Content-addressed response store, optionally backed by an append-only file."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self.path = Path(path) if path else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        lines = self.path.read_text(encoding="utf-8").splitlines()
        if not lines:
            return
        if lines[0] != CACHE_HEADER:
            raise ConfigError(f"{self.path} is not a graphmind cache file")
        for line in lines[1:]:
            parts = line.split(" ")
            if len(parts) != 3 or parts[0] != "H":
                logger.warning("skipping malformed cache line in %s", self.path)
                continue
            try:
                self._entries[parts[1]] = base64.b64decode(parts[2], validate=True).decode("utf-8")
            except ValueError:
                logger.warning("skipping undecodable cache entry in %s", self.path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, value: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = value
            if self.path is None:
                return
            new_file = not self.path.exists() or self.path.stat().st_size == 0
            with self.path.open("a", encoding="utf-8") as fh:
                if new_file:
                    fh.write(CACHE_HEADER + "\n")
                encoded = base64.b64encode(value.encode("utf-8")).decode("ascii")
                fh.write(f"H {key} {encoded}\n")


class LlmGateway:
    """Renders templates, consults the cache and forwards misses to a backend."""

    def __init__(
        self,
        backend: LlmBackend,
        cache: ResponseCache | None = None,
        templates: Mapping[str, PromptTemplate] | None = None,
        config: GenerationConfig | None = None,
    ) -> None:
        self.backend = backend
        self.cache = cache if cache is not None else ResponseCache()
        self.templates = dict(templates or TEMPLATES)
        self.default_config = config or GenerationConfig()
        self._inflight: dict[str, threading.Lock] = {}
        self._inflight_lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self.backend.call_count

    def render(self, request: ChatRequest) -> tuple[RenderedRequest, str]:
        template = get_template(request.template, self.templates)
        bindings = {k: str(v) for k, v in request.bindings.items()}
        messages = template.render(bindings)
        rendered = RenderedRequest(request.template, tuple(messages), request.config, bindings)
        key_material = json.dumps(
            {
                "backend": self.backend.backend_id,
                "template": template.digest,
                "messages": messages,
                "config": asdict(request.config),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return rendered, hashlib.sha256(key_material.encode("utf-8")).hexdigest()

    def complete(self, request: ChatRequest) -> str:
        rendered, key = self.render(request)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        # coalesce identical in-flight requests so each key reaches the backend once
        with self._inflight_lock:
            lock = self._inflight.setdefault(key, threading.Lock())
        with lock:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
            try:
                response = self.backend.complete(rendered)
                self.cache.put(key, response)
            finally:
                with self._inflight_lock:
                    self._inflight.pop(key, None)
            return response

    def ask(self, template: str, config: GenerationConfig | None = None, **bindings: str) -> str:
        return self.complete(ChatRequest(template, bindings, config or self.default_config))


# -- output parsing ------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z]+")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_TRUE_WORDS = {"true", "yes"}
_FALSE_WORDS = {"false", "no"}


def parse_bool(text: str) -> bool:
    """First standalone true/yes or false/no word decides; otherwise UnparsableBool."""
    for word in _WORD_RE.findall(text.lower()):
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
    raise UnparsableBool(f"no boolean answer in {text[:80]!r}")


def parse_list(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        item = _BULLET_RE.sub("", line, count=1).strip()
        if item:
            items.append(item)
    return items


def render_numbered(items: list[str]) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


def parse_triples(text: str) -> tuple[list[tuple[str, str, str]], int]:
    """Parse ``s | p | o`` lines, optionally bulleted or wrapped in parentheses.

    Returns the triples and the number of non-blank lines that were skipped.
    """
    triples = []
    skipped = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        body = _BULLET_RE.sub("", line, count=1).strip() if not line.lstrip().startswith("(") else line.strip()
        if body.startswith("(") and body.endswith(")"):
            body = body[1:-1]
        parts = [p.strip() for p in body.split("|")]
        if len(parts) == 3 and all(parts):
            triples.append((parts[0], parts[1], parts[2]))
        else:
            skipped += 1
    return triples, skipped
