"""Access to text-generation and embedding endpoints.

Two backends share one surface (``complete`` / ``embed``):

* :class:`HttpGateway` talks to a local inference server over HTTP
  (``POST /api/generate`` and ``POST /api/embeddings``);
* :class:`MockGateway` answers from keyword tables so whole experiment grids
  run offline and deterministically.

Both cap in-flight requests with a semaphore and cache embeddings by
``(model_id, text)``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import requests

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.8
DEFAULT_TEMPERATURE_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_MAX_OUTPUT_TOKENS = 256
DEFAULT_ENDPOINT = "http://localhost:11434"
ENDPOINT_ENV = "AREATAG_ENDPOINT"
MOCK_EMBED_MODEL = "mock-embed"


class GatewayError(RuntimeError):
    """Base class for endpoint failures."""


class TransportError(GatewayError):
    """Connection refused, reset, or a 5xx answer, after retries."""


class GatewayTimeout(TransportError):
    pass


class ModelRejected(GatewayError):
    """The endpoint refused the model id (unknown or not pulled)."""


def check_temperature(value: float) -> float:
    if not isinstance(value, (int, float)) or math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"temperature must lie in [0,1], got {value}")
    return float(value)


@dataclass(frozen=True)
class GenerationRequest:
    model_id: str
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    attempt: int = 0

    def __post_init__(self) -> None:
        check_temperature(self.temperature)
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class GenerationResult:
    raw_text: str
    latency: float
    model_id: str


@dataclass(frozen=True)
class EmbeddingVector:
    components: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("embedding vector must be non-empty")
        if not all(math.isfinite(x) for x in self.components):
            raise ValueError("embedding vector has non-finite components")

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, i):
        return self.components[i]


# --------------------------------------------------------------------------- normalization

_PREFIX = re.compile(r"^(?:domain|subject|topic|answer)\s*:\s*", re.IGNORECASE)
_QUOTES = "\"'`“”‘’"


def normalize_response(raw_text: str) -> str:
    """Reduce a model answer to a bare label.

    Keeps the first non-empty line, then repeatedly strips whitespace,
    markdown emphasis, surrounding quotes, a trailing period and a leading
    ``domain:``/``subject:``/``topic:``/``answer:`` tag.
    """
    line = next((ln for ln in raw_text.splitlines() if ln.strip()), "")
    while True:
        before = line
        line = line.strip()
        line = line.strip("*_")
        line = _PREFIX.sub("", line)
        line = line.strip(_QUOTES)
        if line.endswith("."):
            line = line[:-1]
        if line == before:
            return line


# --------------------------------------------------------------------------- base


class Gateway:
    """Shared limiter and embedding cache; subclasses implement the transport."""

    def __init__(self, max_in_flight: int = 4) -> None:
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self._cache: dict[tuple[str, str], Future] = {}
        self._cache_lock = threading.Lock()
        self.embed_calls = 0

    def complete(self, request: GenerationRequest) -> GenerationResult:
        with self._limiter:
            start = time.perf_counter()
            text = self._complete(request)
            return GenerationResult(text, time.perf_counter() - start, request.model_id)

    def embed(self, model_id: str, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("empty embedding input")
        key = (model_id, text)
        with self._cache_lock:
            fut = self._cache.get(key)
            owner = fut is None
            if owner:
                fut = self._cache[key] = Future()
        if not owner:
            return fut.result()
        try:
            with self._limiter:
                with self._cache_lock:
                    self.embed_calls += 1
                vector = EmbeddingVector(tuple(float(x) for x in self._embed(model_id, text)))
        except BaseException as exc:
            with self._cache_lock:
                self._cache.pop(key, None)
            fut.set_exception(exc)
            raise
        fut.set_result(vector)
        return vector

    def embedder(self, model_id: str):
        """Adapter for :func:`areatag.metrics.decide`."""
        return lambda text: self.embed(model_id, text).components

    def _complete(self, request: GenerationRequest) -> str:
        raise NotImplementedError

    def _embed(self, model_id: str, text: str) -> Sequence[float]:
        raise NotImplementedError


# --------------------------------------------------------------------------- HTTP


class HttpGateway(Gateway):
    def __init__(self, base_url: str | None = None, *, timeout: float = 120.0,
                 retries: int = 3, backoff: float = 0.5, max_in_flight: int = 4,
                 session: requests.Session | None = None) -> None:
        super().__init__(max_in_flight)
        self.base_url = (base_url or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT).rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session = session or requests.Session()

    def _post(self, path: str, body: dict) -> dict:
        url = self.base_url + path
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._session.post(url, json=body, timeout=self.timeout)
            except requests.Timeout as exc:
                last = GatewayTimeout(f"{url}: timed out after {self.timeout}s")
                last.__cause__ = exc
                continue
            except requests.RequestException as exc:
                last = TransportError(f"{url}: {exc}")
                last.__cause__ = exc
                continue
            if resp.status_code >= 500:
                last = TransportError(f"{url}: HTTP {resp.status_code}: {_server_message(resp)}")
                continue
            if resp.status_code >= 400:
                raise ModelRejected(
                    f"model {body.get('model')!r} rejected (HTTP {resp.status_code}): "
                    f"{_server_message(resp)}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise TransportError(f"{url}: response is not JSON") from exc
        assert last is not None
        raise last

    def _complete(self, request: GenerationRequest) -> str:
        body = {
            "model": request.model_id,
            "prompt": request.prompt,
            "stream": False,
            "options": {
                "temperature": request.temperature,
                "num_predict": request.max_output_tokens,
            },
        }
        data = self._post("/api/generate", body)
        if "response" not in data:
            raise TransportError("generate response lacks a 'response' field")
        return str(data["response"])

    def _embed(self, model_id: str, text: str) -> Sequence[float]:
        data = self._post("/api/embeddings", {"model": model_id, "prompt": text})
        vector = data.get("embedding")
        if not isinstance(vector, list):
            raise TransportError("embedding response lacks an 'embedding' array")
        return vector


def _server_message(resp: requests.Response) -> str:
    try:
        data = resp.json()
    except ValueError:
        return resp.text.strip()[:200]
    if isinstance(data, dict) and "error" in data:
        return str(data["error"])
    return str(data)[:200]


# --------------------------------------------------------------------------- mock

# Section headers after which the text under classification starts.
_RECORD_HEADERS = ("Scientific text to annotate is:", "Given this paper:", "given this paper:")
_STAGE_MARKERS = (
    ("domain", "The list of valid domains is:"),
    ("subject", "list of subjects under this domain:"),
    ("topic", "list of topics under this subject:"),
)


def record_section(prompt: str) -> str:
    """Text after the last record header, or the whole prompt if none."""
    best = -1
    header_len = 0
    for header in _RECORD_HEADERS:
        i = prompt.rfind(header)
        if i > best:
            best, header_len = i, len(header)
    return prompt if best < 0 else prompt[best + header_len:]


def prompt_stage(prompt: str) -> str | None:
    for level, marker in _STAGE_MARKERS:
        if marker in prompt:
            return level
    return None


@dataclass
class MockModel:
    """Keyword-table model.

    ``table`` maps a marker token (searched as a whole token in the record
    part of the prompt, in table order) to either a fixed answer string or a
    per-level mapping ``{"domain": ..., "subject": ..., "topic": ...}``.
    ``confusion`` overrides single levels per marker, to plant known errors.
    Chain-stage prompts get the label for their level; other prompts get
    three ``level: label`` lines.
    """

    table: Mapping[str, str | Mapping[str, str | None]]
    confusion: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    default: str = ""
    _patterns: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._patterns = [
            (key, re.compile(r"(?<![\w-])" + re.escape(key) + r"(?![\w-])"))
            for key in self.table
        ]

    def answer(self, prompt: str) -> str:
        text = record_section(prompt)
        for key, pattern in self._patterns:
            if pattern.search(text):
                return self._render(key, prompt)
        return self.default

    def _render(self, key: str, prompt: str) -> str:
        value = self.table[key]
        if isinstance(value, str):
            return value
        answers = {lvl: value.get(lvl) for lvl in ("domain", "subject", "topic")}
        answers.update(self.confusion.get(key, {}))
        stage = prompt_stage(prompt)
        if stage is not None:
            return answers.get(stage) or ""
        return "\n".join(f"{lvl}: {ans}" for lvl, ans in answers.items() if ans)


def mock_embedding(text: str, dim: int = 64) -> tuple[float, ...]:
    """Hashed bag of character bigrams; identical strings give identical vectors."""
    vec = [0.0] * dim
    padded = f"^{text}$"
    for i in range(len(padded) - 1):
        digest = hashlib.blake2b(padded[i:i + 2].encode("utf-8"), digest_size=8).digest()
        vec[int.from_bytes(digest[:4], "little") % dim] += 1.0
    return tuple(vec)


class MockGateway(Gateway):
    """Offline gateway: unknown model ids are rejected like a real server would."""

    def __init__(self, models: Mapping[str, MockModel], *, max_in_flight: int = 4,
                 embed_models: Sequence[str] = (MOCK_EMBED_MODEL,)) -> None:
        super().__init__(max_in_flight)
        self.models = dict(models)
        self.embed_models = tuple(embed_models)
        self.calls = 0
        self._calls_lock = threading.Lock()

    def _complete(self, request: GenerationRequest) -> str:
        model = self.models.get(request.model_id)
        if model is None:
            raise ModelRejected(f"model {request.model_id!r} not found")
        with self._calls_lock:
            self.calls += 1
        return model.answer(request.prompt)

    def _embed(self, model_id: str, text: str) -> Sequence[float]:
        if model_id not in self.embed_models:
            raise ModelRejected(f"embedding model {model_id!r} not found")
        return mock_embedding(text)
