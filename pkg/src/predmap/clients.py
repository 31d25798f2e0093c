"""Uniform access to embedding and chat-completion services.

Two wire shapes are supported, both JSON-over-HTTP: an embeddings-style
endpoint ({"model", "input"} -> {"data": [{"index", "embedding"}]}) and a
chat-completions-style endpoint ({"model", "messages", "temperature"} ->
{"choices": [{"message": {"content"}}]}). Deterministic offline doubles
implement the same provider interface so every downstream module is
model-agnostic.

API keys are resolved from the environment at request time and never
stored on config objects.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import requests

from .errors import (
    EmptyResponse,
    ProviderContractViolation,
    RetriesExhausted,
    TransportError,
)

DEFAULT_MAX_CONCURRENCY = 4


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for one hosted model endpoint.

    api_key_env names the environment variable holding the key; the key
    value itself is resolved per request and never serialized.
    """

    base_url: str
    model_id: str
    api_key_env: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    max_concurrency: int = DEFAULT_MAX_CONCURRENCY

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if not 0 <= self.max_retries <= 5:
            raise ValueError(f"max_retries must be in [0, 5], got {self.max_retries}")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "api_key_env": self.api_key_env,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
            "max_concurrency": self.max_concurrency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})

    def resolve_api_key(self) -> str | None:
        if not self.api_key_env:
            return None
        return os.environ.get(self.api_key_env)


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-length embedding tagged with the model that produced it."""

    values: tuple[float, ...]
    dim: int
    model_id: str

    def __post_init__(self) -> None:
        if len(self.values) != self.dim:
            raise ValueError(
                f"vector length {len(self.values)} does not match dim {self.dim}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("vector contains non-finite values")


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity between two vectors from the same model and dim."""
    if a.model_id != b.model_id or a.dim != b.dim:
        raise ValueError(
            f"cannot compare vectors from ({a.model_id}, dim={a.dim}) "
            f"and ({b.model_id}, dim={b.dim})"
        )
    dot = sum(x * y for x, y in zip(a.values, b.values))
    na = math.sqrt(sum(x * x for x in a.values))
    nb = math.sqrt(sum(y * y for y in b.values))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero-norm vector")
    return dot / (na * nb)


@dataclass
class ChatExchange:
    """One completed chat call: prompt in, verbatim response out."""

    prompt: str
    raw_response: str
    parsed_json: dict | None
    attempt_count: int


class EmbeddingProviderProtocol(Protocol):
    model_id: str
    max_retries: int

    def request(self, texts: Sequence[str]) -> list[list[float]]:
        """Single attempt; may raise TransportError."""
        ...


class ChatProviderProtocol(Protocol):
    model_id: str
    max_retries: int

    def request(self, prompt: str) -> str:
        """Single attempt; may raise TransportError."""
        ...


def extract_json_object(text: str) -> dict | None:
    """Locate the outermost brace-delimited JSON object in free text.

    Tolerates surrounding prose and code fences. Returns None when no
    parseable object exists.
    """
    first = text.find("{")
    if first < 0:
        return None
    last = text.rfind("}")
    if last > first:
        try:
            obj = json.loads(text[first : last + 1])
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            pass
    # Trailing prose may contain stray braces; decode from each opening
    # brace and accept the first object that parses.
    decoder = json.JSONDecoder()
    pos = first
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
            if isinstance(obj, dict):
                return obj
        except json.JSONDecodeError:
            pass
        pos = text.find("{", pos + 1)
    return None


def _retrying(call: Callable[[], object], max_retries: int) -> tuple[object, int]:
    attempts = 0
    last_error: Exception | None = None
    while attempts < max_retries + 1:
        attempts += 1
        try:
            return call(), attempts
        except TransportError as exc:
            last_error = exc
            if attempts < max_retries + 1:
                time.sleep(min(0.2 * 2 ** (attempts - 1), 2.0))
    raise RetriesExhausted(
        f"provider failed after {attempts} attempts: {last_error}"
    ) from last_error


def embed_texts(
    provider: EmbeddingProviderProtocol, texts: Sequence[str]
) -> list[EmbeddingVector]:
    """Embed a batch of texts, preserving order.

    All returned vectors share the provider's model_id and a single dim;
    anything else from the provider is a contract violation.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    for i, text in enumerate(texts):
        if not text.strip():
            raise ValueError(f"text at index {i} is empty after trimming")

    rows, _ = _retrying(lambda: provider.request(texts), provider.max_retries)
    if len(rows) != len(texts):
        raise ProviderContractViolation(
            f"provider returned {len(rows)} vectors for {len(texts)} texts"
        )
    dim = len(rows[0])
    vectors = []
    for i, row in enumerate(rows):
        if len(row) != dim:
            raise ProviderContractViolation(
                f"vector {i} has dim {len(row)}, batch started with {dim}"
            )
        try:
            vectors.append(
                EmbeddingVector(tuple(float(v) for v in row), dim, provider.model_id)
            )
        except ValueError as exc:
            raise ProviderContractViolation(f"vector {i}: {exc}") from exc
    return vectors


def chat_complete(provider: ChatProviderProtocol, prompt: str) -> ChatExchange:
    """Run one chat completion, capturing the raw response verbatim.

    parsed_json is populated when the response contains a single
    well-formed JSON object, possibly wrapped in prose or code fences.
    """
    if not prompt.strip():
        raise ValueError("prompt must be non-empty")
    raw, attempts = _retrying(lambda: provider.request(prompt), provider.max_retries)
    raw = str(raw)
    if not raw.strip():
        raise EmptyResponse("chat provider returned an empty response")
    return ChatExchange(
        prompt=prompt,
        raw_response=raw,
        parsed_json=extract_json_object(raw),
        attempt_count=attempts,
    )


class HttpEmbeddingProvider:
    """Embeddings-style JSON endpoint adapter."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.model_id = config.model_id
        self.max_retries = config.max_retries
        self._gate = threading.Semaphore(config.max_concurrency)

    def request(self, texts: Sequence[str]) -> list[list[float]]:
        payload = {"model": self.config.model_id, "input": list(texts)}
        body = _post_json(self.config, payload, self._gate)
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            return [list(item["embedding"]) for item in data]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"malformed embeddings response: {exc}") from exc


class HttpChatProvider:
    """Chat-completions-style JSON endpoint adapter."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.model_id = config.model_id
        self.max_retries = config.max_retries
        self._gate = threading.Semaphore(config.max_concurrency)

    def request(self, prompt: str) -> str:
        payload = {
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        body = _post_json(self.config, payload, self._gate)
        try:
            return str(body["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc}") from exc


def _post_json(
    config: ProviderConfig, payload: dict, gate: threading.Semaphore
) -> dict:
    headers = {"Content-Type": "application/json"}
    key = config.resolve_api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    with gate:
        try:
            response = requests.post(
                config.base_url,
                json=payload,
                headers=headers,
                timeout=config.timeout,
            )
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, ValueError) as exc:
            raise TransportError(str(exc)) from exc


class DeterministicEmbedder:
    """Offline embedding double: a pure function of (seed, text).

    Tokens are whitespace-split, lowercased, and hashed onto one of dim
    buckets; the bucket counts are L2-normalized. Texts with disjoint
    token sets land on disjoint buckets (absent hash collisions), so
    their cosine is exactly zero.
    """

    def __init__(self, seed: int, dim: int, model_id: str | None = None):
        if dim < 8:
            raise ValueError(f"dim must be >= 8, got {dim}")
        self.seed = seed
        self.dim = dim
        self.model_id = model_id or f"deterministic-s{seed}-d{dim}"
        self.max_retries = 0
        self._key = seed.to_bytes(8, "big", signed=True)

    def request(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(text) for text in texts]

    def token_bucket(self, token: str) -> int:
        digest = hashlib.blake2b(
            token.lower().encode("utf-8"), digest_size=8, key=self._key
        ).digest()
        return int.from_bytes(digest, "big") % self.dim

    def _embed_one(self, text: str) -> list[float]:
        tokens = text.split()
        if not tokens:
            raise TransportError("cannot embed empty text")
        counts = [0.0] * self.dim
        for token in tokens:
            counts[self.token_bucket(token)] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        return [c / norm for c in counts]


class ScriptedChat:
    """Chat double that plays back canned responses in order."""

    def __init__(self, responses: Sequence[str], model_id: str = "scripted-chat"):
        self.model_id = model_id
        self.max_retries = 0
        self._responses = list(responses)
        self._lock = threading.Lock()
        self.prompts: list[str] = []

    def request(self, prompt: str) -> str:
        with self._lock:
            self.prompts.append(prompt)
            if not self._responses:
                raise TransportError("scripted chat ran out of responses")
            return self._responses.pop(0)


@dataclass
class _Rule:
    contains: str
    respond: str


class RuleChat:
    """Chat double that answers as a pure function of the prompt.

    The first rule whose `contains` substring occurs in the prompt wins;
    otherwise the default response is used. Responses may reference
    {first_candidate} (first line of the prompt's candidate block) and
    {input_text} (the quoted text on the prompt's Input: line), filled by
    plain string substitution. Being prompt-determined, this double is
    safe under concurrency and across resumed runs.
    """

    def __init__(
        self,
        rules: Sequence[tuple[str, str]] = (),
        default: str = "",
        model_id: str = "rule-chat",
    ):
        self.model_id = model_id
        self.max_retries = 0
        self._rules = [_Rule(contains, respond) for contains, respond in rules]
        self._default = default

    def request(self, prompt: str) -> str:
        template = self._default
        for rule in self._rules:
            if rule.contains in prompt:
                template = rule.respond
                break
        if not template:
            raise TransportError("no rule matched and no default response configured")
        out = template
        if "{first_candidate}" in out:
            out = out.replace("{first_candidate}", _first_candidate(prompt))
        if "{input_text}" in out:
            out = out.replace("{input_text}", _input_text(prompt))
        return out


def _first_candidate(prompt: str) -> str:
    match = re.search(r"Candidate Predicates:\n(.+)", prompt)
    if not match:
        raise TransportError("prompt has no candidate block")
    return match.group(1).strip()


def _input_text(prompt: str) -> str:
    match = re.search(r'^Input: "(.*)"$', prompt, re.MULTILINE)
    if not match:
        raise TransportError("prompt has no Input line")
    return match.group(1)


class FlakyProvider:
    """Wraps another provider, failing the first `failures` requests.

    Exercises the retry path: attempt_count must land at failures + 1
    when failures <= max_retries.
    """

    def __init__(self, inner, failures: int, max_retries: int | None = None):
        self._inner = inner
        self._remaining = failures
        self._lock = threading.Lock()
        self.model_id = inner.model_id
        self.max_retries = inner.max_retries if max_retries is None else max_retries

    def request(self, arg):
        with self._lock:
            if self._remaining > 0:
                self._remaining -= 1
                raise TransportError("injected fault")
        return self._inner.request(arg)
