"""Uniform multi-sample text generation over mock and HTTP chat providers.

Every request is content-addressed; completed generations persist in an
on-disk cache so interrupted sweeps resume without duplicate spend and
completed sweeps replay byte-identically with no network access.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import requests

from .prompting import PromptTemplate

CACHE_FORMAT_VERSION = 1


class ProviderError(RuntimeError):
    """Generation failed."""


class TransientProviderError(ProviderError):
    """Retryable failure: timeout, 5xx, or rate limiting."""


class AuthenticationError(ProviderError):
    """Non-retryable credential failure."""


@dataclass(frozen=True)
class GenRequest:
    """One generation request; ``meta`` is side-channel context for mock
    providers and never enters the cache key."""

    prompt: str
    n_samples: int = 5
    temperature: float = 0.8
    max_new_tokens: int = 128
    model_id: str = ""
    meta: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    def cache_key(self, provider_id: str) -> str:
        blob = json.dumps(
            {
                "provider_id": provider_id,
                "model_id": self.model_id,
                "prompt": self.prompt,
                "n_samples": self.n_samples,
                "temperature": self.temperature,
                "max_new_tokens": self.max_new_tokens,
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenResult:
    samples: tuple[str, ...]
    provider_id: str
    latency: float
    from_cache: bool
    attempts: int
    n_mode: str = "server"


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 0.5
    max_delay: float = 30.0
    jitter: float = 0.1
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int, rng: random.Random) -> float:
        raw = min(self.max_delay, self.base_delay * (2**attempt))
        return raw * (1.0 + self.jitter * rng.random())


class GenerationCache:
    """One JSON file per cache key; writes are atomic via rename."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        if record.get("version") != CACHE_FORMAT_VERSION:
            return None
        return record

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        tmp = path.with_suffix(f".tmp.{os.getpid()}")
        tmp.write_text(
            json.dumps(record, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )
        tmp.replace(path)


def generate(
    provider,
    request: GenRequest,
    cache: GenerationCache | None = None,
    retry: RetryPolicy | None = None,
) -> GenResult:
    """Produce exactly ``n_samples`` texts, via cache, retrying transient
    provider failures with exponential backoff."""
    policy = retry or RetryPolicy()
    key = request.cache_key(provider.provider_id)
    if cache is not None:
        record = cache.get(key)
        if record is not None:
            return GenResult(
                samples=tuple(record["samples"]),
                provider_id=record["provider_id"],
                latency=0.0,
                from_cache=True,
                attempts=0,
                n_mode=record.get("n_mode", "server"),
            )
    rng = random.Random(key)
    started = time.monotonic()
    last_error: TransientProviderError | None = None
    for attempt in range(policy.attempts):
        try:
            samples = list(provider.complete(request))
            break
        except TransientProviderError as exc:
            last_error = exc
            if attempt + 1 < policy.attempts:
                policy.sleep(policy.delay(attempt, rng))
    else:
        raise ProviderError(
            f"gave up after {policy.attempts} attempts: {last_error}"
        ) from last_error
    if len(samples) != request.n_samples:
        raise ProviderError(
            f"provider {provider.provider_id} returned {len(samples)} samples, "
            f"expected {request.n_samples}"
        )
    n_mode = getattr(provider, "n_mode", "server")
    if cache is not None:
        cache.put(
            key,
            {
                "version": CACHE_FORMAT_VERSION,
                "provider_id": provider.provider_id,
                "model_id": request.model_id,
                "prompt": request.prompt,
                "n_samples": request.n_samples,
                "temperature": request.temperature,
                "max_new_tokens": request.max_new_tokens,
                "n_mode": n_mode,
                "samples": samples,
            },
        )
    return GenResult(
        samples=tuple(samples),
        provider_id=provider.provider_id,
        latency=time.monotonic() - started,
        from_cache=False,
        attempts=attempt + 1,
        n_mode=n_mode,
    )


# --------------------------------------------------------------------------
# Mock providers: deterministic, never touch the network.


class ConstantProvider:
    def __init__(self, text: str):
        self.provider_id = "mock:constant"
        self.text = text

    def complete(self, request: GenRequest) -> list[str]:
        return [self.text] * request.n_samples


class ScriptedProvider:
    """Replays fixture samples keyed by the case id in request.meta."""

    def __init__(self, fixture: Mapping[str, Sequence[str]]):
        self.provider_id = "mock:scripted"
        self.fixture = {case_id: list(samples) for case_id, samples in fixture.items()}

    def complete(self, request: GenRequest) -> list[str]:
        case_id = request.meta.get("case_id")
        if case_id not in self.fixture:
            raise ProviderError(f"scripted fixture has no entry for case {case_id!r}")
        samples = self.fixture[case_id]
        if len(samples) != request.n_samples:
            raise ProviderError(
                f"scripted fixture for {case_id!r} has {len(samples)} samples, "
                f"request wants {request.n_samples}"
            )
        return list(samples)


class EchoGoldProvider:
    """Returns the query's gold charge (test-only, needs the answer key)."""

    def __init__(self, gold_by_case: Mapping[str, str]):
        self.provider_id = "mock:echo_gold"
        self.gold_by_case = dict(gold_by_case)

    def complete(self, request: GenRequest) -> list[str]:
        case_id = request.meta.get("case_id")
        if case_id not in self.gold_by_case:
            raise ProviderError(f"no gold label known for case {case_id!r}")
        return [self.gold_by_case[case_id]] * request.n_samples


def _line_prefix(block_template: str, placeholder: str) -> str:
    pre, sep, _ = block_template.partition("{" + placeholder + "}")
    if not sep:
        raise ValueError(f"template block lacks placeholder {placeholder!r}")
    literal = pre.rsplit("}", 1)[-1]
    return literal.lstrip("\n")


class FirstCandidateProvider:
    """Parses the rendered candidate block and answers with its first entry."""

    def __init__(self, template: PromptTemplate):
        self.provider_id = "mock:first_candidate"
        self._prefix = _line_prefix(template.candidate_block, "candidates")
        self._joiner = template.candidate_joiner

    def complete(self, request: GenRequest) -> list[str]:
        for line in request.prompt.splitlines():
            if line.startswith(self._prefix):
                first = line[len(self._prefix):].split(self._joiner)[0]
                return [first] * request.n_samples
        raise ProviderError("prompt contains no candidate block")


class EchoFirstDemoProvider:
    """Parses the first rendered demonstration and answers with its charge."""

    def __init__(self, template: PromptTemplate):
        self.provider_id = "mock:echo_first_demo"
        self._prefix = _line_prefix(template.demo_block, "demo_charge")

    def complete(self, request: GenRequest) -> list[str]:
        for line in request.prompt.splitlines():
            if line.startswith(self._prefix) and line[len(self._prefix):]:
                return [line[len(self._prefix):]] * request.n_samples
        raise ProviderError("prompt contains no demonstration block")


class YesIfGoldProvider:
    """Verification oracle: affirms exactly when the asked charge is gold."""

    def __init__(self, yes_text: str = "是", no_text: str = "否"):
        self.provider_id = "mock:yes_if_gold"
        self.yes_text = yes_text
        self.no_text = no_text

    def complete(self, request: GenRequest) -> list[str]:
        charge = request.meta.get("charge")
        gold = request.meta.get("gold")
        if charge is None or gold is None:
            raise ProviderError("yes_if_gold needs charge and gold in request meta")
        return [self.yes_text if charge == gold else self.no_text] * request.n_samples


def mock_provider(kind: str, **config):
    """Factory for the deterministic mock providers."""
    if kind == "constant":
        return ConstantProvider(config["text"])
    if kind == "scripted":
        return ScriptedProvider(config["fixture"])
    if kind == "echo_gold":
        return EchoGoldProvider(config["gold_by_case"])
    if kind == "first_candidate":
        return FirstCandidateProvider(config["template"])
    if kind == "echo_first_demo":
        return EchoFirstDemoProvider(config["template"])
    if kind == "yes_if_gold":
        return YesIfGoldProvider(**{k: v for k, v in config.items() if k in ("yes_text", "no_text")})
    raise ValueError(f"unknown mock provider kind: {kind!r}")


# --------------------------------------------------------------------------
# Real provider: chat-completion JSON API.


def _requests_transport(url: str, headers: dict, payload: dict, timeout: float):
    try:
        response = requests.post(url, headers=headers, json=payload, timeout=timeout)
    except requests.Timeout as exc:
        raise TransientProviderError(f"timeout after {timeout}s") from exc
    except requests.ConnectionError as exc:
        raise TransientProviderError(str(exc)) from exc
    return response.status_code, response.json() if response.content else {}


class HttpChatProvider:
    """Client for POST {base_url}/v1/chat/completions.

    Providers that ignore the ``n`` parameter can be driven with
    ``supports_n=False``, which falls back to n sequential single-sample
    calls (recorded in ``n_mode``).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        supports_n: bool = True,
        timeout: float = 60.0,
        transport: Callable = _requests_transport,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.supports_n = supports_n
        self.timeout = timeout
        self.transport = transport
        self.provider_id = f"http:{self.base_url}:{model}"
        self.n_mode = "server" if supports_n else "sequential"

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise AuthenticationError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _call(self, request: GenRequest, n: int) -> list[str]:
        payload = {
            "model": request.model_id or self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "n": n,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        status, body = self.transport(
            f"{self.base_url}/v1/chat/completions", self._headers(), payload, self.timeout
        )
        if status in (401, 403):
            raise AuthenticationError(f"provider rejected credentials (HTTP {status})")
        if status == 429 or status >= 500:
            raise TransientProviderError(f"HTTP {status}: {body}")
        if status != 200:
            raise ProviderError(f"HTTP {status}: {body}")
        try:
            return [choice["message"]["content"] for choice in body["choices"]]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {body!r}") from exc

    def complete(self, request: GenRequest) -> list[str]:
        if self.supports_n:
            samples = self._call(request, request.n_samples)
            if len(samples) != request.n_samples:
                raise ProviderError(
                    f"asked for n={request.n_samples}, got {len(samples)} choices"
                )
            return samples
        samples = []
        for _ in range(request.n_samples):
            samples.extend(self._call(request, 1))
        return samples
