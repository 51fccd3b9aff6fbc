"""Transport to teacher/judge/guard models over a chat-completion HTTP protocol.

The wire contract mirrors the dominant open chat-completion protocol: the
request body carries model name, a messages array, temperature, top_p, n and
max_tokens; the response carries an ordered ``choices`` list whose entries
hold message content. Any local inference server speaking that protocol works.

Endpoints whose base_url starts with ``mock://`` resolve to an in-process
deterministic backend (see :mod:`guardkit.mock`); everything above the
transport seam is shared between the two.
"""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass

from .core import GuardkitError, ValidationError

logger = logging.getLogger(__name__)

BACKOFF_BASE_S = 0.5


class TransportError(GuardkitError):
    """A request failed in a way that is not worth retrying (e.g. HTTP 4xx)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TransientTransportError(TransportError):
    """A retryable failure: HTTP 429/5xx, timeout, connection error."""


class ExhaustedRetries(GuardkitError):
    def __init__(self, attempts: int, last_error: Exception | None):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class AuthMissing(GuardkitError):
    """The configured API-key environment variable is not set."""


class MalformedResponse(GuardkitError):
    """The server answered, but not with a usable chat-completion body."""


@dataclass(frozen=True)
class EndpointConfig:
    """How to reach one model. ``api_key_source`` names an environment variable;
    the key itself never appears in config files. ``batched_n`` selects whether
    n>1 generations go out as one request with n or as n sequential requests.
    """

    base_url: str
    model_name: str
    api_key_source: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    batched_n: bool = True

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValidationError("endpoint timeout must be > 0")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, record: dict) -> EndpointConfig:
        try:
            base_url = record["base_url"]
            model_name = record["model_name"]
        except KeyError as exc:
            raise ValidationError(f"endpoint config is missing key {exc}") from None
        return cls(
            base_url=base_url,
            model_name=model_name,
            api_key_source=record.get("api_key_source"),
            timeout=float(record.get("timeout", 60.0)),
            max_retries=int(record.get("max_retries", 3)),
            max_in_flight=int(record.get("max_in_flight", 4)),
            batched_n=bool(record.get("batched_n", True)),
        )


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    top_p: float = 0.95
    max_tokens: int = 4096
    n: int = 1

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValidationError("top_p must be in (0, 1]")
        if self.n < 1:
            raise ValidationError("n must be >= 1")

    @classmethod
    def from_dict(cls, record: dict) -> SamplingParams:
        return cls(
            temperature=float(record.get("temperature", 0.6)),
            top_p=float(record.get("top_p", 0.95)),
            max_tokens=int(record.get("max_tokens", 4096)),
            n=int(record.get("n", 1)),
        )


@dataclass(frozen=True)
class Completion:
    text: str
    latency: float
    usage: dict | None = None

    def __post_init__(self):
        if self.latency < 0:
            raise ValidationError("latency must be >= 0")


class HttpTransport:
    """POSTs to {base_url}/chat/completions with a bearer credential."""

    wall_clock = True

    def __init__(self, endpoint: EndpointConfig):
        import requests  # deferred so mock-only use never needs it at runtime

        self._requests = requests
        self._url = endpoint.base_url.rstrip("/") + "/chat/completions"
        self._headers = {"Content-Type": "application/json"}
        if endpoint.api_key_source:
            key = os.environ.get(endpoint.api_key_source)
            if not key:
                raise AuthMissing(
                    f"environment variable {endpoint.api_key_source!r} is not set"
                )
            self._headers["Authorization"] = f"Bearer {key}"
        self._session = requests.Session()

    def send(self, payload: dict, timeout: float) -> tuple[dict, float]:
        start = time.perf_counter()
        try:
            response = self._session.post(
                self._url, json=payload, headers=self._headers, timeout=timeout
            )
        except self._requests.Timeout as exc:
            raise TransientTransportError(f"timeout after {timeout}s: {exc}") from exc
        except self._requests.RequestException as exc:
            raise TransientTransportError(f"connection error: {exc}") from exc
        latency = time.perf_counter() - start
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportError(
                f"HTTP {response.status_code}", status=response.status_code
            )
        if response.status_code >= 400:
            raise TransportError(
                f"HTTP {response.status_code}: {response.text[:200]}",
                status=response.status_code,
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"response body is not JSON: {exc}") from exc
        return body, latency


def resolve_transport(endpoint: EndpointConfig):
    if endpoint.base_url.startswith("mock://"):
        from . import mock

        return mock.resolve(endpoint.base_url)
    return HttpTransport(endpoint)


class ChatClient:
    """Shareable across workers; request issuance is bounded by max_in_flight.

    Transient failures (HTTP 429/5xx, timeouts) are retried with exponential
    backoff and full jitter, up to ``max_retries`` retries.
    """

    def __init__(
        self,
        endpoint: EndpointConfig,
        transport=None,
        sleep=time.sleep,
        rng: random.Random | None = None,
    ):
        self.endpoint = endpoint
        self._transport = transport if transport is not None else resolve_transport(endpoint)
        self._sleep = sleep
        self._rng = rng if rng is not None else random.Random()
        self._semaphore = threading.BoundedSemaphore(endpoint.max_in_flight)

    @property
    def wall_clock(self) -> bool:
        """True when latency figures come from a real clock (vs a scripted one)."""
        return bool(getattr(self._transport, "wall_clock", True))

    def chat(
        self,
        system: str | None,
        user: str,
        params: SamplingParams | None = None,
    ) -> list[Completion]:
        """Returns exactly ``params.n`` completions, in server choice order."""
        params = params or SamplingParams()
        if self.endpoint.batched_n or params.n == 1:
            body, latency = self._send_with_retries(self._payload(system, user, params, params.n))
            texts = _extract_texts(body, params.n)
            usage = body.get("usage")
            per_generation = latency / params.n
            return [Completion(text, per_generation, usage) for text in texts]
        completions = []
        for _ in range(params.n):
            body, latency = self._send_with_retries(self._payload(system, user, params, 1))
            completions.append(Completion(_extract_texts(body, 1)[0], latency, body.get("usage")))
        return completions

    def _payload(self, system, user, params, n):
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        return {
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "n": n,
            "max_tokens": params.max_tokens,
        }

    def _send_with_retries(self, payload: dict) -> tuple[dict, float]:
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                delay = self._rng.uniform(0.0, BACKOFF_BASE_S * (2 ** (attempt - 1)))
                self._sleep(delay)
            try:
                with self._semaphore:
                    return self._transport.send(payload, self.endpoint.timeout)
            except TransientTransportError as exc:
                last_error = exc
                logger.debug(
                    "transient failure (attempt %d/%d): %s",
                    attempt + 1,
                    self.endpoint.max_retries + 1,
                    exc,
                )
        raise ExhaustedRetries(self.endpoint.max_retries + 1, last_error)


def _extract_texts(body: dict, n: int) -> list[str]:
    choices = body.get("choices")
    if not isinstance(choices, list) or len(choices) < n:
        raise MalformedResponse(
            f"expected {n} choices, got {len(choices) if isinstance(choices, list) else body!r}"
        )
    texts = []
    for choice in choices[:n]:
        try:
            content = choice["message"]["content"]
        except (KeyError, TypeError):
            raise MalformedResponse(f"choice without message content: {choice!r}") from None
        if not isinstance(content, str):
            raise MalformedResponse(f"non-string message content: {content!r}")
        texts.append(content)
    return texts
