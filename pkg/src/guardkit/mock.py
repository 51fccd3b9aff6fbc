"""Deterministic in-process mock backend for chat-completion endpoints.

The backend is a transport: ``send(payload, timeout) -> (body, latency)``.
A script maps request fingerprints (or substrings) to responses, optionally
with per-response artificial delay, scripted failures, and derived behaviors
for the two prompt families the pipeline sends (teacher distillation and
budgeted shortening). The same request sequence always yields the same
response sequence, and every request lands in a call log for assertions.

By default the clock is simulated: the reported latency is exactly the
scripted delay, so pipeline outputs are byte-identical across runs. With
``real_sleep`` the backend actually sleeps and reports measured wall clock,
which is what the latency/concurrency tests want.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .client import TransientTransportError
from .core import GuardkitError, ValidationError


class UnscriptedRequest(GuardkitError):
    """A request matched no script entry and the script has no default."""


@dataclass
class CallRecord:
    fingerprint: str
    user_text: str
    n: int
    t_start: float
    t_end: float
    outcome: str  # "ok" or "error:<status>"


def request_fingerprint(model: str, system: str, user: str) -> str:
    digest = hashlib.sha256(f"{model}\x1f{system}\x1f{user}".encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass
class ScriptEntry:
    match: str | None = None
    fingerprint: str | None = None
    text: str | None = None
    texts: tuple[str, ...] | None = None
    behavior: str | None = None
    delay_s: float | None = None
    fail_times: int = 0
    fail_status: int = 503
    _cursor: int = field(default=0, repr=False)
    _fails_left: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.texts is not None:
            self.texts = tuple(self.texts)
        provided = [v is not None for v in (self.text, self.texts, self.behavior)]
        if sum(provided) != 1:
            raise ValidationError(
                "script entry needs exactly one of text / texts / behavior"
            )
        if self.behavior is not None and self.behavior not in _BEHAVIORS:
            raise ValidationError(f"unknown script behavior {self.behavior!r}")
        self._fails_left = self.fail_times

    @classmethod
    def from_dict(cls, record) -> ScriptEntry:
        if isinstance(record, str):
            return cls(text=record)
        return cls(
            match=record.get("match"),
            fingerprint=record.get("fingerprint"),
            text=record.get("text"),
            texts=tuple(record["texts"]) if "texts" in record else None,
            behavior=record.get("behavior"),
            delay_s=record.get("delay_s"),
            fail_times=int(record.get("fail_times", 0)),
            fail_status=int(record.get("fail_status", 503)),
        )


class MockBackend:
    """Scripted chat-completion transport with a call log."""

    def __init__(
        self,
        entries: tuple[ScriptEntry, ...] | list = (),
        sequence: tuple[str, ...] = (),
        default: ScriptEntry | str | None = None,
        delay_s: float = 0.0,
        real_sleep: bool = False,
        name: str = "mock",
    ):
        self.name = name
        self.entries = [
            e if isinstance(e, ScriptEntry) else ScriptEntry.from_dict(e) for e in entries
        ]
        self.sequence = tuple(sequence)
        if isinstance(default, str):
            default = ScriptEntry(text=default)
        self.default = default
        self.delay_s = delay_s
        self.real_sleep = real_sleep
        self.call_log: list[CallRecord] = []
        self._lock = threading.Lock()
        self._sequence_cursor = 0

    @property
    def wall_clock(self) -> bool:
        return self.real_sleep

    @classmethod
    def from_script(cls, script: dict, name: str = "mock") -> MockBackend:
        return cls(
            entries=[ScriptEntry.from_dict(e) for e in script.get("entries", ())],
            sequence=tuple(script.get("sequence", ())),
            default=(
                ScriptEntry.from_dict(script["default"]) if "default" in script else None
            ),
            delay_s=float(script.get("delay_s", 0.0)),
            real_sleep=bool(script.get("real_sleep", False)),
            name=name,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> MockBackend:
        path = Path(path)
        with path.open("r", encoding="utf-8") as handle:
            script = json.load(handle)
        return cls.from_script(script, name=str(path))

    def send(self, payload: dict, timeout: float) -> tuple[dict, float]:
        system, user = _split_messages(payload)
        n = int(payload.get("n", 1))
        fingerprint = request_fingerprint(payload.get("model", ""), system, user)
        t_start = time.perf_counter()

        entry = self._resolve(fingerprint, user)
        if entry is None:
            self._log(fingerprint, user, n, t_start, "error:unscripted")
            raise UnscriptedRequest(
                f"{self.name}: no script entry matches request {fingerprint} "
                f"({user[:80]!r}...)"
            )

        with self._lock:
            should_fail = entry._fails_left > 0
            if should_fail:
                entry._fails_left -= 1
            else:
                texts = self._texts_for(entry, user, n)
        if should_fail:
            self._log(fingerprint, user, n, t_start, f"error:{entry.fail_status}")
            raise TransientTransportError(
                f"{self.name}: scripted failure", status=entry.fail_status
            )

        delay = entry.delay_s if entry.delay_s is not None else self.delay_s
        if self.real_sleep and delay > 0:
            time.sleep(delay)
        t_end = time.perf_counter()
        latency = (t_end - t_start) if self.real_sleep else delay

        body = {
            "choices": [
                {"index": i, "message": {"role": "assistant", "content": text}}
                for i, text in enumerate(texts)
            ],
            "usage": {
                "prompt_tokens": len(user.split()),
                "completion_tokens": sum(len(t.split()) for t in texts),
            },
        }
        self._log(fingerprint, user, n, t_start, "ok", t_end)
        return body, latency

    def _log(self, fingerprint, user, n, t_start, outcome, t_end=None):
        record = CallRecord(
            fingerprint=fingerprint,
            user_text=user,
            n=n,
            t_start=t_start,
            t_end=t_end if t_end is not None else time.perf_counter(),
            outcome=outcome,
        )
        with self._lock:
            self.call_log.append(record)

    def _resolve(self, fingerprint: str, user: str):
        for entry in self.entries:
            if entry.fingerprint is not None and entry.fingerprint == fingerprint:
                return entry
            if entry.match is not None and entry.match in user:
                return entry
        if self.sequence:
            with self._lock:
                item = self.sequence[self._sequence_cursor % len(self.sequence)]
                self._sequence_cursor += 1
            return ScriptEntry(text=item)
        if self.default is not None:
            return self.default
        return None

    def _texts_for(self, entry: ScriptEntry, user: str, n: int) -> list[str]:
        # caller holds the lock; entry cursors must advance atomically
        if entry.behavior is not None:
            return [_BEHAVIORS[entry.behavior](user, i) for i in range(n)]
        if entry.texts is not None:
            picked = [
                entry.texts[(entry._cursor + i) % len(entry.texts)] for i in range(n)
            ]
            entry._cursor += n
            return picked
        return [entry.text] * n


def _split_messages(payload: dict) -> tuple[str, str]:
    system, user = "", ""
    for message in payload.get("messages", ()):
        if message.get("role") == "system":
            system = message.get("content", "")
        elif message.get("role") == "user":
            user = message.get("content", "")
    return system, user


_GOLD_PROMPT = re.compile(r"Prompt harm label:\s*(\S+)")
_GOLD_RESPONSE = re.compile(r"Response harm label:\s*(\S+)")
_GOLD_REFUSAL = re.compile(r"Response refusal label:\s*(\S+)")
_SENTENCE_BUDGET = re.compile(r"exactly (\d+) sentences")


def _teacher_gold(user: str, _index: int) -> str:
    """Echo the gold labels found in a distillation prompt, with a clean trace.

    The trace text is derived from a hash of the request so it is stable per
    sample, distinct across samples, and free of leakage phrases, repeated
    n-grams and excess length.
    """
    prompt_match = _GOLD_PROMPT.search(user)
    if prompt_match is None:
        raise UnscriptedRequest("teacher_gold behavior needs a ground-truth label block")
    digest = hashlib.sha256(user.encode("utf-8")).hexdigest()
    trace = (
        f"The request centers on marker {digest[0:6]} and the assistant weighs it "
        f"against the policy. Context token {digest[6:12]} indicates how this "
        f"interaction should be categorized. Given cue {digest[12:18]}, the "
        f"classification follows from the category definitions."
    )
    lines = [f"Prompt harm: {prompt_match.group(1)}"]
    response_match = _GOLD_RESPONSE.search(user)
    if response_match:
        lines.append(f"Response harm: {response_match.group(1)}")
    refusal_match = _GOLD_REFUSAL.search(user)
    if refusal_match:
        lines.append(f"Response refusal: {refusal_match.group(1)}")
    return "<think>" + trace + "</think>\n" + "\n".join(lines)


def _shorten_to_n(user: str, _index: int) -> str:
    """Produce a rewrite with exactly the requested number of sentences."""
    budget_match = _SENTENCE_BUDGET.search(user)
    if budget_match is None:
        raise UnscriptedRequest("shorten_to_n behavior needs an 'exactly N sentences' prompt")
    count = int(budget_match.group(1))
    digest = hashlib.sha256(user.encode("utf-8")).hexdigest()
    sentences = []
    for i in range(count):
        a = digest[(i * 7) % 50 : (i * 7) % 50 + 5]
        b = digest[(i * 11 + 3) % 50 : (i * 11 + 3) % 50 + 5]
        sentences.append(f"Point {i + 1} relies on cue {a} to support outcome {b}.")
    return " ".join(sentences)


_BEHAVIORS = {
    "teacher_gold": _teacher_gold,
    "shorten_to_n": _shorten_to_n,
}


_registry: dict[str, MockBackend] = {}
_registry_lock = threading.Lock()


def register(name: str, backend: MockBackend) -> MockBackend:
    """Register a backend for ``mock://<name>`` URLs (tests use this)."""
    with _registry_lock:
        _registry[name] = backend
    return backend


def clear_registry() -> None:
    with _registry_lock:
        _registry.clear()


def resolve(base_url: str) -> MockBackend:
    """Resolve ``mock://<name-or-script-path>`` to a backend.

    Registered names win; otherwise the remainder is treated as a path to a
    script file, so CLI runs can use mocks without any in-process setup.
    """
    if not base_url.startswith("mock://"):
        raise ValidationError(f"not a mock URL: {base_url!r}")
    rest = base_url[len("mock://") :]
    with _registry_lock:
        backend = _registry.get(rest)
    if backend is not None:
        return backend
    path = Path(rest)
    if path.exists():
        return MockBackend.from_file(path)
    raise ValidationError(
        f"mock endpoint {base_url!r} is neither a registered backend nor a script file"
    )
