"""Domain types and text contracts shared by every pipeline stage.

Labels, samples, taxonomies, the verdict parser and the canonical answer-block
format live here. Everything downstream treats this module as the single
source of truth for how model output is interpreted and how records are
serialized to JSONL.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

DEFAULT_THINK_OPEN = "<think>"
DEFAULT_THINK_CLOSE = "</think>"


class GuardkitError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(GuardkitError):
    """A value violates one of its declared invariants."""


class ParseFailure(enum.Enum):
    MISSING_PROMPT_HARM = "missing_prompt_harm"
    BAD_LABEL = "bad_label"
    UNTERMINATED_TRACE = "unterminated_trace"


class ParseError(GuardkitError):
    """A completion could not be turned into a ParsedJudgment.

    Carries the full raw completion text for audit.
    """

    def __init__(self, failure: ParseFailure, message: str, raw: str):
        super().__init__(f"{failure.value}: {message}")
        self.failure = failure
        self.raw = raw


class HarmLabel(enum.Enum):
    HARMFUL = "harmful"
    UNHARMFUL = "unharmful"
    NONE = "None"

    def render(self) -> str:
        """Token used in prompts and answer blocks ("harmful" / "unharmful" / "None")."""
        return self.value

    def to_json(self) -> str | None:
        return None if self is HarmLabel.NONE else self.value

    @classmethod
    def from_json(cls, value: str | None) -> HarmLabel:
        if value is None:
            return cls.NONE
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown harm label {value!r}") from None


class RefusalLabel(enum.Enum):
    REFUSAL = "refusal"
    COMPLIANCE = "compliance"
    NONE = "None"

    def render(self) -> str:
        return self.value

    def to_json(self) -> str | None:
        return None if self is RefusalLabel.NONE else self.value

    @classmethod
    def from_json(cls, value: str | None) -> RefusalLabel:
        if value is None:
            return cls.NONE
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown refusal label {value!r}") from None


@dataclass(frozen=True)
class GuardSample:
    """One labeled interaction from a safety dataset.

    ``response`` is None for prompt-only samples; in that case both
    response-side gold labels must be the None variants. ``policy`` carries a
    per-sample taxonomy text (topic-following dialogues ship their own
    allowed/disallowed-topic instruction); when unset, the corpus taxonomy is
    used.
    """

    id: str
    prompt: str
    response: str | None = None
    gold_prompt_harm: HarmLabel = HarmLabel.UNHARMFUL
    gold_response_harm: HarmLabel = HarmLabel.NONE
    gold_response_refusal: RefusalLabel = RefusalLabel.NONE
    source: str = ""
    policy: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if not self.prompt:
            raise ValidationError(f"sample {self.id!r}: prompt must be non-empty")
        if self.gold_prompt_harm is HarmLabel.NONE:
            raise ValidationError(f"sample {self.id!r}: prompt harm label may not be None")
        if self.response is None and (
            self.gold_response_harm is not HarmLabel.NONE
            or self.gold_response_refusal is not RefusalLabel.NONE
        ):
            raise ValidationError(
                f"sample {self.id!r}: response is absent, so response-side labels must be None"
            )


def sample_to_dict(sample: GuardSample) -> dict:
    """Canonical JSONL record for a GuardSample (one object per line, UTF-8)."""
    record = {
        "id": sample.id,
        "prompt": sample.prompt,
        "response": sample.response,
        "prompt_harm": sample.gold_prompt_harm.to_json(),
        "response_harm": sample.gold_response_harm.to_json(),
        "response_refusal": sample.gold_response_refusal.to_json(),
        "source": sample.source,
    }
    if sample.policy is not None:
        record["policy"] = sample.policy
    return record


def sample_from_dict(record: dict) -> GuardSample:
    try:
        prompt = record["prompt"]
        sample_id = record["id"]
    except KeyError as exc:
        raise ValidationError(f"sample record is missing key {exc}") from None
    # "None/null/empty" responses all mean: no response.
    response = record.get("response") or None
    return GuardSample(
        id=str(sample_id),
        prompt=prompt,
        response=response,
        gold_prompt_harm=HarmLabel.from_json(record.get("prompt_harm")),
        gold_response_harm=HarmLabel.from_json(record.get("response_harm")),
        gold_response_refusal=RefusalLabel.from_json(record.get("response_refusal")),
        source=record.get("source", ""),
        policy=record.get("policy"),
    )


@dataclass(frozen=True)
class Category:
    code: str
    title: str
    description: str | None = None


@dataclass(frozen=True)
class Taxonomy:
    """A named, ordered list of harm categories rendered into prompt templates.

    Free-text policies (DynaGuard/CoSA-style) are preamble-only taxonomies
    with an empty category list.
    """

    name: str
    preamble: str | None = None
    categories: tuple[Category, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        seen: set[str] = set()
        for cat in self.categories:
            if cat.code and cat.code in seen:
                raise ValidationError(
                    f"taxonomy {self.name!r}: duplicate category code {cat.code!r}"
                )
            seen.add(cat.code)

    @classmethod
    def from_dict(cls, record: dict) -> Taxonomy:
        cats = tuple(
            Category(c["code"], c["title"], c.get("description"))
            for c in record.get("categories", ())
        )
        return cls(name=record["name"], preamble=record.get("preamble"), categories=cats)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "preamble": self.preamble,
            "categories": [
                {"code": c.code, "title": c.title, "description": c.description}
                for c in self.categories
            ],
        }


def render_taxonomy(taxonomy: Taxonomy) -> str:
    """Render a taxonomy block: one category per line, in declared order.

    Deterministic: the same Taxonomy value always yields byte-identical text.
    """
    parts = []
    if taxonomy.preamble:
        parts.append(taxonomy.preamble)
    if taxonomy.categories:
        lines = []
        for cat in taxonomy.categories:
            line = f"{cat.code}: {cat.title}" if cat.code else cat.title
            if cat.description:
                line = f"{line} {cat.description}"
            lines.append(line)
        parts.append("\n".join(lines))
    return "\n\n".join(parts)


@dataclass(frozen=True)
class ParsedJudgment:
    """The three labels (and optional reasoning trace) extracted from a completion."""

    prompt_harm: HarmLabel
    response_harm: HarmLabel
    response_refusal: RefusalLabel
    trace: str | None
    raw: str

    def labels(self) -> tuple[HarmLabel, HarmLabel, RefusalLabel]:
        return (self.prompt_harm, self.response_harm, self.response_refusal)


def verdict_to_dict(verdict: ParsedJudgment | None) -> dict | None:
    if verdict is None:
        return None
    return {
        "prompt_harm": verdict.prompt_harm.to_json(),
        "response_harm": verdict.response_harm.to_json(),
        "response_refusal": verdict.response_refusal.to_json(),
    }


def verdict_from_dict(record: dict | None) -> ParsedJudgment | None:
    if record is None:
        return None
    return ParsedJudgment(
        prompt_harm=HarmLabel.from_json(record.get("prompt_harm")),
        response_harm=HarmLabel.from_json(record.get("response_harm")),
        response_refusal=RefusalLabel.from_json(record.get("response_refusal")),
        trace=None,
        raw="",
    )


def format_judgment(
    prompt_harm: HarmLabel,
    response_harm: HarmLabel,
    response_refusal: RefusalLabel,
) -> str:
    """Emit the canonical three-line answer block."""
    return (
        f"Prompt harm: {prompt_harm.render()}\n"
        f"Response harm: {response_harm.render()}\n"
        f"Response refusal: {response_refusal.render()}"
    )


# A labeled answer line, tolerant of surrounding quotes and whitespace.
_ANSWER_LINE = re.compile(
    r"^[ \t\"'“”]*(prompt\s+harm|response\s+harm|response\s+refusal)"
    r"\s*:\s*(.*)$",
    re.IGNORECASE | re.MULTILINE,
)
_ANSWER_LINE_ONLY = re.compile(
    r"^[ \t\"'“”]*(?:prompt\s+harm|response\s+harm|response\s+refusal)\s*:",
    re.IGNORECASE,
)

_HARM_TOKENS = {
    "harmful": HarmLabel.HARMFUL,
    "unharmful": HarmLabel.UNHARMFUL,
    "none": HarmLabel.NONE,
}
_REFUSAL_TOKENS = {
    "refusal": RefusalLabel.REFUSAL,
    "compliance": RefusalLabel.COMPLIANCE,
    "none": RefusalLabel.NONE,
}


def _clean_token(value: str) -> str:
    token = value.strip().strip("\"'“”").strip()
    token = token.strip("<>").strip()
    return token.rstrip(".").strip().lower()


def _strip_answer_lines(span: str) -> str:
    kept = [line for line in span.splitlines() if not _ANSWER_LINE_ONLY.match(line)]
    return "\n".join(kept)


def parse_judgment(
    raw: str,
    reasoning_expected: bool = False,
    think_open: str = DEFAULT_THINK_OPEN,
    think_close: str = DEFAULT_THINK_CLOSE,
) -> ParsedJudgment:
    """Extract the reasoning span and the three labeled answer lines from ``raw``.

    When ``reasoning_expected`` the span between the think markers becomes the
    trace (delimiters and any answer-format lines excluded). The rest of the
    text is scanned for the labeled lines; the last occurrence of each wins,
    matching is case-insensitive, and surrounding quotes/whitespace are
    tolerated. The literal token "None" maps to the None label variants.
    Unknown trailing text after the answer block is ignored.
    """
    trace: str | None = None
    scan_region = raw
    if reasoning_expected:
        open_idx = raw.find(think_open)
        if open_idx >= 0:
            close_idx = raw.find(think_close, open_idx + len(think_open))
            if close_idx < 0:
                raise ParseError(
                    ParseFailure.UNTERMINATED_TRACE,
                    f"{think_open} span is never closed",
                    raw,
                )
            span = raw[open_idx + len(think_open) : close_idx]
            trace = _strip_answer_lines(span).strip() or None
            scan_region = raw[:open_idx] + raw[close_idx + len(think_close) :]

    found: dict[str, str] = {}
    for match in _ANSWER_LINE.finditer(scan_region):
        name = re.sub(r"\s+", " ", match.group(1).lower())
        found[name] = match.group(2)

    if "prompt harm" not in found:
        raise ParseError(
            ParseFailure.MISSING_PROMPT_HARM, 'no "Prompt harm:" line in output', raw
        )

    prompt_harm = _parse_label("prompt harm", found["prompt harm"], _HARM_TOKENS, raw)
    if prompt_harm is HarmLabel.NONE:
        raise ParseError(
            ParseFailure.BAD_LABEL, 'prompt harm may not be "None"', raw
        )
    response_harm = HarmLabel.NONE
    if "response harm" in found:
        response_harm = _parse_label("response harm", found["response harm"], _HARM_TOKENS, raw)
    response_refusal = RefusalLabel.NONE
    if "response refusal" in found:
        response_refusal = _parse_label(
            "response refusal", found["response refusal"], _REFUSAL_TOKENS, raw
        )
    return ParsedJudgment(prompt_harm, response_harm, response_refusal, trace, raw)


def _parse_label(name, value, tokens, raw):
    token = _clean_token(value)
    try:
        return tokens[token]
    except KeyError:
        raise ParseError(
            ParseFailure.BAD_LABEL, f"unrecognized {name} token {token!r}", raw
        ) from None
