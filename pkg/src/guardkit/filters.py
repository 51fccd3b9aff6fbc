"""Hybrid trace-quality gate: rule-based detectors plus an optional
LLM-as-judge pass.

The rule detectors target the failure modes that show up in teacher traces:
explicit mention of the gold labels (label leakage), repetitive phrasing
(n-gram repetition) and excessive verbosity (overthinking). Rule findings
reject hard; the judge gate fails open so a flaky judge can never silently
destroy a corpus.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .budget import count_sentences
from .client import ChatClient, EndpointConfig, ExhaustedRetries, SamplingParams, TransportError
from .core import GuardkitError, ValidationError
from .distill import STATUS_ACCEPTED, STATUS_PENDING, STATUS_REJECTED, DistilledRecord
from .templates import PromptTemplate

logger = logging.getLogger(__name__)

RULE_LABEL_LEAKAGE = "label_leakage"
RULE_NGRAM_REPETITION = "ngram_repetition"
RULE_OVERTHINKING = "overthinking"
RULE_JUDGE_REJECT = "judge_reject"

DEFAULT_LEAKAGE_PATTERNS = (
    r"ground[\s-]truth",
    r"the labels? (?:say|says|state|states)",
    r"as (?:given|stated) in the labels?",
    r"provided labels?",
)


class ConfigError(GuardkitError):
    """Bad filter configuration (e.g. an invalid regex), caught at load time."""


@dataclass(frozen=True)
class FilterFinding:
    rule: str
    detail: str
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class FilterConfig:
    leakage_patterns: tuple[str, ...] = DEFAULT_LEAKAGE_PATTERNS
    ngram_n: int = 4
    ngram_repeat_threshold: int = 3
    repeat_fraction_threshold: float = 0.15
    max_trace_sentences: int = 40
    max_trace_words: int = 600
    judge: tuple[EndpointConfig, PromptTemplate] | None = None
    compiled_leakage: tuple[re.Pattern, ...] = field(
        default=(), repr=False, compare=False
    )

    def __post_init__(self):
        if self.ngram_n < 2:
            raise ConfigError("ngram_n must be >= 2")
        if self.ngram_repeat_threshold < 1:
            raise ConfigError("ngram_repeat_threshold must be positive")
        if not (0 < self.repeat_fraction_threshold <= 1):
            raise ConfigError("repeat_fraction_threshold must be in (0, 1]")
        if self.max_trace_sentences < 1 or self.max_trace_words < 1:
            raise ConfigError("overthinking limits must be positive")
        compiled = []
        for pattern in self.leakage_patterns:
            try:
                compiled.append(re.compile(pattern, re.IGNORECASE))
            except re.error as exc:
                raise ConfigError(f"invalid leakage regex {pattern!r}: {exc}") from exc
        object.__setattr__(self, "compiled_leakage", tuple(compiled))


def detect_label_leakage(trace: str, config: FilterConfig) -> list[FilterFinding]:
    """One finding per pattern match, with character offsets into the trace."""
    findings = []
    for pattern in config.compiled_leakage:
        for match in pattern.finditer(trace):
            findings.append(
                FilterFinding(
                    rule=RULE_LABEL_LEAKAGE,
                    detail=f"matched {pattern.pattern!r}: {match.group(0)!r}",
                    span=(match.start(), match.end()),
                )
            )
    return findings


_WORD = re.compile(r"[\w']+")


def detect_repetition(
    trace: str, config: FilterConfig
) -> tuple[int, float, list[FilterFinding]]:
    """Count n-gram repetition over lowercased, punctuation-stripped tokens.

    Returns (max count of any single n-gram, fraction of tokens covered by
    n-grams occurring at least twice, findings). Traces shorter than n tokens
    return (0, 0.0, []).
    """
    tokens = _WORD.findall(trace.lower())
    n = config.ngram_n
    total = len(tokens)
    if total < n:
        return 0, 0.0, []
    counts: dict[tuple[str, ...], int] = {}
    grams = []
    for i in range(total - n + 1):
        gram = tuple(tokens[i : i + n])
        grams.append(gram)
        counts[gram] = counts.get(gram, 0) + 1
    max_count = max(counts.values())
    covered = [False] * total
    for i, gram in enumerate(grams):
        if counts[gram] >= 2:
            for j in range(i, i + n):
                covered[j] = True
    fraction = sum(covered) / total
    findings = []
    if max_count >= config.ngram_repeat_threshold or fraction >= config.repeat_fraction_threshold:
        top_gram = max(counts, key=lambda g: counts[g])
        findings.append(
            FilterFinding(
                rule=RULE_NGRAM_REPETITION,
                detail=(
                    f"{n}-gram {' '.join(top_gram)!r} occurs {max_count}x; "
                    f"repeat coverage {fraction:.3f}"
                ),
            )
        )
    return max_count, fraction, findings


def detect_overthinking(trace: str, config: FilterConfig) -> FilterFinding | None:
    sentences = count_sentences(trace)
    words = len(trace.split())
    if sentences > config.max_trace_sentences or words > config.max_trace_words:
        return FilterFinding(
            rule=RULE_OVERTHINKING,
            detail=(
                f"{sentences} sentences (max {config.max_trace_sentences}), "
                f"{words} words (max {config.max_trace_words})"
            ),
        )
    return None


_JUDGE_PARAMS = SamplingParams(temperature=0.0, top_p=1.0, max_tokens=256, n=1)


def judge_trace(
    record: DistilledRecord,
    client: ChatClient,
    template: PromptTemplate,
) -> FilterFinding | None:
    """LLM-as-judge pass. First-line verdict PASS/FAIL; anything unparseable
    counts as a pass with a logged warning (rule gates stay authoritative).
    """
    sample = record.sample
    prompt = template.render(
        trace=record.trace,
        prompt_harm_label=sample.gold_prompt_harm.render(),
        response_harm_label=sample.gold_response_harm.render(),
        response_refusal_label=sample.gold_response_refusal.render(),
    )
    try:
        completions = client.chat(None, prompt, _JUDGE_PARAMS)
    except (ExhaustedRetries, TransportError) as exc:
        logger.warning("judge unavailable for sample %s, passing: %s", sample.id, exc)
        return None
    text = completions[0].text.strip()
    first_line = text.splitlines()[0].strip() if text else ""
    upper = first_line.upper()
    if upper.startswith("PASS"):
        return None
    if upper.startswith("FAIL"):
        reason = first_line[4:].lstrip(" :").strip() or "judge rejected"
        return FilterFinding(rule=RULE_JUDGE_REJECT, detail=reason)
    logger.warning(
        "judge verdict unparseable for sample %s, treating as pass: %r",
        sample.id,
        first_line[:80],
    )
    return None


def run_filter(
    records,
    config: FilterConfig,
    judge_client: ChatClient | None = None,
) -> tuple[list[DistilledRecord], list[DistilledRecord]]:
    """Partition Pending records into (accepted, rejected).

    Detectors run in order leakage -> repetition -> overthinking -> judge; any
    finding rejects, with the full finding list attached. Conservation holds:
    every input record lands in exactly one partition, order preserved.
    """
    if config.judge is not None and judge_client is None:
        judge_client = ChatClient(config.judge[0])
    accepted: list[DistilledRecord] = []
    rejected: list[DistilledRecord] = []
    for record in records:
        if record.status != STATUS_PENDING:
            raise ValidationError(
                f"run_filter expects pending records, got {record.status!r} "
                f"for sample {record.sample.id!r}"
            )
        if not record.trace:
            raise ValidationError(f"pending record {record.sample.id!r} has no trace")
        findings = list(detect_label_leakage(record.trace, config))
        _, _, repetition = detect_repetition(record.trace, config)
        findings.extend(repetition)
        overthinking = detect_overthinking(record.trace, config)
        if overthinking is not None:
            findings.append(overthinking)
        if not findings and config.judge is not None:
            judge_finding = judge_trace(record, judge_client, config.judge[1])
            if judge_finding is not None:
                findings.append(judge_finding)
        if findings:
            reasons = tuple(dict.fromkeys(f.rule for f in findings))
            rejected.append(
                replace(
                    record,
                    status=STATUS_REJECTED,
                    reasons=reasons,
                    findings=tuple(findings),
                )
            )
        else:
            accepted.append(replace(record, status=STATUS_ACCEPTED))
    return accepted, rejected
