"""Sentence-level reasoning budgets: counting, teacher-driven shortening, and
words-per-sentence diagnostics.

Words (whitespace tokens) stand in for tokens in all length diagnostics;
model-tokenizer counts are not portable.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, replace

from .client import ChatClient, SamplingParams
from .core import (
    DEFAULT_THINK_CLOSE,
    DEFAULT_THINK_OPEN,
    ValidationError,
)

logger = logging.getLogger(__name__)

MIN_BUDGET = 1
MAX_BUDGET = 10

# Tokens that end with terminal punctuation without ending a sentence.
DEFAULT_ABBREVIATIONS = frozenset(
    {
        "e.g.",
        "i.e.",
        "etc.",
        "cf.",
        "vs.",
        "mr.",
        "mrs.",
        "ms.",
        "dr.",
        "prof.",
        "st.",
        "no.",
        "fig.",
        "al.",
    }
)

_TERMINATOR = re.compile(r"[.!?]+(?=\s|$)")
_HAS_WORD = re.compile(r"\w")


def count_sentences(text: str, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS) -> int:
    """Count sentences: terminal punctuation followed by whitespace or end of
    text ends a sentence, configured abbreviations do not, and a final
    unterminated fragment of at least 3 words counts as one sentence.
    """
    if not text:
        return 0
    boundaries = []
    for match in _TERMINATOR.finditer(text):
        head = text[: match.end()]
        token = head.rsplit(None, 1)[-1] if head.split() else head
        token = token.lstrip("(\"'“‘")
        if token.lower() in abbreviations:
            continue
        boundaries.append(match.end())
    count = 0
    previous = 0
    for boundary in boundaries:
        if _HAS_WORD.search(text[previous:boundary]):
            count += 1
        previous = boundary
    tail = text[previous:]
    if len(tail.split()) >= 3:
        count += 1
    return count


@dataclass(frozen=True)
class BudgetConfig:
    """A sentence budget in the studied 1..10 range; tolerance 0 means the
    rewrite must hit the count exactly."""

    n_sentences: int
    tolerance: int = 0
    shorten_template: object = None  # PromptTemplate(SHORTEN_BUDGET)

    def __post_init__(self):
        if not (MIN_BUDGET <= self.n_sentences <= MAX_BUDGET):
            raise ValidationError(
                f"n_sentences must be in [{MIN_BUDGET}, {MAX_BUDGET}], got {self.n_sentences}"
            )
        if self.tolerance < 0:
            raise ValidationError("tolerance must be >= 0")


def shorten_trace(
    record,
    config: BudgetConfig,
    client: ChatClient,
    params: SamplingParams | None = None,
    max_attempts: int = 3,
    leakage_config=None,
    think_open: str = DEFAULT_THINK_OPEN,
    think_close: str = DEFAULT_THINK_CLOSE,
):
    """Rewrite one accepted record's trace to the configured sentence budget.

    The rewrite is accepted when its measured sentence count lands within
    tolerance of the budget and it passes the leakage gate; otherwise the
    teacher is retried, and the final failure rejects the record with the
    measured count attached.
    """
    from .distill import STATUS_ACCEPTED, STATUS_REJECTED
    from .filters import FilterConfig, FilterFinding, detect_label_leakage

    if record.status != STATUS_ACCEPTED:
        raise ValidationError(
            f"shorten_trace expects accepted records, got {record.status!r}"
        )
    if max_attempts < 1:
        raise ValidationError("max_attempts must be >= 1")
    leakage_config = leakage_config or FilterConfig()
    params = params or SamplingParams()
    if params.n != 1:
        params = replace(params, n=1)
    prompt = config.shorten_template.render(
        trace=record.trace, n_sentences=str(config.n_sentences)
    )
    measured = -1
    for _ in range(max_attempts):
        completions = client.chat(None, prompt, params)
        rewrite = _strip_think_span(completions[0].text, think_open, think_close).strip()
        measured = count_sentences(rewrite)
        if abs(measured - config.n_sentences) > config.tolerance:
            continue
        if detect_label_leakage(rewrite, leakage_config):
            continue
        return replace(record, trace=rewrite, budget=config.n_sentences)
    finding = FilterFinding(
        rule="budget_violation",
        detail=f"measured {measured} sentences for budget {config.n_sentences}",
    )
    return replace(
        record,
        status=STATUS_REJECTED,
        reasons=("budget_violation",),
        findings=(finding,),
        budget=config.n_sentences,
    )


def _strip_think_span(text: str, think_open: str, think_close: str) -> str:
    # Reasoning teachers think before answering even when asked not to;
    # the rewrite is whatever follows the think span.
    open_idx = text.find(think_open)
    if open_idx < 0:
        return text
    close_idx = text.find(think_close, open_idx + len(think_open))
    if close_idx < 0:
        return text
    return text[:open_idx] + text[close_idx + len(think_close) :]


@dataclass(frozen=True)
class BudgetRow:
    n_sentences: int
    mean_words_per_sentence: float
    mean_total_words: float
    sample_count: int


@dataclass(frozen=True)
class BudgetStats:
    rows: tuple[BudgetRow, ...]
    skipped: int


def budget_stats(corpora: dict[int, list[str]]) -> BudgetStats:
    """Words-per-sentence diagnostics per budget, rows sorted by budget.

    Traces with zero sentences are excluded and tallied as skipped.
    """
    rows = []
    skipped = 0
    for budget in sorted(corpora):
        traces = corpora[budget]
        if not traces:
            raise ValidationError(f"budget {budget}: trace list is empty")
        words_per_sentence = []
        total_words = []
        for trace in traces:
            sentences = count_sentences(trace)
            if sentences == 0:
                skipped += 1
                continue
            words = len(trace.split())
            words_per_sentence.append(words / sentences)
            total_words.append(words)
        if not words_per_sentence:
            logger.warning("budget %d: all traces skipped", budget)
            continue
        rows.append(
            BudgetRow(
                n_sentences=budget,
                mean_words_per_sentence=statistics.fmean(words_per_sentence),
                mean_total_words=statistics.fmean(total_words),
                sample_count=len(words_per_sentence),
            )
        )
    return BudgetStats(rows=tuple(rows), skipped=skipped)


def stats_to_csv(stats: BudgetStats) -> str:
    lines = ["budget,mean_words_per_sentence,mean_total_words,n"]
    for row in stats.rows:
        lines.append(
            f"{row.n_sentences},{row.mean_words_per_sentence:.4f},"
            f"{row.mean_total_words:.4f},{row.sample_count}"
        )
    return "\n".join(lines) + "\n"
