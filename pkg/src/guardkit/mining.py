"""Best-of-N identification of decision-boundary samples against a trained
guard endpoint.

Each sample gets N reasoning generations from the guard (no gold labels in
the prompt); the number of correct classifications buckets it as Easy (all
correct), Difficult (N-2 or N-1 correct, i.e. 2 or 3 of 4) or Noisy (the
rest). Difficult samples feed oversampling; the Noisy bucket separates
annotation noise and is excluded from augmentation by default.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .client import ChatClient, ExhaustedRetries, SamplingParams, TransportError
from .core import (
    GuardSample,
    HarmLabel,
    ParseError,
    Taxonomy,
    ValidationError,
    parse_judgment,
)
from .templates import PromptTemplate, build_inference_prompt

logger = logging.getLogger(__name__)

BUCKET_EASY = "easy"
BUCKET_DIFFICULT = "difficult"
BUCKET_NOISY = "noisy"


def bucket_for(correct_count: int, n: int) -> str:
    """Total over 0..n: Easy iff all correct, Difficult iff n-2 or n-1, Noisy otherwise."""
    if not (0 <= correct_count <= n):
        raise ValidationError(f"correct_count {correct_count} outside [0, {n}]")
    if correct_count == n:
        return BUCKET_EASY
    if correct_count in (n - 1, n - 2):
        return BUCKET_DIFFICULT
    return BUCKET_NOISY


@dataclass(frozen=True)
class GenerationOutcome:
    prompt_harm: str | None
    response_harm: str | None
    response_refusal: str | None
    parse_error: str | None
    correct: bool


@dataclass(frozen=True)
class DifficultyRecord:
    sample_id: str
    n: int
    correct_count: int
    per_generation: tuple[GenerationOutcome, ...]
    bucket: str

    def __post_init__(self):
        if self.correct_count != sum(1 for g in self.per_generation if g.correct):
            raise ValidationError(
                f"sample {self.sample_id!r}: correct_count does not match "
                "the per-generation flags"
            )
        if self.bucket != bucket_for(self.correct_count, self.n):
            raise ValidationError(
                f"sample {self.sample_id!r}: bucket {self.bucket!r} does not "
                f"match correct_count {self.correct_count}/{self.n}"
            )


def record_to_dict(record: DifficultyRecord) -> dict:
    return {
        "sample_id": record.sample_id,
        "n": record.n,
        "correct_count": record.correct_count,
        "bucket": record.bucket,
        "per_generation": [
            {
                "prompt_harm": g.prompt_harm,
                "response_harm": g.response_harm,
                "response_refusal": g.response_refusal,
                "parse_error": g.parse_error,
                "correct": g.correct,
            }
            for g in record.per_generation
        ],
    }


def is_correct(sample: GuardSample, verdict) -> bool:
    """Correct iff prompt-harm matches gold and, when the sample has a gold
    response label, response-harm matches too. Refusal is never scored."""
    if verdict.prompt_harm is not sample.gold_prompt_harm:
        return False
    if sample.gold_response_harm is HarmLabel.NONE:
        return True
    return verdict.response_harm is sample.gold_response_harm


def mine(
    samples,
    taxonomy: Taxonomy,
    client: ChatClient,
    inference_template: PromptTemplate,
    n: int = 4,
    params: SamplingParams | None = None,
    mode_token: str | None = None,
    reasoning_expected: bool = True,
    workers: int = 1,
) -> tuple[list[DifficultyRecord], list[str]]:
    """Run best-of-N over every sample. Transport failure on a sample skips it
    into the deferred list; the run continues."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    samples = list(samples)
    params = params or SamplingParams()
    if params.n != n:
        from dataclasses import replace

        params = replace(params, n=n)

    def work(sample: GuardSample):
        prompt = build_inference_prompt(
            inference_template, taxonomy, sample, mode_token=mode_token
        )
        try:
            completions = client.chat(None, prompt, params)
        except (ExhaustedRetries, TransportError) as exc:
            logger.warning("sample %s deferred: %s", sample.id, exc)
            return sample.id, None
        outcomes = []
        for completion in completions:
            try:
                verdict = parse_judgment(completion.text, reasoning_expected=reasoning_expected)
            except ParseError as exc:
                outcomes.append(
                    GenerationOutcome(None, None, None, exc.failure.value, False)
                )
                continue
            outcomes.append(
                GenerationOutcome(
                    prompt_harm=verdict.prompt_harm.to_json(),
                    response_harm=verdict.response_harm.to_json(),
                    response_refusal=verdict.response_refusal.to_json(),
                    parse_error=None,
                    correct=is_correct(sample, verdict),
                )
            )
        correct_count = sum(1 for o in outcomes if o.correct)
        record = DifficultyRecord(
            sample_id=sample.id,
            n=n,
            correct_count=correct_count,
            per_generation=tuple(outcomes),
            bucket=bucket_for(correct_count, n),
        )
        return sample.id, record

    if workers <= 1:
        results = [work(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, samples))

    records = [record for _, record in results if record is not None]
    deferred = [sample_id for sample_id, record in results if record is None]
    return records, deferred


def summarize(records: list[DifficultyRecord]) -> dict:
    """Bucket counts/fractions plus the correct_count histogram.

    fraction(easy) is the figure comparable to all-N-correct rates.
    """
    if not records:
        raise ValidationError("summarize needs at least one record")
    total = len(records)
    buckets = Counter(record.bucket for record in records)
    correct_counts = Counter(record.correct_count for record in records)
    return {
        "total": total,
        "bucket_counts": {
            b: buckets.get(b, 0) for b in (BUCKET_EASY, BUCKET_DIFFICULT, BUCKET_NOISY)
        },
        "bucket_fractions": {
            b: buckets.get(b, 0) / total
            for b in (BUCKET_EASY, BUCKET_DIFFICULT, BUCKET_NOISY)
        },
        "correct_count_histogram": {
            str(k): correct_counts[k] for k in sorted(correct_counts)
        },
    }


def difficult_ids(
    records: list[DifficultyRecord], include_noisy: bool = False
) -> list[str]:
    wanted = {BUCKET_DIFFICULT}
    if include_noisy:
        wanted.add(BUCKET_NOISY)
    return [record.sample_id for record in records if record.bucket in wanted]
