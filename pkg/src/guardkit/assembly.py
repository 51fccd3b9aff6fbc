"""Turn accepted records into training-ready SFT corpora.

Covers subset sampling, reasoning / non-reasoning target construction,
dual-mode partitioning with mode-token prefixes, topic-following merging and
difficult-sample augmentation. Every operation is a pure function of
(inputs, seed).
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, replace

from .core import (
    DEFAULT_THINK_CLOSE,
    DEFAULT_THINK_OPEN,
    Taxonomy,
    ValidationError,
    format_judgment,
)
from .distill import STATUS_ACCEPTED, DistilledRecord
from .templates import PromptTemplate, build_inference_prompt

logger = logging.getLogger(__name__)

MODE_REASONING = "reasoning"
MODE_NON_REASONING = "non_reasoning"

DEFAULT_MODE_TOKENS = ("[reasoning]", "[non-reasoning]")


@dataclass(frozen=True)
class TrainingExample:
    """One (mode, input, target) triple ready for SFT export.

    The input is the full inference prompt (taxonomy included, mode prefix
    included when dual-mode) and never contains gold labels. A Reasoning
    target is think-open + trace + think-close + newline + the canonical
    answer block; a NonReasoning target is the answer block only.
    """

    mode: str
    input: str
    target: str
    origin_id: str
    origin_source: str
    oversampled: bool = False


def example_to_dict(example: TrainingExample) -> dict:
    return {
        "input": example.input,
        "target": example.target,
        "mode": example.mode,
        "origin_id": example.origin_id,
        "origin_source": example.origin_source,
        "oversampled": example.oversampled,
    }


def example_from_dict(record: dict) -> TrainingExample:
    return TrainingExample(
        mode=record["mode"],
        input=record["input"],
        target=record["target"],
        origin_id=record["origin_id"],
        origin_source=record.get("origin_source", ""),
        oversampled=bool(record.get("oversampled", False)),
    )


@dataclass(frozen=True)
class AssemblySpec:
    subset_size: int | None = None
    seed: int = 0
    dual_mode: bool = False
    reasoning_fraction: float = 0.5
    mode_tokens: tuple[str, str] = DEFAULT_MODE_TOKENS
    merge_sources: tuple[str, ...] = ()
    difficult_multiplier: int = 1
    single_mode: str = MODE_REASONING
    think_open: str = DEFAULT_THINK_OPEN
    think_close: str = DEFAULT_THINK_CLOSE

    def __post_init__(self):
        if self.dual_mode and not (0 < self.reasoning_fraction < 1):
            raise ValidationError(
                "reasoning_fraction must be in (0, 1) when dual_mode is on"
            )
        if self.difficult_multiplier < 1:
            raise ValidationError("difficult_multiplier must be >= 1")
        if self.single_mode not in (MODE_REASONING, MODE_NON_REASONING):
            raise ValidationError(f"unknown mode {self.single_mode!r}")


def sample_subset(records: list, k: int, seed: int) -> list:
    """Uniform sample without replacement; deterministic for fixed
    (input order, k, seed). Distinct seeds give distinct subsets."""
    if k > len(records):
        raise ValidationError(
            f"cannot sample {k} records from a corpus of {len(records)}"
        )
    return random.Random(seed).sample(records, k)


def assemble(
    records: list[DistilledRecord],
    taxonomy: Taxonomy,
    spec: AssemblySpec,
    inference_template: PromptTemplate,
) -> list[TrainingExample]:
    """Build TrainingExamples from accepted records, in input order.

    Dual-mode partitions the records by a seeded shuffle at
    ``reasoning_fraction`` and prefixes each input with the matching mode
    token and a space.
    """
    records = list(records)
    for record in records:
        if record.status != STATUS_ACCEPTED:
            raise ValidationError(
                f"assemble expects accepted records, got {record.status!r} "
                f"for sample {record.sample.id!r}"
            )
        if not record.trace:
            raise ValidationError(f"record {record.sample.id!r} has no trace")

    modes = _assign_modes(len(records), spec)
    examples = []
    for record, mode in zip(records, modes):
        token = None
        if spec.dual_mode:
            token = spec.mode_tokens[0] if mode == MODE_REASONING else spec.mode_tokens[1]
        prompt = build_inference_prompt(
            inference_template, taxonomy, record.sample, mode_token=token
        )
        examples.append(
            TrainingExample(
                mode=mode,
                input=prompt,
                target=_target_for(record, mode, spec),
                origin_id=record.sample.id,
                origin_source=record.sample.source,
            )
        )
    return examples


def _assign_modes(count: int, spec: AssemblySpec) -> list[str]:
    if not spec.dual_mode:
        return [spec.single_mode] * count
    indices = list(range(count))
    random.Random(spec.seed).shuffle(indices)
    n_reasoning = int(spec.reasoning_fraction * count)
    reasoning_set = set(indices[:n_reasoning])
    return [
        MODE_REASONING if i in reasoning_set else MODE_NON_REASONING
        for i in range(count)
    ]


def _target_for(record: DistilledRecord, mode: str, spec: AssemblySpec) -> str:
    sample = record.sample
    answer = format_judgment(
        sample.gold_prompt_harm, sample.gold_response_harm, sample.gold_response_refusal
    )
    if mode == MODE_NON_REASONING:
        return answer
    return f"{spec.think_open}{record.trace}{spec.think_close}\n{answer}"


def merge_topic_following(
    safety: list[TrainingExample],
    topic_following: list[TrainingExample],
    seed: int,
) -> list[TrainingExample]:
    """Concatenate and seeded-shuffle; origin_source is preserved so
    per-source counts stay auditable. Duplicate origin_ids across the two
    inputs warn but both copies are kept."""
    safety_ids = {e.origin_id for e in safety}
    duplicates = sorted(safety_ids & {e.origin_id for e in topic_following})
    if duplicates:
        logger.warning(
            "%d origin_ids appear in both corpora (keeping both): %s",
            len(duplicates),
            duplicates[:5],
        )
    merged = list(safety) + list(topic_following)
    random.Random(seed).shuffle(merged)
    return merged


def augment_with_difficult(
    base: list[TrainingExample],
    difficult_ids: set[str],
    multiplier: int,
) -> list[TrainingExample]:
    """Append ``multiplier`` extra copies of each difficult example to the
    base corpus; appended copies are flagged as oversampled."""
    if multiplier < 1:
        raise ValidationError("multiplier must be >= 1")
    difficult_ids = set(difficult_ids)
    base_ids = {e.origin_id for e in base}
    missing = sorted(difficult_ids - base_ids)
    if missing:
        raise ValidationError(
            f"{len(missing)} difficult ids not present in the base corpus: {missing}"
        )
    extra = []
    for example in base:
        if example.origin_id in difficult_ids:
            extra.extend(
                replace(example, oversampled=True) for _ in range(multiplier)
            )
    return list(base) + extra


def corpus_histograms(examples: list[TrainingExample]) -> dict:
    """Mode and source histograms for the sidecar manifest."""
    return {
        "size": len(examples),
        "mode_histogram": dict(sorted(Counter(e.mode for e in examples).items())),
        "source_histogram": dict(
            sorted(Counter(e.origin_source for e in examples).items())
        ),
        "oversampled": sum(1 for e in examples if e.oversampled),
    }
