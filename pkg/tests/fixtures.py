"""Synthetic corpora and mock scripts shared by the test modules.

Everything here is built independently of the code under test: clean traces
are clean by construction (a unique token at least every third word means no
4-gram can repeat), plants are planted by construction, and mock scripts spell
out every generation the guard should return.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from guardkit.core import GuardSample, HarmLabel, RefusalLabel, sample_to_dict
from guardkit.distill import DistilledRecord, STATUS_PENDING

_FILLERS = [
    ("The", "request cites", "policy while", "remains neutral."),
    ("A", "reviewer weighs", "context since", "looks benign."),
    ("This", "turn mentions", "material and", "stays factual."),
    ("One", "reading treats", "phrasing as", "seems direct."),
]


def _unique_word(counter: int) -> str:
    return f"tok{counter}q"


def clean_trace(rng: random.Random, sentences: int = 3, counter_start: int = 0) -> str:
    """A trace with no repeated 4-gram: unique tokens sit at most three words apart."""
    parts = []
    counter = counter_start
    for _ in range(sentences):
        lead, a, b, tail = _FILLERS[rng.randrange(len(_FILLERS))]
        parts.append(
            f"{lead} {_unique_word(counter)} {a} {_unique_word(counter + 1)} "
            f"{b} {_unique_word(counter + 2)} {tail}"
        )
        counter += 3
    return " ".join(parts)


LEAK_PHRASES = [
    "The ground truth labels say this request is harmful.",
    "Using the ground-truth annotation here settles the question.",
    "Clearly the label says this one is unharmful.",
    "As stated in the label, the response complies.",
    "The provided label already decides the outcome.",
]


def leak_trace(rng: random.Random, index: int, counter_start: int) -> str:
    base = clean_trace(rng, sentences=2, counter_start=counter_start)
    return f"{base} {LEAK_PHRASES[index % len(LEAK_PHRASES)]}"


def repetition_trace(rng: random.Random, counter_start: int) -> str:
    base = clean_trace(rng, sentences=2, counter_start=counter_start)
    loop = " ".join(["circle back and check"] * 6)
    return f"{base} {loop}"


def overthinking_trace(rng: random.Random, kind: str, counter_start: int) -> str:
    if kind == "sentences":
        return clean_trace(rng, sentences=45, counter_start=counter_start)
    words = " ".join(_unique_word(counter_start + i) for i in range(700))
    return f"{words} done."


def planted_defect_corpus(
    seed: int = 7,
    clean: int = 80,
    leaks: int = 10,
    repetitions: int = 5,
    overthinking: int = 5,
) -> tuple[list[DistilledRecord], dict[str, str | None]]:
    """A pending-record corpus with known plants.

    Returns (records, plant_map) where plant_map maps sample id to the
    expected rejection rule, or None for clean traces.
    """
    rng = random.Random(seed)
    records: list[DistilledRecord] = []
    plant_map: dict[str, str | None] = {}
    counter = 0

    def add(sample_id: str, trace: str, rule: str | None):
        sample = GuardSample(
            id=sample_id,
            prompt=f"[plant {sample_id}] request text",
            response="response text",
            gold_prompt_harm=HarmLabel.HARMFUL,
            gold_response_harm=HarmLabel.UNHARMFUL,
            gold_response_refusal=RefusalLabel.REFUSAL,
            source="planted",
        )
        records.append(
            DistilledRecord(
                sample=sample, trace=trace, teacher_model="fixture", status=STATUS_PENDING
            )
        )
        plant_map[sample_id] = rule

    for i in range(clean):
        add(f"clean{i:03d}", clean_trace(rng, counter_start=counter), None)
        counter += 200
    for i in range(leaks):
        add(f"leak{i:03d}", leak_trace(rng, i, counter), "label_leakage")
        counter += 200
    for i in range(repetitions):
        add(f"rep{i:03d}", repetition_trace(rng, counter), "ngram_repetition")
        counter += 200
    for i in range(overthinking):
        kind = "sentences" if i % 2 == 0 else "words"
        add(f"over{i:03d}", overthinking_trace(rng, kind, counter), "overthinking")
        counter += 1000

    order = list(range(len(records)))
    rng.shuffle(order)
    return [records[i] for i in order], plant_map


_PROMPT_TOPICS = [
    "summarize a news article about local weather",
    "write a short poem about the sea",
    "explain how to pick a strong password",
    "describe the plot of a public-domain novel",
    "draft a polite email to a landlord",
]


def synthetic_samples(count: int = 50, with_policy: bool = False) -> list[GuardSample]:
    """Deterministic GuardSamples with unique [case ...] markers in the prompt."""
    samples = []
    for i in range(count):
        harmful = i % 3 == 0
        has_response = i % 4 != 1
        refusal = RefusalLabel.REFUSAL if (has_response and harmful) else (
            RefusalLabel.COMPLIANCE if has_response else RefusalLabel.NONE
        )
        samples.append(
            GuardSample(
                id=f"s{i:03d}",
                prompt=f"[case s{i:03d}] Please {_PROMPT_TOPICS[i % len(_PROMPT_TOPICS)]}.",
                response=f"Assistant reply for case s{i:03d}." if has_response else None,
                gold_prompt_harm=HarmLabel.HARMFUL if harmful else HarmLabel.UNHARMFUL,
                gold_response_harm=(
                    (HarmLabel.UNHARMFUL if harmful else HarmLabel.UNHARMFUL)
                    if has_response
                    else HarmLabel.NONE
                ),
                gold_response_refusal=refusal,
                source="synthetic",
                policy=f"Policy text for case s{i:03d}." if with_policy else None,
            )
        )
    return samples


def guard_reply(sample: GuardSample, correct: bool, think: bool = True) -> str:
    """What a guard model answering this sample would emit."""
    prompt_harm = sample.gold_prompt_harm
    if not correct:
        prompt_harm = (
            HarmLabel.UNHARMFUL
            if prompt_harm is HarmLabel.HARMFUL
            else HarmLabel.HARMFUL
        )
    body = (
        f"Prompt harm: {prompt_harm.render()}\n"
        f"Response harm: {sample.gold_response_harm.render()}\n"
        f"Response refusal: {sample.gold_response_refusal.render()}"
    )
    if think:
        return f"<think>Weighing case {sample.id} against the categories.</think>\n{body}"
    return body


def guard_script(
    samples: list[GuardSample],
    correct_plan,
    n: int = 4,
    delay_s: float = 0.0,
) -> dict:
    """Mock script: one entry per sample with its n scripted generations.

    ``correct_plan(sample, index)`` decides whether generation ``index`` for
    ``sample`` answers correctly.
    """
    entries = []
    for sample in samples:
        texts = [guard_reply(sample, correct_plan(sample, g)) for g in range(n)]
        entries.append({"match": f"[case {sample.id}]", "texts": texts})
    return {"entries": entries, "delay_s": delay_s}


def write_samples(path: Path, samples: list[GuardSample]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample_to_dict(sample), sort_keys=True) + "\n")


def e2e_workspace(root: Path, count: int = 50) -> dict:
    """Write a complete pipeline workspace: samples, mock scripts, benchmark
    manifests and the run config. Content is deterministic."""
    root = Path(root)
    (root / "mocks").mkdir(parents=True, exist_ok=True)
    (root / "benchmarks").mkdir(parents=True, exist_ok=True)
    (root / "out").mkdir(parents=True, exist_ok=True)

    samples = synthetic_samples(count)
    write_samples(root / "samples.jsonl", samples)

    def plan(sample: GuardSample, generation: int) -> bool:
        tail = int(sample.id[1:]) % 10
        if tail == 7:  # difficult: 3 of 4 correct
            return generation != 3
        if tail == 8:  # noisy: 1 of 4 correct
            return generation == 0
        return True

    scripts = {
        "teacher.json": {
            "entries": [
                {"match": "Rephrase or summarize", "behavior": "shorten_to_n"},
                {"match": "These are the ground truth labels", "behavior": "teacher_gold"},
            ]
        },
        "judge.json": {"default": "PASS"},
        "guard.json": guard_script(samples, plan),
        "guard_baseline.json": {
            "default": {"text": guard_reply(samples[0], True, think=False)},
            "delay_s": 0.019,
        },
        "guard_reasoning.json": {
            "default": {"text": guard_reply(samples[0], True)},
            "delay_s": 0.05143,
        },
    }
    for name, script in scripts.items():
        (root / "mocks" / name).write_text(
            json.dumps(script, indent=2, sort_keys=True), encoding="utf-8"
        )

    benchmarks = {
        "main.json": {
            "name": "synthetic-main",
            "scope": "both",
            "samples": "../samples.jsonl",
            "taxonomy": "wildguard",
        },
        "custom.json": {
            "name": "synthetic-custom",
            "scope": "prompt_only",
            "samples": "../samples.jsonl",
            "taxonomy": "aegis",
        },
    }
    for name, manifest in benchmarks.items():
        (root / "benchmarks" / name).write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )

    config = {
        "seed": 1234,
        "workers": 4,
        "endpoints": {
            "teacher": {"base_url": "mock://mocks/teacher.json", "model_name": "mock-teacher"},
            "judge": {"base_url": "mock://mocks/judge.json", "model_name": "mock-judge"},
            "guard": {"base_url": "mock://mocks/guard.json", "model_name": "mock-guard"},
            "guard_baseline": {
                "base_url": "mock://mocks/guard_baseline.json",
                "model_name": "mock-baseline",
            },
            "guard_reasoning": {
                "base_url": "mock://mocks/guard_reasoning.json",
                "model_name": "mock-reasoning",
            },
        },
        "sampling": {"temperature": 0.6, "top_p": 0.95, "max_tokens": 2048},
        "distill": {"template": "wildguard", "taxonomy": "wildguard", "max_attempts": 3},
        "filter": {"use_judge": True},
        "budget": {"n_sentences": 3, "tolerance": 0, "max_attempts": 3},
        "assembly": {
            "dual_mode": True,
            "reasoning_fraction": 0.5,
            "taxonomy": "wildguard",
            "difficult_multiplier": 1,
        },
        "mine": {"taxonomy": "wildguard", "n": 4},
        "eval": {
            "n_gens": 4,
            "benchmarks": ["benchmarks/main.json", "benchmarks/custom.json"],
            "layout": {
                "prompt_benchmarks": ["synthetic-main"],
                "response_benchmarks": ["synthetic-main"],
                "custom_suites": {"customA": ["synthetic-custom"]},
            },
        },
        "latency": {
            "baseline": "guard_baseline",
            "endpoints": ["guard_baseline", "guard_reasoning"],
            "taxonomy": "wildguard",
            "max_samples": 10,
        },
    }
    (root / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True), encoding="utf-8"
    )
    return {"samples": samples, "config": config}


E2E_COMMANDS = [
    ["distill", "--config", "config.json", "--input", "samples.jsonl",
     "--output", "out/pending.jsonl", "--quarantine", "out/quarantine.jsonl"],
    ["filter", "--config", "config.json", "--input", "out/pending.jsonl",
     "--accepted", "out/accepted.jsonl", "--rejected", "out/rejected.jsonl"],
    ["shorten", "--config", "config.json", "--input", "out/accepted.jsonl",
     "--output", "out/budgeted.jsonl", "--quarantine", "out/budget_rejected.jsonl",
     "--stats", "out/budget_stats.csv"],
    ["mine", "--config", "config.json", "--input", "samples.jsonl",
     "--output", "out/difficulty.jsonl", "--summary", "out/difficulty_summary.json",
     "--difficult-out", "out/difficult_ids.json"],
    ["assemble", "--config", "config.json", "--input", "out/accepted.jsonl",
     "--output", "out/train.jsonl", "--difficult-ids", "out/difficult_ids.json"],
    ["eval", "--config", "config.json", "--output-dir", "out/evals"],
    ["latency", "--config", "config.json", "--samples", "samples.jsonl",
     "--output", "out/latency.csv", "--json", "out/latency.json"],
    ["report", "--config", "config.json", "--reports-dir", "out/evals",
     "--output", "out/report.txt", "--csv", "out/report.csv",
     "--json", "out/report_summary.json"],
]
