"""Teacher-trace distillation: build prompts from the templates, call the
teacher, extract candidate reasoning traces.

A record becomes Pending only when the teacher's parsed labels agree with the
gold labels it was shown and the trace is nonempty; anything else triggers
regeneration with fresh sampling, up to ``max_attempts`` calls per sample.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .client import ChatClient, ExhaustedRetries, SamplingParams, TransportError
from .core import (
    DEFAULT_THINK_CLOSE,
    DEFAULT_THINK_OPEN,
    GuardSample,
    HarmLabel,
    ParsedJudgment,
    ParseError,
    RefusalLabel,
    ValidationError,
    parse_judgment,
    sample_from_dict,
    sample_to_dict,
    verdict_from_dict,
    verdict_to_dict,
)
from .templates import PromptTemplate, Taxonomy, UnboundSlot, render_taxonomy

logger = logging.getLogger(__name__)

STATUS_PENDING = "pending"
STATUS_ACCEPTED = "accepted"
STATUS_REJECTED = "rejected"

REASON_TEACHER_DISAGREES = "teacher_disagrees"
REASON_UNPARSEABLE = "unparseable"
REASON_TRANSPORT = "transport_error"


@dataclass(frozen=True)
class DistilledRecord:
    """A GuardSample plus its extracted trace, parsed verdict and filter state."""

    sample: GuardSample
    trace: str | None = None
    verdict: ParsedJudgment | None = None
    teacher_model: str = ""
    attempt: int = 1
    status: str = STATUS_PENDING
    reasons: tuple[str, ...] = ()
    findings: tuple = ()
    budget: int | None = None


def record_to_dict(record: DistilledRecord) -> dict:
    out = sample_to_dict(record.sample)
    out.update(
        {
            "trace": record.trace,
            "verdict": verdict_to_dict(record.verdict),
            "teacher_model": record.teacher_model,
            "attempt": record.attempt,
            "status": record.status,
            "reasons": list(record.reasons),
        }
    )
    if record.findings:
        out["findings"] = [
            {"rule": f.rule, "detail": f.detail, "span": list(f.span) if f.span else None}
            for f in record.findings
        ]
    if record.budget is not None:
        out["budget"] = record.budget
    return out


def record_from_dict(data: dict) -> DistilledRecord:
    from .filters import FilterFinding  # local import: filters depends on this module

    findings = tuple(
        FilterFinding(
            rule=f["rule"],
            detail=f["detail"],
            span=tuple(f["span"]) if f.get("span") else None,
        )
        for f in data.get("findings", ())
    )
    return DistilledRecord(
        sample=sample_from_dict(data),
        trace=data.get("trace"),
        verdict=verdict_from_dict(data.get("verdict")),
        teacher_model=data.get("teacher_model", ""),
        attempt=int(data.get("attempt", 1)),
        status=data.get("status", STATUS_PENDING),
        reasons=tuple(data.get("reasons", ())),
        findings=findings,
        budget=data.get("budget"),
    )


def build_distill_prompt(
    sample: GuardSample,
    taxonomy: Taxonomy | None,
    template: PromptTemplate,
) -> str:
    """Bind a distillation template: gold labels rendered lowercase, an absent
    response (and its labels) rendered as the literal "None".
    """
    if not template.kind.is_distill:
        raise ValidationError(f"{template.kind.value} is not a distillation template")
    has_response = sample.response is not None
    bindings: dict[str, str] = {
        "prompt": sample.prompt,
        "response": sample.response if has_response else "None",
        "prompt_harm_label": sample.gold_prompt_harm.render(),
    }
    slots = template.slots()
    if "response_harm_label" in slots:
        bindings["response_harm_label"] = _gold_binding(
            sample.gold_response_harm is HarmLabel.NONE,
            sample.gold_response_harm.render(),
            has_response,
            "response harm",
            sample.id,
        )
    if "response_refusal_label" in slots:
        bindings["response_refusal_label"] = _gold_binding(
            sample.gold_response_refusal is RefusalLabel.NONE,
            sample.gold_response_refusal.render(),
            has_response,
            "response refusal",
            sample.id,
        )
    if "taxonomy" in slots:
        if sample.policy:
            bindings["taxonomy"] = sample.policy
        elif taxonomy is not None:
            bindings["taxonomy"] = render_taxonomy(taxonomy)
    return template.render(**bindings)


def _gold_binding(is_none, rendered, has_response, label_name, sample_id):
    if is_none:
        if has_response:
            raise UnboundSlot(
                f"sample {sample_id!r}: template needs the {label_name} label "
                "but the sample does not carry one"
            )
        return "None"
    return rendered


def labels_match(
    sample: GuardSample, verdict: ParsedJudgment, require_refusal: bool
) -> bool:
    """The teacher was told the answer; disagreement means a broken trace.

    The refusal label is compared only when the template actually carried a
    refusal slot (Aegis-style templates have none).
    """
    if verdict.prompt_harm is not sample.gold_prompt_harm:
        return False
    if verdict.response_harm is not sample.gold_response_harm:
        return False
    if require_refusal and verdict.response_refusal is not sample.gold_response_refusal:
        return False
    return True


def distill(
    samples,
    taxonomy: Taxonomy | None,
    template: PromptTemplate,
    client: ChatClient,
    params: SamplingParams | None = None,
    max_attempts: int = 3,
    workers: int = 1,
    attempt_offsets: dict[str, int] | None = None,
    think_open: str = DEFAULT_THINK_OPEN,
    think_close: str = DEFAULT_THINK_CLOSE,
) -> list[DistilledRecord]:
    """Distill every sample; output order follows input order.

    Per-sample transport failures never abort the stream: the sample lands in
    the output as a Rejected record for the caller to quarantine.
    ``attempt_offsets`` lets a regeneration loop resume a sample's attempt
    budget where a previous round left off.
    """
    if max_attempts < 1:
        raise ValidationError("max_attempts must be >= 1")
    samples = list(samples)
    params = params or SamplingParams()
    if params.n != 1:
        params = replace(params, n=1)
    offsets = attempt_offsets or {}
    require_refusal = "response_refusal_label" in template.slots()

    def work(sample: GuardSample) -> DistilledRecord:
        return _distill_one(
            sample,
            taxonomy,
            template,
            client,
            params,
            max_attempts,
            offsets.get(sample.id, 0),
            require_refusal,
            think_open,
            think_close,
        )

    if workers <= 1:
        return [work(s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, samples))


def _distill_one(
    sample,
    taxonomy,
    template,
    client,
    params,
    max_attempts,
    attempt_offset,
    require_refusal,
    think_open,
    think_close,
) -> DistilledRecord:
    base = DistilledRecord(
        sample=sample,
        teacher_model=client.endpoint.model_name,
        attempt=max(attempt_offset, 1),
    )
    if attempt_offset >= max_attempts:
        return replace(
            base, status=STATUS_REJECTED, reasons=("attempts_exhausted",)
        )
    prompt = build_distill_prompt(sample, taxonomy, template)
    last_reason = REASON_UNPARSEABLE
    attempt = attempt_offset
    for attempt in range(attempt_offset + 1, max_attempts + 1):
        try:
            completions = client.chat(None, prompt, params)
        except (ExhaustedRetries, TransportError) as exc:
            logger.warning("sample %s: transport failure: %s", sample.id, exc)
            return replace(
                base,
                attempt=attempt,
                status=STATUS_REJECTED,
                reasons=(f"{REASON_TRANSPORT}: {exc}",),
            )
        raw = completions[0].text
        try:
            verdict = parse_judgment(
                raw, reasoning_expected=True, think_open=think_open, think_close=think_close
            )
        except ParseError as exc:
            logger.debug("sample %s attempt %d unparseable: %s", sample.id, attempt, exc)
            last_reason = REASON_UNPARSEABLE
            continue
        if not verdict.trace:
            last_reason = REASON_UNPARSEABLE
            continue
        if not labels_match(sample, verdict, require_refusal):
            last_reason = REASON_TEACHER_DISAGREES
            continue
        return replace(
            base, trace=verdict.trace, verdict=verdict, attempt=attempt, status=STATUS_PENDING
        )
    return replace(
        base, attempt=attempt, status=STATUS_REJECTED, reasons=(last_reason,)
    )
