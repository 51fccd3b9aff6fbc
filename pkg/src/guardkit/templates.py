"""Prompt templates with named slots, shipped as text assets.

The three inference/distillation templates are external assets loaded at
runtime, so wording audits are diffs rather than code reads. Slot binding is
a single pass over the template body: substituted values are never rescanned,
so user content containing brace markers cannot corrupt the rendering.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import (
    GuardkitError,
    GuardSample,
    Taxonomy,
    ValidationError,
    render_taxonomy,
)


class UnboundSlot(GuardkitError):
    """A slot the template references was not given a value."""


class TemplateKind(enum.Enum):
    DISTILL_AEGIS = "distill_aegis"
    DISTILL_WILDGUARD = "distill_wildguard"
    DISTILL_GENERIC = "distill_generic"
    INFERENCE = "inference"
    SHORTEN_BUDGET = "shorten"
    JUDGE = "judge"

    @property
    def is_distill(self) -> bool:
        return self in (
            TemplateKind.DISTILL_AEGIS,
            TemplateKind.DISTILL_WILDGUARD,
            TemplateKind.DISTILL_GENERIC,
        )


SLOT_NAMES = (
    "taxonomy",
    "prompt",
    "response",
    "prompt_harm_label",
    "response_harm_label",
    "response_refusal_label",
    "n_sentences",
    "trace",
)

_SLOT_RE = re.compile(r"\{(" + "|".join(SLOT_NAMES) + r")\}")

REQUIRED_SLOTS: dict[TemplateKind, frozenset[str]] = {
    TemplateKind.DISTILL_AEGIS: frozenset(
        {"prompt", "response", "prompt_harm_label", "response_harm_label"}
    ),
    TemplateKind.DISTILL_WILDGUARD: frozenset(
        {
            "prompt",
            "response",
            "prompt_harm_label",
            "response_harm_label",
            "response_refusal_label",
        }
    ),
    TemplateKind.DISTILL_GENERIC: frozenset(
        {
            "taxonomy",
            "prompt",
            "response",
            "prompt_harm_label",
            "response_harm_label",
            "response_refusal_label",
        }
    ),
    TemplateKind.INFERENCE: frozenset({"taxonomy", "prompt", "response"}),
    TemplateKind.SHORTEN_BUDGET: frozenset({"trace", "n_sentences"}),
    TemplateKind.JUDGE: frozenset(
        {"trace", "prompt_harm_label", "response_harm_label", "response_refusal_label"}
    ),
}


@dataclass(frozen=True)
class PromptTemplate:
    kind: TemplateKind
    body: str

    def __post_init__(self):
        present = {m.group(1) for m in _SLOT_RE.finditer(self.body)}
        missing = REQUIRED_SLOTS[self.kind] - present
        if missing:
            raise ValidationError(
                f"{self.kind.value} template is missing slots: {sorted(missing)}"
            )

    def slots(self) -> frozenset[str]:
        return frozenset(m.group(1) for m in _SLOT_RE.finditer(self.body))

    def render(self, **bindings) -> str:
        """Bind every slot the body references; extra bindings are ignored."""

        def substitute(match: re.Match) -> str:
            name = match.group(1)
            value = bindings.get(name)
            if value is None:
                raise UnboundSlot(
                    f"{self.kind.value} template references {{{name}}} "
                    "but no value was provided"
                )
            return str(value)

        return _SLOT_RE.sub(substitute, self.body)


def load_template(kind: TemplateKind, path: str | Path | None = None) -> PromptTemplate:
    """Load a template from ``path``, or the packaged asset for ``kind``."""
    if path is not None:
        body = Path(path).read_text(encoding="utf-8")
    else:
        asset = resources.files("guardkit").joinpath(
            f"assets/templates/{kind.value}.txt"
        )
        body = asset.read_text(encoding="utf-8")
    return PromptTemplate(kind=kind, body=body.rstrip("\n"))


def load_taxonomy(name_or_path: str | Path) -> Taxonomy:
    """Load a taxonomy by builtin name ("aegis", "wildguard") or JSON file path."""
    import json

    text = None
    candidate = Path(name_or_path)
    if candidate.suffix == ".json" and candidate.exists():
        text = candidate.read_text(encoding="utf-8")
    else:
        asset = resources.files("guardkit").joinpath(
            f"assets/taxonomies/{name_or_path}.json"
        )
        try:
            text = asset.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ValidationError(
                f"taxonomy {name_or_path!r} is neither a builtin name nor a JSON file"
            ) from None
    return Taxonomy.from_dict(json.loads(text))


def build_inference_prompt(
    template: PromptTemplate,
    taxonomy: Taxonomy | str,
    sample: GuardSample,
    mode_token: str | None = None,
) -> str:
    """Render the inference prompt for one sample; no gold labels ever appear.

    ``taxonomy`` may be a Taxonomy value or pre-rendered policy text. A sample
    carrying its own ``policy`` overrides the corpus taxonomy. When
    ``mode_token`` is given (dual-mode models) it is prefixed with a space.
    """
    if template.kind is not TemplateKind.INFERENCE:
        raise ValidationError(f"expected an inference template, got {template.kind.value}")
    if sample.policy:
        taxonomy_text = sample.policy
    elif isinstance(taxonomy, Taxonomy):
        taxonomy_text = render_taxonomy(taxonomy)
    else:
        taxonomy_text = taxonomy
    rendered = template.render(
        taxonomy=taxonomy_text,
        prompt=sample.prompt,
        response=sample.response if sample.response is not None else "None",
    )
    if mode_token:
        return f"{mode_token} {rendered}"
    return rendered
