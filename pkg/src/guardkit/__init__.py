"""guardkit: build reasoning-based guardrail training corpora and evaluate
guard models served over a chat-completion endpoint."""

from .core import (
    Category,
    GuardkitError,
    GuardSample,
    HarmLabel,
    ParsedJudgment,
    ParseError,
    ParseFailure,
    RefusalLabel,
    Taxonomy,
    ValidationError,
    format_judgment,
    parse_judgment,
    render_taxonomy,
)

__version__ = "0.1.0"

__all__ = [
    "Category",
    "GuardkitError",
    "GuardSample",
    "HarmLabel",
    "ParsedJudgment",
    "ParseError",
    "ParseFailure",
    "RefusalLabel",
    "Taxonomy",
    "ValidationError",
    "format_judgment",
    "parse_judgment",
    "render_taxonomy",
    "__version__",
]
