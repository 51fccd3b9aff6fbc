"""Run configuration: a single JSON file, flag overrides, typed builders.

Secrets never live in the config; endpoints name the environment variable
that holds their key. Relative paths (mock scripts, assets, benchmark
manifests) resolve against the config file's directory, but config hashing
always covers the file as loaded so manifests stay location-independent.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .budget import BudgetConfig
from .client import EndpointConfig, SamplingParams
from .core import GuardkitError
from .evaluation import EvalLayout
from .filters import ConfigError, FilterConfig
from .jsonl import dumps_canonical
from .templates import PromptTemplate, TemplateKind, load_taxonomy, load_template


def load_config(path: str | Path) -> tuple[dict, Path]:
    """Returns (config dict, directory the config lives in)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config, path.parent


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``--set dotted.key=value`` overrides; values parse as JSON when
    they can and fall back to plain strings."""
    for override in overrides:
        key, sep, raw_value = override.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {override!r} is not of the form key=value")
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} crosses a non-object value")
        node[parts[-1]] = value
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps_canonical(config).encode("utf-8")).hexdigest()


def _resolve_path(value: str, config_dir: Path) -> str:
    path = Path(value)
    if path.is_absolute():
        return str(path)
    return str((config_dir / path).resolve())


def endpoint_from_config(config: dict, name: str, config_dir: Path) -> EndpointConfig:
    endpoints = config.get("endpoints", {})
    record = endpoints.get(name)
    if record is None:
        raise ConfigError(f"config has no endpoint named {name!r}")
    record = dict(record)
    base_url = record.get("base_url", "")
    if base_url.startswith("mock://"):
        rest = base_url[len("mock://") :]
        candidate = Path(rest)
        if not candidate.is_absolute() and (config_dir / rest).exists():
            record["base_url"] = "mock://" + _resolve_path(rest, config_dir)
    try:
        return EndpointConfig.from_dict(record)
    except GuardkitError as exc:
        raise ConfigError(f"endpoint {name!r}: {exc}") from exc


def sampling_from_config(config: dict, key: str = "sampling") -> SamplingParams:
    try:
        return SamplingParams.from_dict(config.get(key, {}))
    except GuardkitError as exc:
        raise ConfigError(f"sampling params: {exc}") from exc


def template_from_config(
    config: dict, kind: TemplateKind, config_dir: Path
) -> PromptTemplate:
    """Template override paths live under config["templates"][kind]."""
    overrides = config.get("templates", {})
    override = overrides.get(kind.value)
    if override is None:
        return load_template(kind)
    path = Path(_resolve_path(override, config_dir))
    if not path.exists():
        raise ConfigError(f"template asset {path} does not exist")
    return load_template(kind, path)


def taxonomy_from_config(config: dict, name_or_path: str, config_dir: Path):
    candidate = Path(name_or_path)
    if candidate.suffix == ".json":
        resolved = Path(_resolve_path(name_or_path, config_dir))
        if not resolved.exists():
            raise ConfigError(f"taxonomy asset {resolved} does not exist")
        return load_taxonomy(resolved)
    try:
        return load_taxonomy(name_or_path)
    except GuardkitError as exc:
        raise ConfigError(str(exc)) from exc


def filter_config_from(config: dict, config_dir: Path) -> FilterConfig:
    record = dict(config.get("filter", {}))
    judge = None
    if "judge" in config.get("endpoints", {}) and record.get("use_judge", True):
        endpoint = endpoint_from_config(config, "judge", config_dir)
        template = template_from_config(config, TemplateKind.JUDGE, config_dir)
        judge = (endpoint, template)
    try:
        return FilterConfig(
            leakage_patterns=tuple(
                record.get("leakage_patterns", FilterConfig.leakage_patterns)
            ),
            ngram_n=int(record.get("ngram_n", 4)),
            ngram_repeat_threshold=int(record.get("ngram_repeat_threshold", 3)),
            repeat_fraction_threshold=float(
                record.get("repeat_fraction_threshold", 0.15)
            ),
            max_trace_sentences=int(record.get("max_trace_sentences", 40)),
            max_trace_words=int(record.get("max_trace_words", 600)),
            judge=judge,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"filter config: {exc}") from exc


def budget_config_from(
    config: dict, config_dir: Path, n_sentences: int | None = None
) -> BudgetConfig:
    record = config.get("budget", {})
    n = n_sentences if n_sentences is not None else int(record.get("n_sentences", 1))
    try:
        return BudgetConfig(
            n_sentences=n,
            tolerance=int(record.get("tolerance", 0)),
            shorten_template=template_from_config(
                config, TemplateKind.SHORTEN_BUDGET, config_dir
            ),
        )
    except GuardkitError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"budget config: {exc}") from exc


def layout_from_config(config: dict) -> EvalLayout:
    return EvalLayout.from_dict(config.get("eval", {}).get("layout", {}))


def seed_from_config(config: dict, override: int | None = None) -> int:
    if override is not None:
        return override
    return int(config.get("seed", 0))
