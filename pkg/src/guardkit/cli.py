"""Stage-per-subcommand pipeline driver.

Each subcommand reads JSONL in, writes JSONL/JSON out atomically, and writes a
manifest (config hash, seed, input/output counts, wall time) sufficient to
rerun the command bit-identically. Exit codes: 0 success, 1 domain error,
2 usage/config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .assembly import (
    AssemblySpec,
    assemble,
    augment_with_difficult,
    corpus_histograms,
    example_from_dict,
    example_to_dict,
    merge_topic_following,
    sample_subset,
)
from .budget import budget_stats, shorten_trace, stats_to_csv
from .client import ChatClient
from .config import (
    ConfigError,
    apply_overrides,
    budget_config_from,
    config_hash,
    endpoint_from_config,
    filter_config_from,
    layout_from_config,
    load_config,
    sampling_from_config,
    seed_from_config,
    taxonomy_from_config,
    template_from_config,
)
from .core import GuardkitError, sample_from_dict, sample_to_dict
from .distill import (
    STATUS_ACCEPTED,
    STATUS_PENDING,
    STATUS_REJECTED,
    distill,
    record_from_dict,
    record_to_dict,
)
from .evaluation import (
    Benchmark,
    EvalReport,
    aggregate,
    evaluate,
    latency_bench,
    latency_to_csv,
    render_summary_table,
    report_from_dict,
    report_to_dict,
    summary_to_csv,
)
from .filters import run_filter
from .jsonl import read_json, read_jsonl, write_json, write_jsonl, write_text
from .mining import difficult_ids, mine, record_to_dict as difficulty_to_dict, summarize
from .templates import TemplateKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

_DISTILL_TEMPLATES = {
    "aegis": TemplateKind.DISTILL_AEGIS,
    "wildguard": TemplateKind.DISTILL_WILDGUARD,
    "generic": TemplateKind.DISTILL_GENERIC,
}


class _Run:
    """Per-command context: effective config, clients used, timing."""

    def __init__(self, args):
        self.args = args
        self.config, self.config_dir = load_config(args.config)
        apply_overrides(self.config, args.set or [])
        self.seed = seed_from_config(self.config, getattr(args, "seed", None))
        self.workers = int(self.config.get("workers", 1))
        self.started = time.monotonic()
        self.clients: list[ChatClient] = []

    def client(self, endpoint_name: str) -> ChatClient:
        endpoint = endpoint_from_config(self.config, endpoint_name, self.config_dir)
        client = ChatClient(endpoint)
        self.clients.append(client)
        return client

    def write_manifest(self, command, manifest_path, inputs, outputs, extra=None):
        wall = any(client.wall_clock for client in self.clients)
        manifest = {
            "command": command,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "inputs": inputs,
            "outputs": outputs,
            "clock": "wall" if wall else "simulated",
            "wall_time_s": round(time.monotonic() - self.started, 3) if wall else 0.0,
        }
        if extra:
            manifest.update(extra)
        write_json(manifest_path, manifest)


def _read_samples(path):
    return [sample_from_dict(row) for row in read_jsonl(path)]


def _read_records(path):
    return [record_from_dict(row) for row in read_jsonl(path)]


def _existing_ids(path) -> set[str]:
    path = Path(path)
    if not path.exists():
        return set()
    return {row["id"] for row in read_jsonl(path)}


def _existing_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return list(read_jsonl(path))


def cmd_distill(args) -> int:
    run = _Run(args)
    distill_cfg = run.config.get("distill", {})
    template_name = args.template or distill_cfg.get("template", "wildguard")
    if template_name not in _DISTILL_TEMPLATES:
        raise ConfigError(
            f"unknown distillation template {template_name!r} "
            f"(expected one of {sorted(_DISTILL_TEMPLATES)})"
        )
    template = template_from_config(
        run.config, _DISTILL_TEMPLATES[template_name], run.config_dir
    )
    taxonomy_name = args.taxonomy or distill_cfg.get("taxonomy", "wildguard")
    taxonomy = taxonomy_from_config(run.config, taxonomy_name, run.config_dir)
    max_attempts = args.max_attempts or int(distill_cfg.get("max_attempts", 3))
    client = run.client("teacher")
    params = sampling_from_config(run.config)

    samples = _read_samples(args.input)
    done_ids = (
        _existing_ids(args.output) | _existing_ids(args.quarantine)
        if args.resume
        else set()
    )
    todo = [s for s in samples if s.id not in done_ids]
    if done_ids:
        logger.info("resume: skipping %d already-processed samples", len(samples) - len(todo))

    records = distill(
        todo,
        taxonomy,
        template,
        client,
        params,
        max_attempts=max_attempts,
        workers=run.workers,
    )
    pending_rows = _existing_rows(args.output) if args.resume else []
    rejected_rows = _existing_rows(args.quarantine) if args.resume else []
    pending_rows += [record_to_dict(r) for r in records if r.status == STATUS_PENDING]
    rejected_rows += [record_to_dict(r) for r in records if r.status == STATUS_REJECTED]
    n_pending = write_jsonl(args.output, pending_rows)
    n_rejected = write_jsonl(args.quarantine, rejected_rows)
    run.write_manifest(
        "distill",
        args.output + ".manifest.json",
        inputs={args.input: len(samples)},
        outputs={args.output: n_pending, args.quarantine: n_rejected},
        extra={"template": template_name, "taxonomy": taxonomy_name,
               "max_attempts": max_attempts},
    )
    logger.info("distilled %d samples: %d pending, %d quarantined",
                len(samples), n_pending, n_rejected)
    return EXIT_OK


def cmd_filter(args) -> int:
    run = _Run(args)
    # Build the filter config (and compile its regexes) before touching data.
    filter_config = filter_config_from(run.config, run.config_dir)
    judge_client = None
    if filter_config.judge is not None:
        judge_client = ChatClient(filter_config.judge[0])
        run.clients.append(judge_client)

    pending = _read_records(args.input)
    accepted, rejected = run_filter(pending, filter_config, judge_client)

    rounds = args.regenerate or 0
    if rounds:
        distill_cfg = run.config.get("distill", {})
        template_name = distill_cfg.get("template", "wildguard")
        template = template_from_config(
            run.config, _DISTILL_TEMPLATES[template_name], run.config_dir
        )
        taxonomy = taxonomy_from_config(
            run.config, distill_cfg.get("taxonomy", "wildguard"), run.config_dir
        )
        max_attempts = int(distill_cfg.get("max_attempts", 3))
        teacher = run.client("teacher")
        params = sampling_from_config(run.config)
        for _ in range(rounds):
            candidates = [r for r in rejected if r.attempt < max_attempts]
            if not candidates:
                break
            exhausted = [r for r in rejected if r.attempt >= max_attempts]
            offsets = {r.sample.id: r.attempt for r in candidates}
            redistilled = distill(
                [r.sample for r in candidates],
                taxonomy,
                template,
                teacher,
                params,
                max_attempts=max_attempts,
                workers=run.workers,
                attempt_offsets=offsets,
            )
            retry_pending = [r for r in redistilled if r.status == STATUS_PENDING]
            still_rejected = [r for r in redistilled if r.status == STATUS_REJECTED]
            more_accepted, more_rejected = run_filter(
                retry_pending, filter_config, judge_client
            )
            accepted += more_accepted
            rejected = exhausted + still_rejected + more_rejected

    n_accepted = write_jsonl(args.accepted, [record_to_dict(r) for r in accepted])
    n_rejected = write_jsonl(args.rejected, [record_to_dict(r) for r in rejected])
    run.write_manifest(
        "filter",
        args.accepted + ".manifest.json",
        inputs={args.input: len(pending)},
        outputs={args.accepted: n_accepted, args.rejected: n_rejected},
        extra={"regenerate_rounds": rounds},
    )
    logger.info("filtered %d records: %d accepted, %d rejected",
                len(pending), n_accepted, n_rejected)
    return EXIT_OK


def cmd_shorten(args) -> int:
    run = _Run(args)
    budget_config = budget_config_from(run.config, run.config_dir, args.sentences)
    filter_config = filter_config_from(run.config, run.config_dir)
    max_attempts = int(run.config.get("budget", {}).get("max_attempts", 3))
    client = run.client("teacher")
    params = sampling_from_config(run.config)

    records = _read_records(args.input)
    done_ids = (
        _existing_ids(args.output) | _existing_ids(args.quarantine)
        if args.resume
        else set()
    )
    shortened_rows = _existing_rows(args.output) if args.resume else []
    rejected_rows = _existing_rows(args.quarantine) if args.resume else []
    for record in records:
        if record.sample.id in done_ids:
            continue
        result = shorten_trace(
            record,
            budget_config,
            client,
            params,
            max_attempts=max_attempts,
            leakage_config=filter_config,
        )
        if result.status == STATUS_ACCEPTED:
            shortened_rows.append(record_to_dict(result))
        else:
            rejected_rows.append(record_to_dict(result))
    n_out = write_jsonl(args.output, shortened_rows)
    n_rejected = write_jsonl(args.quarantine, rejected_rows)

    outputs = {args.output: n_out, args.quarantine: n_rejected}
    if args.stats:
        traces = [row["trace"] for row in shortened_rows]
        if traces:
            stats = budget_stats({budget_config.n_sentences: traces})
            write_text(args.stats, stats_to_csv(stats))
            outputs[args.stats] = len(stats.rows)
    run.write_manifest(
        "shorten",
        args.output + ".manifest.json",
        inputs={args.input: len(records)},
        outputs=outputs,
        extra={"n_sentences": budget_config.n_sentences,
               "tolerance": budget_config.tolerance},
    )
    logger.info("shortened %d records to %d sentences: %d ok, %d rejected",
                len(records), budget_config.n_sentences, n_out, n_rejected)
    return EXIT_OK


def cmd_assemble(args) -> int:
    run = _Run(args)
    assembly_cfg = run.config.get("assembly", {})
    spec = AssemblySpec(
        subset_size=args.subset_size or assembly_cfg.get("subset_size"),
        seed=run.seed,
        dual_mode=bool(assembly_cfg.get("dual_mode", False)),
        reasoning_fraction=float(assembly_cfg.get("reasoning_fraction", 0.5)),
        mode_tokens=tuple(
            assembly_cfg.get("mode_tokens", ["[reasoning]", "[non-reasoning]"])
        ),
        difficult_multiplier=int(assembly_cfg.get("difficult_multiplier", 1)),
        single_mode=assembly_cfg.get("single_mode", "reasoning"),
    )
    taxonomy = taxonomy_from_config(
        run.config, assembly_cfg.get("taxonomy", "wildguard"), run.config_dir
    )
    inference_template = template_from_config(
        run.config, TemplateKind.INFERENCE, run.config_dir
    )

    records = _read_records(args.input)
    inputs = {args.input: len(records)}
    if spec.subset_size is not None:
        records = sample_subset(records, spec.subset_size, spec.seed)
    examples = assemble(records, taxonomy, spec, inference_template)

    for merge_path in args.merge or []:
        extra = [example_from_dict(row) for row in read_jsonl(merge_path)]
        inputs[merge_path] = len(extra)
        examples = merge_topic_following(examples, extra, spec.seed)

    if args.difficult_ids:
        payload = read_json(args.difficult_ids)
        ids = set(payload["difficult_ids"])
        inputs[args.difficult_ids] = len(ids)
        examples = augment_with_difficult(examples, ids, spec.difficult_multiplier)

    n_out = write_jsonl(args.output, [example_to_dict(e) for e in examples])
    run.write_manifest(
        "assemble",
        args.output + ".manifest.json",
        inputs=inputs,
        outputs={args.output: n_out},
        extra=corpus_histograms(examples) | {"dual_mode": spec.dual_mode},
    )
    logger.info("assembled %d training examples", n_out)
    return EXIT_OK


def cmd_mine(args) -> int:
    run = _Run(args)
    mine_cfg = run.config.get("mine", {})
    taxonomy = taxonomy_from_config(
        run.config, mine_cfg.get("taxonomy", "wildguard"), run.config_dir
    )
    inference_template = template_from_config(
        run.config, TemplateKind.INFERENCE, run.config_dir
    )
    client = run.client("guard")
    params = sampling_from_config(run.config)
    n = args.n or int(mine_cfg.get("n", 4))

    samples = _read_samples(args.input)
    records, deferred = mine(
        samples,
        taxonomy,
        client,
        inference_template,
        n=n,
        params=params,
        mode_token=mine_cfg.get("mode_token"),
        workers=run.workers,
    )
    n_out = write_jsonl(args.output, [difficulty_to_dict(r) for r in records])
    summary = summarize(records) if records else {"total": 0}
    summary["deferred"] = deferred
    # The conjunction rule behind "correct" is an artifact decision; record it.
    summary["correctness_rule"] = "prompt_harm and (response_harm when gold present)"
    write_json(args.summary, summary)
    outputs = {args.output: n_out, args.summary: 1}
    if args.difficult_out:
        ids = difficult_ids(records, include_noisy=args.include_noisy)
        write_json(
            args.difficult_out,
            {"difficult_ids": ids, "include_noisy": args.include_noisy, "n": n},
        )
        outputs[args.difficult_out] = len(ids)
    run.write_manifest(
        "mine",
        args.output + ".manifest.json",
        inputs={args.input: len(samples)},
        outputs=outputs,
        extra={"n": n, "deferred": len(deferred)},
    )
    logger.info("mined %d samples: %s", len(samples),
                summary.get("bucket_counts", {}))
    return EXIT_OK


def _load_benchmark(manifest_path: str, config, config_dir) -> Benchmark:
    manifest = read_json(manifest_path)
    base = Path(manifest_path).parent
    samples_path = Path(manifest["samples"])
    if not samples_path.is_absolute():
        samples_path = base / samples_path
    taxonomy = taxonomy_from_config(config, manifest["taxonomy"], base)
    return Benchmark(
        name=manifest["name"],
        samples=tuple(_read_samples(samples_path)),
        scope=manifest["scope"],
        taxonomy=taxonomy,
    )


def cmd_eval(args) -> int:
    run = _Run(args)
    eval_cfg = run.config.get("eval", {})
    manifest_paths = list(args.benchmark or []) or list(eval_cfg.get("benchmarks", []))
    if not manifest_paths:
        raise ConfigError("no benchmarks given (flag --benchmark or config eval.benchmarks)")
    inference_template = template_from_config(
        run.config, TemplateKind.INFERENCE, run.config_dir
    )
    client = run.client("guard")
    params = sampling_from_config(run.config)
    n_gens = args.n_gens or int(eval_cfg.get("n_gens", 4))
    mode_token = eval_cfg.get("mode_token")
    reasoning_expected = bool(eval_cfg.get("reasoning_expected", True))

    output_dir = Path(args.output_dir)
    inputs, outputs = {}, {}
    for manifest_path in manifest_paths:
        resolved = manifest_path
        if not Path(resolved).is_absolute():
            resolved = str(run.config_dir / manifest_path) \
                if not Path(manifest_path).exists() else manifest_path
        benchmark = _load_benchmark(resolved, run.config, run.config_dir)
        inputs[manifest_path] = len(benchmark.samples)
        report = evaluate(
            benchmark,
            client,
            inference_template,
            params,
            n_gens=n_gens,
            mode_token=mode_token,
            reasoning_expected=reasoning_expected,
            workers=run.workers,
        )
        report_path = output_dir / f"{benchmark.name}.report.json"
        write_json(report_path, report_to_dict(report))
        outputs[str(report_path)] = report.sample_count
        logger.info(
            "%s: prompt F1 %s response F1 %s",
            benchmark.name,
            f"{report.prompt.mean_f1:.3f}" if report.prompt else "-",
            f"{report.response.mean_f1:.3f}" if report.response else "-",
        )
    run.write_manifest(
        "eval",
        str(output_dir / "eval.manifest.json"),
        inputs=inputs,
        outputs=outputs,
        extra={"n_gens": n_gens},
    )
    return EXIT_OK


def cmd_latency(args) -> int:
    run = _Run(args)
    latency_cfg = run.config.get("latency", {})
    endpoint_names = latency_cfg.get("endpoints")
    if not endpoint_names:
        raise ConfigError("config latency.endpoints must name at least one endpoint")
    baseline = latency_cfg.get("baseline")
    if baseline is None:
        raise ConfigError("config latency.baseline is required")
    taxonomy = taxonomy_from_config(
        run.config, latency_cfg.get("taxonomy", "wildguard"), run.config_dir
    )
    inference_template = template_from_config(
        run.config, TemplateKind.INFERENCE, run.config_dir
    )
    params = sampling_from_config(run.config)
    clients = {name: run.client(name) for name in endpoint_names}

    samples = _read_samples(args.samples)
    limit = int(latency_cfg.get("max_samples", 0))
    if limit:
        samples = samples[:limit]
    rows = latency_bench(
        clients, samples, taxonomy, inference_template, params, baseline=baseline
    )
    write_text(args.output, latency_to_csv(rows))
    outputs = {args.output: len(rows)}
    if args.json:
        write_json(
            args.json,
            {
                "baseline": baseline,
                "rows": [
                    {"name": r.name, "mean_s": r.mean_s, "overhead_pct": r.overhead_pct}
                    for r in rows
                ],
            },
        )
        outputs[args.json] = len(rows)
    run.write_manifest(
        "latency",
        args.output + ".manifest.json",
        inputs={args.samples: len(samples)},
        outputs=outputs,
        extra={"baseline": baseline},
    )
    for row in rows:
        logger.info("%s: %.4fs/sample (%+.1f%%)", row.name, row.mean_s, row.overhead_pct)
    return EXIT_OK


def cmd_report(args) -> int:
    run = _Run(args)
    layout = layout_from_config(run.config)
    report_paths = list(args.report or [])
    if args.reports_dir:
        report_paths += sorted(
            str(p) for p in Path(args.reports_dir).glob("*.report.json")
        )
    if not report_paths:
        raise ConfigError("no eval reports given (--report or --reports-dir)")
    reports: dict[str, EvalReport] = {}
    inputs = {}
    for path in report_paths:
        report = report_from_dict(read_json(path))
        reports[report.benchmark] = report
        inputs[path] = report.sample_count
    summary = aggregate(reports, layout)
    write_text(args.output, render_summary_table(summary))
    outputs = {args.output: 1}
    if args.csv:
        write_text(args.csv, summary_to_csv(summary))
        outputs[args.csv] = 1
    if args.json:
        write_json(args.json, summary)
        outputs[args.json] = 1
    run.write_manifest(
        "report",
        args.output + ".manifest.json",
        inputs=inputs,
        outputs=outputs,
    )
    print(render_summary_table(summary), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardkit",
        description="Build reasoning-guardrail training corpora and evaluate guard models.",
    )
    parser.add_argument("--version", action="version", version=f"guardkit {__version__}")

    def common(sub):
        sub.add_argument("--config", required=True, help="run config JSON")
        sub.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a config field (dotted path, JSON value)",
        )
        sub.add_argument("--seed", type=int, help="override the global seed")
        sub.add_argument("--log-level", default="INFO")

    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("distill", help="generate teacher reasoning traces")
    common(p)
    p.add_argument("--input", required=True, help="GuardSample JSONL")
    p.add_argument("--output", required=True, help="pending DistilledRecord JSONL")
    p.add_argument("--quarantine", required=True, help="rejected records JSONL")
    p.add_argument("--template", choices=sorted(_DISTILL_TEMPLATES))
    p.add_argument("--taxonomy", help="builtin name or JSON path")
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--resume", action="store_true",
                   help="skip samples already present in the outputs")
    p.set_defaults(func=cmd_distill)

    p = commands.add_parser("filter", help="quality-filter pending traces")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--accepted", required=True)
    p.add_argument("--rejected", required=True)
    p.add_argument("--regenerate", type=int, default=0, metavar="ROUNDS",
                   help="re-distill rejected records up to ROUNDS times")
    p.set_defaults(func=cmd_filter)

    p = commands.add_parser("shorten", help="rewrite traces to a sentence budget")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--quarantine", required=True)
    p.add_argument("--sentences", type=int, help="sentence budget (1-10)")
    p.add_argument("--stats", help="write words-per-sentence CSV here")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_shorten)

    p = commands.add_parser("assemble", help="build SFT training examples")
    common(p)
    p.add_argument("--input", required=True, help="accepted DistilledRecord JSONL")
    p.add_argument("--output", required=True, help="TrainingExample JSONL")
    p.add_argument("--merge", action="append",
                   help="TrainingExample JSONL to merge in (repeatable)")
    p.add_argument("--difficult-ids", help="difficult-id JSON from the mine command")
    p.add_argument("--subset-size", type=int)
    p.set_defaults(func=cmd_assemble)

    p = commands.add_parser("mine", help="best-of-N difficulty mining")
    common(p)
    p.add_argument("--input", required=True, help="GuardSample JSONL")
    p.add_argument("--output", required=True, help="DifficultyRecord JSONL")
    p.add_argument("--summary", required=True, help="bucket summary JSON")
    p.add_argument("--difficult-out", help="difficult-id JSON for assemble")
    p.add_argument("--n", type=int)
    p.add_argument("--include-noisy", action="store_true")
    p.set_defaults(func=cmd_mine)

    p = commands.add_parser("eval", help="harmful-F1 evaluation over benchmarks")
    common(p)
    p.add_argument("--benchmark", action="append", help="benchmark manifest JSON")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n-gens", type=int)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("latency", help="latency/overhead benchmark")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--output", required=True, help="CSV output")
    p.add_argument("--json", help="JSON output")
    p.set_defaults(func=cmd_latency)

    p = commands.add_parser("report", help="render the summary table from eval reports")
    common(p)
    p.add_argument("--report", action="append", help="EvalReport JSON (repeatable)")
    p.add_argument("--reports-dir")
    p.add_argument("--output", required=True, help="text table output")
    p.add_argument("--csv")
    p.add_argument("--json")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GuardkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def entrypoint() -> None:
    sys.exit(main())
