"""Command-line entry point binding ingest, features, KBs, verdicts, and eval.

Commands: scan, kb build, kb query, dataset prepare, evaluate, report render.
Flag values win over environment variables (MALSCAN_*), which win over the
config file, which wins over defaults. With the mock provider every command
is byte-deterministic given the same inputs, config, and seed.
"""
from __future__ import annotations

import hashlib
import json
import random
import sys
from dataclasses import fields
from pathlib import Path

import click

from . import __version__
from .config import AppConfig, ConfigError, load_config
from .crag import LlmGrader, OverlapGrader
from .describe import DatasetRow, render_description, write_dataset
from .evalharness import confusion, metrics, render_table, MetricsReport
from .features import ParseFailure, SignatureManifest, default_manifest, extract_from_source
from .gateway import Gateway, HttpProvider, MockProvider, ProviderConfig, RequestLog
from .ingest import IngestError, IngestOptions, PackageRecord, load_package
from .kb import (
    SnippetRow,
    VectorIndex,
    build_index,
    ingest_advisories,
    ingest_snippets,
    parse_yara,
    rule_to_document,
)
from .kb.embed import HashEmbedder, HttpEmbedder
from .verdict import (
    Outcome,
    PipelineMode,
    ScanDeps,
    scan_package,
    scan_to_record,
)


def _config_keys_epilog() -> str:
    from .config import _SECTION_TYPES  # single source of truth

    lines = ["Config keys (file/env/flag, precedence flags > env > file > defaults):"]
    for section, cls in sorted(_SECTION_TYPES.items()):
        keys = ", ".join(f"{section}.{f.name}" for f in fields(cls))
        lines.append(f"  {keys}")
    lines.append("  kb_paths, manifest_path, seed, jobs")
    return "\n".join(lines)


_EPILOG = _config_keys_epilog()


@click.group(epilog=_EPILOG, context_settings={"auto_envvar_prefix": "MALSCAN"})
@click.version_option(__version__)
def main() -> None:
    """Static triage of PyPI package archives with LLM-backed classification.

    Option values resolve as flags > MALSCAN_* environment variables >
    config file > built-in defaults.
    """


def _fail(message: str) -> "click.UsageError":
    return click.UsageError(message)


def _load_cfg(config_path: str | None, overrides: dict) -> AppConfig:
    try:
        return load_config(config_path, overrides)
    except (ConfigError, OSError) as err:
        raise _fail(str(err)) from err


def _build_gateway(cfg: AppConfig) -> Gateway:
    provider_cfg = ProviderConfig(
        endpoint=cfg.provider.endpoint,
        model=cfg.provider.model,
        api_key_env=cfg.provider.api_key_env,
        timeout_s=cfg.provider.timeout_s,
        max_retries=cfg.provider.max_retries,
        max_parallel=cfg.provider.max_parallel,
        temperature=cfg.provider.temperature,
    )
    if cfg.provider.kind == "mock":
        rules = cfg.provider.mock_rules

        def rule(messages):
            text = "\n".join(m.content for m in messages)
            for r in rules:
                if r.contains in text:
                    return r.response
            return None

        provider = MockProvider(
            rule=rule if rules else None,
            default=cfg.provider.mock_default or None,
        )
    else:
        provider = HttpProvider(provider_cfg)
    log = RequestLog(cfg.provider.request_log or None)
    return Gateway(provider, provider_cfg, log=log, rng=random.Random(cfg.seed))


def _build_embedder(cfg: AppConfig):
    if cfg.embedding.kind == "offline":
        return HashEmbedder(dimension=cfg.embedding.dimension)
    return HttpEmbedder(
        endpoint=cfg.embedding.endpoint,
        model=cfg.embedding.model,
        api_key_env=cfg.embedding.api_key_env,
        dimension=cfg.embedding.dimension,
    )


def _build_deps(cfg: AppConfig, jobs: int | None = None) -> ScanDeps:
    manifest = (
        SignatureManifest.from_file(cfg.manifest_path) if cfg.manifest_path else default_manifest()
    )
    collections = tuple(VectorIndex.load(p) for p in cfg.kb_paths)
    gateway = _build_gateway(cfg)
    if cfg.crag.grader == "llm":
        grader = LlmGrader(lambda prompt: gateway.chat([_user_message(prompt)]))
    else:
        grader = OverlapGrader()
    few_shot = (
        Path(cfg.prompt.few_shot_path).read_text("utf-8") if cfg.prompt.few_shot_path else None
    )
    return ScanDeps(
        gateway=gateway,
        manifest=manifest,
        collections=collections,
        embedder=_build_embedder(cfg),
        grader=grader,
        retrieval_k=cfg.crag.k,
        relevance_threshold=cfg.crag.threshold,
        context_budget=cfg.prompt.context_budget,
        snippet_budget=cfg.ingest.snippet_budget,
        few_shot=few_shot,
        jobs=jobs if jobs is not None else cfg.effective_jobs(),
        config_fingerprint=cfg.fingerprint(),
    )


def _user_message(content: str):
    from .prompts import ChatMessage, USER

    return ChatMessage(USER, content)


def _ingest_options(cfg: AppConfig) -> IngestOptions:
    workdir = Path(cfg.ingest.workdir) if cfg.ingest.workdir else None
    return IngestOptions(workdir=workdir, snippet_budget=cfg.ingest.snippet_budget)


def _load_corpus(corpus: Path, opts: IngestOptions) -> list[PackageRecord]:
    """Labeled corpus: malicious/ + benign/ subdirectories, or a JSONL manifest."""
    records: list[PackageRecord] = []
    if corpus.is_file():
        with open(corpus, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                target = Path(row["path"])
                if not target.is_absolute():
                    target = corpus.parent / target
                records.append(load_package(target, opts).with_label(int(row["label"])))
        return records
    for label, sub in ((1, "malicious"), (0, "benign")):
        folder = corpus / sub
        if not folder.is_dir():
            continue
        for item in sorted(folder.iterdir()):
            records.append(load_package(item, opts).with_label(label))
    if not records:
        raise _fail(
            f"corpus {corpus} has no malicious/ or benign/ entries and is not a manifest"
        )
    return records


_CONFIG_OPT = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="YAML config file.",
)
_SEED_OPT = click.option("--seed", type=int, default=None, help="Top-level seed [seed].")
_MANIFEST_OPT = click.option(
    "--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Signature manifest override [manifest_path].",
)


@main.command(epilog=_EPILOG)
@click.argument("targets", nargs=-1, required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["zero-shot", "rag", "crag"]), default="zero-shot")
@click.option("--strategy", type=click.Choice(["llm", "rule"]), default="llm")
@click.option("--kb", "kb_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Collection file; repeatable [kb_paths].")
@click.option("--provider", "provider_kind", type=click.Choice(["mock", "http"]), default=None,
              help="Provider kind override [provider.kind].")
@click.option("--crag-mode", "--crag.mode", "crag_mode",
              type=click.Choice(["raw_code", "ast_description"]), default=None,
              help="Retrieval query form for rag/crag [crag.mode].")
@click.option("--out", type=click.Path(), default="report.jsonl", show_default=True)
@click.option("--audit", "audit_path", type=click.Path(), default=None,
              help="Retrieval audit output (crag mode).")
@click.option("--jobs", type=int, default=None, help="Parallel file classifications [jobs].")
@_MANIFEST_OPT
@_SEED_OPT
@_CONFIG_OPT
def scan(targets, mode, strategy, kb_paths, provider_kind, crag_mode, out, audit_path,
         jobs, manifest_path, seed, config_path) -> None:
    """Scan package directories or archives and write one verdict per package."""
    overrides = {
        "seed": seed,
        "jobs": jobs,
        "manifest_path": manifest_path,
        "provider.kind": provider_kind,
        "crag.mode": crag_mode,
    }
    if kb_paths:
        overrides["kb_paths"] = list(kb_paths)
    cfg = _load_cfg(config_path, overrides)

    for target in targets:
        if not Path(target).exists():
            raise _fail(f"scan target does not exist: {target}")

    deps = _build_deps(cfg)
    pipeline_mode = PipelineMode(kind=mode.replace("-", "_"), ctx_mode=cfg.crag.mode)
    opts = _ingest_options(cfg)

    scans = []
    for target in targets:
        try:
            record = load_package(target, opts)
        except IngestError as err:
            raise _fail(f"cannot load {target}: {err}") from err
        scans.append(scan_package(record, pipeline_mode, strategy, deps))
    scans.sort(key=lambda s: s.verdict.package)

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for item in scans:
            record = {**scan_to_record(item), "seed": cfg.seed}
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    if audit_path is None and mode == "crag":
        audit_path = str(out_path.with_suffix(".audit.jsonl"))
    if audit_path is not None and mode in ("rag", "crag"):
        with open(audit_path, "w", encoding="utf-8") as fh:
            for item in scans:
                for row in item.retrieval_audit:
                    fh.write(json.dumps({"package": item.verdict.package, **row},
                                        sort_keys=True) + "\n")

    errors = sum(1 for s in scans if s.verdict.outcome is Outcome.ERROR)
    click.echo(f"scanned {len(scans)} package(s), {errors} error verdict(s) -> {out_path}")


@main.group(epilog=_EPILOG)
def kb() -> None:
    """Build and query knowledge-base collections."""


@kb.command("build", epilog=_EPILOG)
@click.argument("source_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--source", type=click.Choice(["yara", "advisory", "snippet"]), required=True)
@click.option("--name", default=None, help="Collection name (defaults to the source kind).")
@click.option("--out", type=click.Path(), required=True)
@click.option("--snippet-max-len", type=int, default=20_000, show_default=True,
              help="Snippet length cutoff (snippet source only).")
@_CONFIG_OPT
def kb_build(source_file, source, name, out, snippet_max_len, config_path) -> None:
    """Build one collection from a YARA ruleset, advisory JSONL, or snippet JSONL."""
    cfg = _load_cfg(config_path, {})
    embedder = _build_embedder(cfg)
    name = name or source

    if source == "yara":
        result = parse_yara(Path(source_file).read_text("utf-8"))
        for err in result.errors:
            click.echo(f"rule error at bytes {err.span}: {err.reason}", err=True)
        docs = [rule_to_document(rule) for rule in result.rules]
    elif source == "advisory":
        with open(source_file, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        docs, skipped = ingest_advisories(rows)
        for miss in skipped:
            click.echo(f"skipped advisory {miss.record_id}: missing {miss.field_name}", err=True)
    else:
        with open(source_file, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        snippet_rows = [
            SnippetRow(str(r["package"]), str(r["text"]), int(r.get("label", 1))) for r in rows
        ]
        docs, excluded = ingest_snippets(snippet_rows, snippet_max_len)
        if excluded:
            click.echo(f"excluded {len(excluded)} over-length snippet(s)", err=True)

    index = build_index(name, docs, embedder)
    index.save(out)
    click.echo(f"built collection {name!r}: {len(index)} document(s) -> {out}")


@kb.command("query", epilog=_EPILOG)
@click.argument("query_text")
@click.option("--collection", "collection_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("-k", type=int, default=4, show_default=True)
@_CONFIG_OPT
def kb_query(query_text, collection_path, k, config_path) -> None:
    """Top-k cosine matches for a query string."""
    cfg = _load_cfg(config_path, {})
    index = VectorIndex.load(collection_path)
    embedder = _build_embedder(cfg)
    if embedder.dimension != index.dimension:
        raise _fail(
            f"embedder dimension {embedder.dimension} != collection dimension {index.dimension}"
        )
    for doc_id, score in index.query(embedder.embed(query_text), k):
        click.echo(f"{score:+.6f}  {doc_id}")


@main.group(epilog=_EPILOG)
def dataset() -> None:
    """Prepare labeled description datasets."""


@dataset.command("prepare", epilog=_EPILOG)
@click.option("--corpus", type=click.Path(exists=True), required=True,
              help="Directory with malicious/ and benign/ packages, or a JSONL manifest.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True)
@click.option("--granularity", type=click.Choice(["package", "file"]), default="package",
              show_default=True)
@_MANIFEST_OPT
@_SEED_OPT
@_CONFIG_OPT
def dataset_prepare(corpus, out, ratios, granularity, manifest_path, seed, config_path) -> None:
    """Extract features, render descriptions, and write train/val/test CSVs."""
    overrides = {"seed": seed, "manifest_path": manifest_path}
    cfg = _load_cfg(config_path, overrides)
    signature_manifest = (
        SignatureManifest.from_file(cfg.manifest_path) if cfg.manifest_path else default_manifest()
    )
    try:
        parts = tuple(float(x) for x in ratios.split(","))
    except ValueError as err:
        raise _fail(f"bad --ratios: {ratios!r}") from err

    records = _load_corpus(Path(corpus), _ingest_options(cfg))
    rows: list[DatasetRow] = []
    skipped_files = 0
    for record in records:
        descriptions = []
        for entry in record.files:
            if not entry.is_python:
                continue
            try:
                fv = extract_from_source(entry.content, signature_manifest)
            except ParseFailure:
                skipped_files += 1
                continue
            rendered = render_description(record.name, entry.rel_path, fv).rendered
            if granularity == "file":
                rows.append(DatasetRow(rendered, record.label))
            else:
                descriptions.append(rendered)
        if granularity == "package" and descriptions:
            rows.append(DatasetRow(" ".join(descriptions), record.label))

    if not rows:
        raise _fail("corpus produced no dataset rows")
    manifest = write_dataset(rows, out, parts, cfg.seed)
    click.echo(
        f"wrote {manifest['counts']['train']}/{manifest['counts']['val']}/"
        f"{manifest['counts']['test']} rows to {out} "
        f"(skipped {skipped_files} unparseable file(s))"
    )


def _kb_checksums(cfg: AppConfig) -> dict[str, str]:
    return {
        p: hashlib.sha256(Path(p).read_bytes()).hexdigest()[:16] for p in cfg.kb_paths
    }


@main.command(epilog=_EPILOG)
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(["zero-shot", "rag", "crag"]), default="zero-shot")
@click.option("--strategy", type=click.Choice(["llm", "rule"]), default="llm")
@click.option("--kb", "kb_paths", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Collection file; repeatable [kb_paths].")
@click.option("--crag-mode", "--crag.mode", "crag_mode",
              type=click.Choice(["raw_code", "ast_description"]), default=None,
              help="Retrieval query form for rag/crag [crag.mode].")
@click.option("--name", default=None, help="Configuration label in the report.")
@click.option("--out", type=click.Path(), default="report.json", show_default=True)
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Score externally produced predictions instead of running the pipeline.")
@click.option("--jobs", type=int, default=None, help="Parallel file classifications [jobs].")
@_MANIFEST_OPT
@_SEED_OPT
@_CONFIG_OPT
def evaluate(corpus, mode, strategy, kb_paths, crag_mode, name, out, predictions, jobs,
             manifest_path, seed, config_path) -> None:
    """Run one experiment configuration over a labeled corpus and report metrics."""
    overrides = {
        "seed": seed,
        "jobs": jobs,
        "manifest_path": manifest_path,
        "crag.mode": crag_mode,
    }
    if kb_paths:
        overrides["kb_paths"] = list(kb_paths)
    cfg = _load_cfg(config_path, overrides)
    name = name or f"{mode}/{strategy}"

    if predictions is not None:
        with open(predictions, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        rows.sort(key=lambda r: r["package"])
        cm = confusion([r["prediction"] for r in rows], [int(r["label"]) for r in rows])
        report = metrics(cm, name=name, config_fingerprint=cfg.fingerprint(), seed=cfg.seed)
        records = rows
    else:
        from .evalharness import run_experiment

        corpus_records = _load_corpus(Path(corpus), _ingest_options(cfg))
        deps = _build_deps(cfg)
        pipeline_mode = PipelineMode(kind=mode.replace("-", "_"), ctx_mode=cfg.crag.mode)

        def pipeline(record: PackageRecord) -> dict:
            result = scan_package(record, pipeline_mode, strategy, deps)
            return {
                "outcome": result.verdict.outcome.value,
                "score": round(result.verdict.score, 6),
            }

        report, records = run_experiment(
            corpus_records, cfg.seed, pipeline, name=name, config_fingerprint=cfg.fingerprint()
        )

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "report": report.as_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "seed": cfg.seed,
        "kb_checksums": _kb_checksums(cfg),
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    samples_path = out_path.with_suffix(".samples.jsonl")
    with open(samples_path, "w", encoding="utf-8") as fh:
        for row in records:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    click.echo(render_table([report]))
    click.echo(f"report -> {out_path}, samples -> {samples_path}")


@main.group(epilog=_EPILOG)
def report() -> None:
    """Work with evaluation reports."""


@report.command("render", epilog=_EPILOG)
@click.argument("report_files", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
def report_render(report_files) -> None:
    """Print the comparison table for one or more evaluation reports."""
    reports = []
    for path in report_files:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        reports.append(MetricsReport(**payload["report"]))
    click.echo(render_table(reports))


if __name__ == "__main__":
    sys.exit(main())
