"""Two-stage classification: per-file verdicts, then the package-level call.

Stage one classifies every file independently; any failure (transport,
refusal, unparseable response) becomes an ``error`` outcome and never aborts
the package. Stage two aggregates the counts and average score and produces
the overall verdict either through the summary prompt (llm strategy) or a
deterministic offline rule.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from . import crag, prompts
from .features import SignatureManifest, default_manifest, extract_from_source, ParseFailure
from .describe import render_description
from .gateway import Gateway
from .ingest import FileEntry, PackageRecord
from .kb.embed import EmbeddingProvider
from .kb.index import VectorIndex

ZERO_SHOT = "zero_shot"
RAG = "rag"
CRAG = "crag"

LLM_STRATEGY = "llm"
RULE_STRATEGY = "rule"


class Outcome(str, Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"
    ERROR = "error"


@dataclass(frozen=True)
class PipelineMode:
    kind: str = ZERO_SHOT
    ctx_mode: str = crag.RAW_CODE  # what rag/crag retrieval queries are made of

    def __post_init__(self) -> None:
        if self.kind not in (ZERO_SHOT, RAG, CRAG):
            raise ValueError(f"unknown pipeline mode: {self.kind!r}")
        if self.ctx_mode not in (crag.RAW_CODE, crag.AST_DESCRIPTION):
            raise ValueError(f"unknown retrieval context mode: {self.ctx_mode!r}")


@dataclass(frozen=True)
class FileVerdict:
    rel_path: str
    outcome: Outcome
    score: int | None = None
    explanation: str = ""
    reason: str = ""  # why an error outcome happened

    def __post_init__(self) -> None:
        if (self.score is None) != (self.outcome is Outcome.ERROR):
            raise ValueError("score must be present exactly when outcome is not error")
        if self.score is not None and not 0 <= self.score <= 100:
            raise ValueError(f"score out of range: {self.score}")


@dataclass(frozen=True)
class PackageAggregate:
    malicious_count: int
    benign_count: int
    error_count: int
    avg_malicious_score: float  # mean score over all non-error files
    avg_score_malicious_files: float  # mean score over malicious-classified files

    @property
    def total(self) -> int:
        return self.malicious_count + self.benign_count + self.error_count


@dataclass(frozen=True)
class PackageVerdict:
    package: str
    outcome: Outcome
    score: float
    explanation: str
    aggregate: PackageAggregate
    strategy: str
    config_fingerprint: str = ""


@dataclass
class ScanDeps:
    """Everything classify_file/scan_package need beyond the package itself."""

    gateway: Gateway
    manifest: SignatureManifest = field(default_factory=default_manifest)
    collections: tuple[VectorIndex, ...] = ()
    embedder: EmbeddingProvider | None = None
    grader: crag.Grader = field(default_factory=crag.OverlapGrader)
    retrieval_k: int = crag.DEFAULT_K
    relevance_threshold: float = crag.DEFAULT_THRESHOLD
    context_budget: int = prompts.DEFAULT_CONTEXT_BUDGET
    snippet_budget: int = 300
    few_shot: str | None = None
    jobs: int = 1
    config_fingerprint: str = ""


@dataclass
class FileScan:
    verdict: FileVerdict
    retrieval: crag.CorrectiveResult | None = None


@dataclass
class PackageScan:
    verdict: PackageVerdict
    files: tuple[FileVerdict, ...]
    retrieval_audit: list[dict] = field(default_factory=list)


def _query_text(entry: FileEntry, mode: PipelineMode, deps: ScanDeps, package_name: str) -> str:
    content = entry.content
    if mode.ctx_mode == crag.AST_DESCRIPTION:
        try:
            fv = extract_from_source(content, deps.manifest)
        except ParseFailure:
            fv = None
        if fv is not None:
            return render_description(package_name, entry.rel_path, fv).rendered
    return content[: deps.snippet_budget] or " "


def _build_prompt(
    entry: FileEntry,
    mode: PipelineMode,
    deps: ScanDeps,
    package_name: str,
) -> tuple[list[prompts.ChatMessage], crag.CorrectiveResult | None]:
    if mode.kind == ZERO_SHOT:
        return prompts.file_analysis_prompt(entry.rel_path, entry.content, deps.few_shot), None

    ctx = crag.RetrievalContext(mode.ctx_mode, _query_text(entry, mode, deps, package_name))
    if deps.embedder is None:
        raise ValueError(f"{mode.kind} mode requires an embedding provider")
    if mode.kind == RAG:
        result = crag.retrieve_topk(ctx, deps.collections, deps.retrieval_k, deps.embedder)
    else:
        result = crag.retrieve_corrective(
            ctx,
            deps.collections,
            deps.retrieval_k,
            deps.relevance_threshold,
            deps.grader,
            deps.embedder,
        )
    admitted_docs = [
        _lookup_document(deps.collections, g.collection, g.doc_id) for g in result.admitted
    ]
    base = prompts.file_analysis_template().replace("{file_name}", entry.rel_path)
    if deps.few_shot:
        base = f"{base}\n\n{deps.few_shot}"
    built = prompts.rag_prompt(admitted_docs, ctx.query_text, base, deps.context_budget)
    return list(built.messages), result


def _lookup_document(collections: Sequence[VectorIndex], name: str, doc_id: str):
    for index in collections:
        if index.name == name:
            return index.documents[doc_id]
    raise KeyError(f"collection {name!r} not found")


def classify_file(
    entry: FileEntry,
    mode: PipelineMode,
    deps: ScanDeps,
    package_name: str = "",
) -> FileVerdict:
    """Classify one file; every failure becomes an error outcome."""
    return scan_file(entry, mode, deps, package_name).verdict


def scan_file(
    entry: FileEntry,
    mode: PipelineMode,
    deps: ScanDeps,
    package_name: str = "",
) -> FileScan:
    retrieval: crag.CorrectiveResult | None = None
    try:
        messages, retrieval = _build_prompt(entry, mode, deps, package_name)
        response = deps.gateway.chat(messages)
        parsed = prompts.parse_verdict(response)
    except Exception as err:
        return FileScan(
            FileVerdict(entry.rel_path, Outcome.ERROR, reason=f"{type(err).__name__}: {err}"),
            retrieval,
        )
    outcome = Outcome.MALICIOUS if parsed.classification == prompts.MALICIOUS else Outcome.BENIGN
    return FileScan(
        FileVerdict(entry.rel_path, outcome, parsed.score, parsed.explanation),
        retrieval,
    )


def aggregate(verdicts: Sequence[FileVerdict]) -> PackageAggregate:
    """Outcome counts plus the average scores the summary stage needs."""
    malicious = [v for v in verdicts if v.outcome is Outcome.MALICIOUS]
    benign = [v for v in verdicts if v.outcome is Outcome.BENIGN]
    errors = [v for v in verdicts if v.outcome is Outcome.ERROR]
    scored = [v.score for v in verdicts if v.score is not None]
    mal_scored = [v.score for v in malicious]
    return PackageAggregate(
        malicious_count=len(malicious),
        benign_count=len(benign),
        error_count=len(errors),
        avg_malicious_score=sum(scored) / len(scored) if scored else 0.0,
        avg_score_malicious_files=sum(mal_scored) / len(mal_scored) if mal_scored else 0.0,
    )


def classify_package(
    agg: PackageAggregate,
    strategy: str,
    deps: ScanDeps,
    package_name: str,
    package_info: str = "",
) -> PackageVerdict:
    """Overall verdict from the aggregate, via summary prompt or offline rule."""
    if strategy == RULE_STRATEGY:
        malicious = agg.malicious_count >= 1
        return PackageVerdict(
            package=package_name,
            outcome=Outcome.MALICIOUS if malicious else Outcome.BENIGN,
            score=agg.avg_score_malicious_files if malicious else 0.0,
            explanation=(
                f"{agg.malicious_count} of {agg.total} analysed files classified malicious."
            ),
            aggregate=agg,
            strategy=RULE_STRATEGY,
            config_fingerprint=deps.config_fingerprint,
        )
    if strategy != LLM_STRATEGY:
        raise ValueError(f"unknown strategy: {strategy!r}")
    try:
        messages = prompts.package_summary_prompt(
            agg.malicious_count, agg.benign_count, agg.avg_malicious_score, package_info
        )
        parsed = prompts.parse_verdict(deps.gateway.chat(messages))
    except Exception as err:
        return PackageVerdict(
            package=package_name,
            outcome=Outcome.ERROR,
            score=0.0,
            explanation=f"{type(err).__name__}: {err}",
            aggregate=agg,
            strategy=LLM_STRATEGY,
            config_fingerprint=deps.config_fingerprint,
        )
    outcome = Outcome.MALICIOUS if parsed.classification == prompts.MALICIOUS else Outcome.BENIGN
    return PackageVerdict(
        package=package_name,
        outcome=outcome,
        score=float(parsed.score),
        explanation=parsed.explanation,
        aggregate=agg,
        strategy=LLM_STRATEGY,
        config_fingerprint=deps.config_fingerprint,
    )


def package_info_digest(verdicts: Sequence[FileVerdict], budget: int) -> str:
    """Per-file digest for the summary prompt, truncated from the head."""
    lines = [
        f"{v.rel_path}: {v.outcome.value}" + (f" score={v.score}" if v.score is not None else "")
        for v in verdicts
    ]
    digest = "\n".join(lines)
    return digest[:budget]


def scan_package(
    record: PackageRecord,
    mode: PipelineMode,
    strategy: str,
    deps: ScanDeps,
) -> PackageScan:
    """Stage one over every file (bounded parallelism), then stage two."""
    entries = record.files
    if deps.jobs > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=deps.jobs) as pool:
            scans = list(pool.map(lambda e: scan_file(e, mode, deps, record.name), entries))
    else:
        scans = [scan_file(e, mode, deps, record.name) for e in entries]

    scans.sort(key=lambda s: s.verdict.rel_path)  # order-independent results
    verdicts = tuple(s.verdict for s in scans)
    agg = aggregate(verdicts)
    if agg.total != len(entries):  # count conservation, checked at runtime
        raise AssertionError(
            f"verdict counts {agg.total} do not cover {len(entries)} files"
        )
    info = package_info_digest(verdicts, deps.context_budget)
    package_verdict = classify_package(agg, strategy, deps, record.name, info)
    audit: list[dict] = []
    for scan in scans:
        if scan.retrieval is not None:
            for row in crag.audit_records(scan.retrieval):
                audit.append({"file": scan.verdict.rel_path, **row})
    return PackageScan(package_verdict, verdicts, audit)


def scan_to_record(scan: PackageScan, label: int | None = None) -> dict:
    """JSON-ready line record: package verdict plus per-file verdicts."""
    v = scan.verdict
    record = {
        "package": v.package,
        "outcome": v.outcome.value,
        "score": round(v.score, 6),
        "explanation": v.explanation,
        "strategy": v.strategy,
        "config_fingerprint": v.config_fingerprint,
        "aggregate": {
            "malicious": v.aggregate.malicious_count,
            "benign": v.aggregate.benign_count,
            "errors": v.aggregate.error_count,
            "avg_malicious_score": round(v.aggregate.avg_malicious_score, 6),
        },
        "files": [
            {
                "rel_path": f.rel_path,
                "outcome": f.outcome.value,
                "score": f.score,
                "explanation": f.explanation,
                **({"reason": f.reason} if f.reason else {}),
            }
            for f in scan.files
        ],
    }
    if label is not None:
        record["label"] = label
    return record
