"""Corrective retrieval: grade candidates and admit only the relevant ones.

Plain retrieval hands the classifier whatever scored highest; the corrective
pass re-judges each candidate against the query and drops everything below a
relevance threshold, so a weak match never pollutes the prompt. Grading
failures are fail-closed: a document we could not judge is not admitted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .kb.embed import EmbeddingProvider
from .kb.index import VectorIndex

RAW_CODE = "raw_code"
AST_DESCRIPTION = "ast_description"

DEFAULT_K = 4
DEFAULT_THRESHOLD = 0.7

_TOKEN_RE = re.compile(r"[a-z0-9_]+")

_GRADING_INSTRUCTIONS = (
    "You are screening reference material for a code-security review. "
    "Rate how relevant the reference document is to the query on a scale of "
    "0 to 100, where 0 means unrelated and 100 means directly about the same "
    "behaviour. Answer with a single integer and nothing else.\n\n"
    "Query:\n{query}\n\nReference document:\n{document}"
)


class GraderError(Exception):
    """A grader could not produce a usable relevance value."""


@dataclass(frozen=True)
class RetrievalContext:
    """What the retrieval query is made of: raw code or a rendered description."""

    mode: str
    query_text: str
    package_name: str = ""

    def __post_init__(self) -> None:
        if self.mode not in (RAW_CODE, AST_DESCRIPTION):
            raise ValueError(f"unknown retrieval mode: {self.mode!r}")
        if not self.query_text:
            raise ValueError("query_text must be non-empty")


@dataclass(frozen=True)
class GradedDocument:
    doc_id: str
    collection: str
    retrieval_score: float
    relevance: float
    admitted: bool
    grading_failed: bool = False


@dataclass
class CorrectiveResult:
    graded: list[GradedDocument] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def admitted(self) -> list[GradedDocument]:
        return [g for g in self.graded if g.admitted]


class Grader(Protocol):
    def grade(self, query_text: str, doc_body: str) -> float: ...


class OverlapGrader:
    """Offline grader: fraction of query tokens that also appear in the body."""

    def grade(self, query_text: str, doc_body: str) -> float:
        query_tokens = set(_TOKEN_RE.findall(query_text.lower()))
        if not query_tokens:
            return 0.0
        body_tokens = set(_TOKEN_RE.findall(doc_body.lower()))
        return len(query_tokens & body_tokens) / len(query_tokens)


class LlmGrader:
    """Asks a chat model for a 0-100 relevance score; unparseable answers fail."""

    def __init__(self, chat: Callable[[str], str]):
        self._chat = chat

    def grade(self, query_text: str, doc_body: str) -> float:
        prompt = _GRADING_INSTRUCTIONS.format(query=query_text, document=doc_body)
        try:
            answer = self._chat(prompt)
        except Exception as err:
            raise GraderError(f"grading call failed: {err}") from err
        match = re.search(r"\b(\d{1,3})\b", answer)
        if not match:
            raise GraderError(f"no score in grader answer: {answer!r}")
        return int(match.group(1)) / 100.0


def grade_relevance(ctx: RetrievalContext, doc, grader: Grader) -> float:
    """Relevance of one document to the query, clamped to [0, 1]."""
    return min(1.0, max(0.0, grader.grade(ctx.query_text, doc.body)))


def retrieve_topk(
    ctx: RetrievalContext,
    collections: Sequence[VectorIndex],
    k: int,
    embedder: EmbeddingProvider,
) -> CorrectiveResult:
    """Plain retrieval: every top-k candidate is admitted, no grading pass."""
    return retrieve_corrective(ctx, collections, k, 0.0, _AdmitAll(), embedder)


class _AdmitAll:
    def grade(self, query_text: str, doc_body: str) -> float:
        return 1.0


def retrieve_corrective(
    ctx: RetrievalContext,
    collections: Sequence[VectorIndex],
    k: int,
    threshold: float,
    grader: Grader,
    embedder: EmbeddingProvider,
) -> CorrectiveResult:
    """Embed the query, take top-k per collection, grade, and filter.

    Collections are handled independently; one failing entirely contributes no
    documents plus a failure report. Output order is collection order, then
    descending relevance (retrieval order on ties).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")

    result = CorrectiveResult()
    for index in collections:
        try:
            query_vec = embedder.embed(ctx.query_text)
            hits = index.query(query_vec, k)
        except Exception as err:
            result.failures.append(f"{index.name}: {err}")
            continue
        batch: list[GradedDocument] = []
        for doc_id, score in hits:
            try:
                relevance = grade_relevance(ctx, index.documents[doc_id], grader)
                failed = False
            except GraderError:
                relevance = 0.0
                failed = True
            batch.append(
                GradedDocument(
                    doc_id=doc_id,
                    collection=index.name,
                    retrieval_score=score,
                    relevance=relevance,
                    admitted=(not failed) and relevance >= threshold,
                    grading_failed=failed,
                )
            )
        batch.sort(key=lambda g: -g.relevance)  # stable: retrieval order on ties
        result.graded.extend(batch)
    return result


def audit_records(result: CorrectiveResult) -> list[dict]:
    """Line-record form of a retrieval pass for the per-scan audit file."""
    return [
        {
            "collection": g.collection,
            "doc_id": g.doc_id,
            "cosine": round(g.retrieval_score, 12),
            "relevance": round(g.relevance, 12),
            "admitted": g.admitted,
            "grading_failed": g.grading_failed,
        }
        for g in result.graded
    ]
