"""Prompt construction and verdict parsing.

Templates live as text resources and are substituted with plain string
replacement (never recursive formatting, so braces in file names survive
literally). Responses come back free-form, so parsing is deliberately
tolerant about markdown and field-name variants, but the tolerance boundary
is fixed: no classification token or no in-range score means the response is
malformed, never silently repaired.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .kb.documents import KnowledgeDocument

DEVELOPER = "developer"
USER = "user"

MALICIOUS = "malicious"
BENIGN = "benign"

DEFAULT_CONTEXT_BUDGET = 12_000


class MalformedVerdict(Exception):
    """Response text could not be read as a verdict; counts as an error outcome."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in (DEVELOPER, USER):
            raise ValueError(f"unknown chat role: {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class ParsedVerdict:
    classification: str  # malicious | benign
    score: int
    explanation: str

    def __post_init__(self) -> None:
        if self.classification not in (MALICIOUS, BENIGN):
            raise ValueError(f"bad classification: {self.classification!r}")
        if not 0 <= self.score <= 100:
            raise ValueError(f"score out of range: {self.score}")


@dataclass(frozen=True)
class RagPrompt:
    messages: tuple[ChatMessage, ...]
    dropped: int


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return resources.files("malscan.data.prompts").joinpath(name).read_text("utf-8")


def file_analysis_template() -> str:
    return _template("file_analysis.txt")


def file_analysis_prompt(
    file_name: str,
    file_content: str,
    few_shot: str | None = None,
) -> list[ChatMessage]:
    """Developer instructions plus the file body as the user turn."""
    if not file_name:
        raise ValueError("file_name must be non-empty")
    developer = _template("file_analysis.txt").replace("{file_name}", file_name)
    if few_shot:
        developer = f"{developer}\n\n{few_shot}"
    return [
        ChatMessage(DEVELOPER, developer),
        ChatMessage(USER, f"file content: {file_content}"),
    ]


def package_summary_prompt(
    malicious_count: int,
    benign_count: int,
    avg_score: float,
    package_info: str = "",
) -> list[ChatMessage]:
    """Aggregation-stage prompt: counts, two-decimal average, per-file digest."""
    if malicious_count < 0 or benign_count < 0:
        raise ValueError("counts must be non-negative")
    if not 0 <= avg_score <= 100:
        raise ValueError(f"avg_score out of range: {avg_score}")
    summary = (
        _template("package_summary.txt")
        .replace("{malicious_count}", str(malicious_count))
        .replace("{benign_count}", str(benign_count))
        .replace("{avg_malicious_score:.2f}", f"{avg_score:.2f}")
    )
    request = _template("package_info_request.txt").replace("{package_info}", package_info)
    return [ChatMessage(USER, summary), ChatMessage(USER, request)]


def rag_prompt(
    docs: Sequence[KnowledgeDocument],
    snippet: str,
    base: str,
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> RagPrompt:
    """Context documents, then the code snippet, under the base instructions.

    Documents render as ``[source:id] body`` in admitted order. When the total
    prompt exceeds the budget, documents are dropped from the tail and the
    drop count reported; with no documents the prompt degenerates to the base
    template plus the snippet.
    """
    if not snippet:
        raise ValueError("snippet must be non-empty")
    kept = list(docs)
    dropped = 0

    def build(current: list[KnowledgeDocument]) -> tuple[ChatMessage, ...]:
        if current:
            context = "\n".join(f"[{d.source}:{d.id}] {d.body}" for d in current)
            user = f"Context:\n{context}\n\nfile content: {snippet}"
        else:
            user = f"file content: {snippet}"
        return (ChatMessage(DEVELOPER, base), ChatMessage(USER, user))

    messages = build(kept)
    while budget is not None and kept and sum(len(m.content) for m in messages) > budget:
        kept.pop()
        dropped += 1
        messages = build(kept)
    return RagPrompt(messages, dropped)


_CLASSIFICATION_RE = re.compile(
    r"(?:predicted|overall)\s+classification\W{0,20}?(malicious|benign)(?!\s+or\s)",
    re.IGNORECASE,
)
_FALLBACK_CLASSIFICATION_RE = re.compile(
    r"\bclassification\W{0,20}?(malicious|benign)(?!\s+or\s)",
    re.IGNORECASE,
)
# gap between the field name and the integer must not cross other digits,
# and ranges like "0-100" are never a score
_SCORE_RE = re.compile(
    r"score\b[^\d+-]{0,20}?(\d{1,3})(?!\s*[-–]\s*\d)",
    re.IGNORECASE,
)
_EXPLANATION_RE = re.compile(
    r"explanation\b[\s*:\-—]*([\s\S]*)\Z",
    re.IGNORECASE,
)


def parse_verdict(response: str) -> ParsedVerdict:
    """Extract (classification, score, explanation) from free-form model output.

    Accepts markdown decoration and both the per-file and the overall field
    names. Raises MalformedVerdict when no classification token can be found
    or when the score is missing or outside 0-100 (out-of-range scores are
    rejected, never clamped).
    """
    match = _CLASSIFICATION_RE.search(response) or _FALLBACK_CLASSIFICATION_RE.search(response)
    if not match:
        raise MalformedVerdict("no classification field in response")
    classification = match.group(1).lower()

    score_match = _SCORE_RE.search(response)
    if not score_match:
        raise MalformedVerdict("no score field in response")
    score = int(score_match.group(1))
    if score > 100:
        raise MalformedVerdict(f"score out of range: {score}")

    explanation_match = _EXPLANATION_RE.search(response)
    explanation = explanation_match.group(1).strip() if explanation_match else ""
    return ParsedVerdict(classification, score, explanation)


def render_verdict(verdict: ParsedVerdict) -> str:
    """Well-formed response text; parse_verdict inverts it exactly."""
    return (
        f"- **Predicted Classification**: {verdict.classification.capitalize()}\n"
        f"- **Malicious Score**: {verdict.score}\n"
        f"- **Explanation**: {verdict.explanation}"
    )
