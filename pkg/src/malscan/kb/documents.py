"""Knowledge documents: the retrievable unit shared by all three collections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

YARA_SOURCE = "yara"
ADVISORY_SOURCE = "advisory"
SNIPPET_SOURCE = "snippet"

_SOURCES = frozenset({YARA_SOURCE, ADVISORY_SOURCE, SNIPPET_SOURCE})

DEFAULT_SNIPPET_MAX_LEN = 20_000
DEFAULT_BODY_BUDGET = 32_768


class DocumentError(Exception):
    pass


class MissingField(DocumentError):
    """An input record lacked a required field; the record is skipped."""

    def __init__(self, record_id: str, field_name: str):
        super().__init__(f"record {record_id!r} missing field {field_name!r}")
        self.record_id = record_id
        self.field_name = field_name


@dataclass
class KnowledgeDocument:
    """One embedded KB entry with its source metadata."""

    id: str
    source: str
    title: str
    body: str
    metadata: dict[str, str] = field(default_factory=dict)
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.source not in _SOURCES:
            raise ValueError(f"unknown document source: {self.source!r}")
        if not self.body:
            raise ValueError(f"document {self.id!r} has an empty body")
        if len(self.body) > DEFAULT_BODY_BUDGET:
            raise ValueError(f"document {self.id!r} body exceeds budget of {DEFAULT_BODY_BUDGET}")


def ingest_advisories(
    records: Iterable[Mapping[str, object]],
) -> tuple[list[KnowledgeDocument], list[MissingField]]:
    """One document per advisory record; incomplete records skipped and reported.

    Required fields: id, summary, severity, package. A missing description is
    fine, the body is then the summary alone.
    """
    docs: list[KnowledgeDocument] = []
    skipped: list[MissingField] = []
    for i, record in enumerate(records):
        record_id = str(record.get("id") or f"<record {i}>")
        missing = next(
            (name for name in ("id", "summary", "severity", "package") if not record.get(name)),
            None,
        )
        if missing is not None:
            skipped.append(MissingField(record_id, missing))
            continue
        summary = str(record["summary"])
        description = str(record.get("description") or "")
        body = f"{summary}\n{description}" if description else summary
        docs.append(
            KnowledgeDocument(
                id=record_id,
                source=ADVISORY_SOURCE,
                title=summary,
                body=body,
                metadata={
                    "advisory_id": record_id,
                    "severity": str(record["severity"]),
                    "package": str(record["package"]),
                },
            )
        )
    return docs, skipped


@dataclass(frozen=True)
class SnippetRow:
    package: str
    text: str
    label: int


def ingest_snippets(
    rows: Iterable[SnippetRow],
    max_len: int = DEFAULT_SNIPPET_MAX_LEN,
) -> tuple[list[KnowledgeDocument], list[str]]:
    """Index labeled setup.py texts, excluding over-length ones.

    Returns (documents, names of excluded packages). The length cutoff keeps
    pathological installers from dominating the embedding budget.
    """
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    docs: list[KnowledgeDocument] = []
    excluded: list[str] = []
    for row in rows:
        if len(row.text) > max_len:
            excluded.append(row.package)
            continue
        docs.append(
            KnowledgeDocument(
                id=row.package,
                source=SNIPPET_SOURCE,
                title=row.package,
                body=row.text,
                metadata={"package": row.package, "label": str(row.label)},
            )
        )
    return docs, excluded
