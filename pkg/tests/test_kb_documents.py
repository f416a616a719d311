from __future__ import annotations

import pytest

from malscan.kb.documents import (
    KnowledgeDocument,
    SnippetRow,
    ingest_advisories,
    ingest_snippets,
)


def _advisory(i: int, **overrides) -> dict:
    record = {
        "id": f"GHSA-{i:04d}",
        "summary": f"summary {i}",
        "description": f"longer description {i}",
        "severity": "high",
        "package": f"pkg{i}",
    }
    record.update(overrides)
    return record


class TestAdvisories:
    def test_well_formed_records_preserved(self):
        docs, skipped = ingest_advisories([_advisory(i) for i in range(3)])
        assert len(docs) == 3 and not skipped
        assert docs[0].source == "advisory"
        assert docs[0].body == "summary 0\nlonger description 0"
        assert docs[0].metadata == {
            "advisory_id": "GHSA-0000",
            "severity": "high",
            "package": "pkg0",
        }

    def test_missing_description_uses_summary_alone(self):
        docs, skipped = ingest_advisories([_advisory(1, description="")])
        assert not skipped
        assert docs[0].body == "summary 1"

    def test_missing_required_field_skips_with_report(self):
        docs, skipped = ingest_advisories(
            [_advisory(1, summary=""), _advisory(2), {"summary": "s", "severity": "low",
                                                      "package": "p"}]
        )
        assert [d.id for d in docs] == ["GHSA-0002"]
        assert [(m.record_id, m.field_name) for m in skipped] == [
            ("GHSA-0001", "summary"),
            ("<record 2>", "id"),
        ]

    def test_scale_fixture_count_preserved(self):
        docs, skipped = ingest_advisories(_advisory(i) for i in range(3474))
        assert len(docs) == 3474 and not skipped


class TestSnippets:
    def test_exclusion_by_length(self):
        rows = [SnippetRow(f"pkg{i}", "x" * (30 if i % 2 else 10), i % 2) for i in range(6)]
        docs, excluded = ingest_snippets(rows, max_len=20)
        assert len(docs) == 3 and len(excluded) == 3

    def test_no_exclusions_when_all_short(self):
        docs, excluded = ingest_snippets([SnippetRow("a", "short", 1)], max_len=100)
        assert len(docs) == 1 and excluded == []
        assert docs[0].metadata == {"package": "a", "label": "1"}

    def test_max_len_one_excludes_everything(self):
        rows = [SnippetRow(f"p{i}", "print('hi')", 1) for i in range(4)]
        docs, excluded = ingest_snippets(rows, max_len=1)
        assert docs == [] and len(excluded) == 4

    def test_bad_max_len(self):
        with pytest.raises(ValueError):
            ingest_snippets([], max_len=0)


def test_document_validation():
    with pytest.raises(ValueError):
        KnowledgeDocument(id="x", source="nonsense", title="t", body="b")
    with pytest.raises(ValueError):
        KnowledgeDocument(id="x", source="yara", title="t", body="")
