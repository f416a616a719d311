"""Knowledge bases: rule descriptions, advisories, and snippet collections."""

from .documents import (
    ADVISORY_SOURCE,
    SNIPPET_SOURCE,
    YARA_SOURCE,
    KnowledgeDocument,
    MissingField,
    SnippetRow,
    ingest_advisories,
    ingest_snippets,
)
from .embed import EmbeddingProvider, HashEmbedder, HttpEmbedder, ProviderError, TextTooLong
from .index import DimensionMismatch, VectorIndex, build_index
from .yara import (
    RuleSyntaxError,
    TotalParseFailure,
    YaraParseResult,
    YaraRule,
    YaraString,
    describe_rule,
    parse_yara,
    serialize_rule,
)

__all__ = [
    "ADVISORY_SOURCE",
    "SNIPPET_SOURCE",
    "YARA_SOURCE",
    "KnowledgeDocument",
    "MissingField",
    "SnippetRow",
    "ingest_advisories",
    "ingest_snippets",
    "EmbeddingProvider",
    "HashEmbedder",
    "HttpEmbedder",
    "ProviderError",
    "TextTooLong",
    "DimensionMismatch",
    "VectorIndex",
    "build_index",
    "RuleSyntaxError",
    "TotalParseFailure",
    "YaraParseResult",
    "YaraRule",
    "YaraString",
    "describe_rule",
    "parse_yara",
    "serialize_rule",
]


def rule_to_document(rule: YaraRule, llm=None) -> KnowledgeDocument:
    """Turn a parsed rule into a retrievable document with rule metadata."""
    return KnowledgeDocument(
        id=rule.identifier,
        source=YARA_SOURCE,
        title=rule.identifier,
        body=describe_rule(rule, llm),
        metadata={
            "rule_id": str(rule.meta.get("id", rule.identifier)),
            "author": str(rule.meta.get("author", "")),
            "os": str(rule.meta.get("os", "")),
        },
    )
