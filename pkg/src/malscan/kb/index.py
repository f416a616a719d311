"""Exact cosine-similarity retrieval over one document collection.

Collections here top out around ten thousand documents, so brute force is
both cheap and exactly testable; no approximate index structures. Each
collection persists to a single line-delimited file: a header record with
name, dimension, and count, then one record per document.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .documents import KnowledgeDocument


class IndexError_(Exception):
    pass


class DimensionMismatch(IndexError_):
    pass


class VectorIndex:
    """Immutable-after-build collection of embedded documents."""

    def __init__(self, name: str, dimension: int):
        if not name:
            raise ValueError("collection name must be non-empty")
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.name = name
        self.dimension = dimension
        self.documents: dict[str, KnowledgeDocument] = {}
        self._norms: dict[str, float] = {}

    def __len__(self) -> int:
        return len(self.documents)

    def add(self, doc: KnowledgeDocument) -> None:
        if doc.embedding is None:
            raise ValueError(f"document {doc.id!r} has no embedding")
        emb = np.asarray(doc.embedding, dtype=float)
        if emb.shape != (self.dimension,):
            raise DimensionMismatch(
                f"document {doc.id!r} embedding has shape {emb.shape}, "
                f"collection {self.name!r} expects ({self.dimension},)"
            )
        if not np.all(np.isfinite(emb)):
            raise ValueError(f"document {doc.id!r} embedding has non-finite components")
        norm = float(np.linalg.norm(emb))
        if norm == 0.0:
            raise ValueError(f"document {doc.id!r} embedding is the zero vector")
        if doc.id in self.documents:
            raise ValueError(f"duplicate document id {doc.id!r} in collection {self.name!r}")
        doc.embedding = emb
        self.documents[doc.id] = doc
        self._norms[doc.id] = norm

    def add_all(self, docs) -> None:
        for doc in docs:
            self.add(doc)

    def query(self, q: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine similarity, ties broken by id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dimension,):
            raise DimensionMismatch(
                f"query has shape {q.shape}, collection {self.name!r} "
                f"expects ({self.dimension},)"
            )
        q_norm = float(np.linalg.norm(q))
        if q_norm == 0.0 or not math.isfinite(q_norm):
            raise ValueError("query vector must be finite and non-zero")
        scores = {
            doc_id: float(np.dot(doc.embedding, q)) / (self._norms[doc_id] * q_norm)
            for doc_id, doc in self.documents.items()
        }
        ranked = sorted(scores, key=lambda doc_id: (-scores[doc_id], doc_id))
        return [(doc_id, scores[doc_id]) for doc_id in ranked[:k]]

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            header = {"name": self.name, "dimension": self.dimension, "count": len(self)}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for doc_id in sorted(self.documents):
                doc = self.documents[doc_id]
                record = {
                    "id": doc.id,
                    "source": doc.source,
                    "title": doc.title,
                    "body": doc.body,
                    "metadata": doc.metadata,
                    "embedding": list(map(float, doc.embedding)),
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
                index = cls(header["name"], int(header["dimension"]))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
                raise IndexError_(f"bad collection header in {path}: {err}") from err
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                doc = KnowledgeDocument(
                    id=record["id"],
                    source=record["source"],
                    title=record["title"],
                    body=record["body"],
                    metadata=dict(record.get("metadata", {})),
                    embedding=np.asarray(record["embedding"], dtype=float),
                )
                index.add(doc)
        if len(index) != header["count"]:
            raise IndexError_(
                f"collection {path} header claims {header['count']} documents, "
                f"found {len(index)}"
            )
        return index


def build_index(name: str, docs, embedder) -> VectorIndex:
    """Embed document bodies (when needed) and assemble a collection."""
    index = VectorIndex(name, embedder.dimension)
    for doc in docs:
        if doc.embedding is None:
            doc.embedding = embedder.embed(doc.body)
        index.add(doc)
    return index
