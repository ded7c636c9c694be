"""Exact top-k similarity search over embedded patient records.

The index embeds only manifestation_text so the gold diagnosis never leaks
into the query side; the stored document_text still carries the diagnosis
and treatment lines, which is what the generator reads as context. Search is
an exact full scan: desk-scale corpora make approximate indexes pointless
and untestable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Iterable, Sequence

import numpy as np

from .backends import EmbeddingBackend
from .build import EhrRecord

INDEX_VERSION = 1
_LOAD_NORM_TOL = 1e-6  # JSON round-trips floats exactly, but stay defensive


class IndexError_(ValueError):
    """Raised for malformed indexes, dimension mismatches, duplicate ids."""


@dataclass(frozen=True, slots=True)
class DocumentIndex:
    record_ids: tuple[str, ...]
    document_texts: tuple[str, ...]
    matrix: np.ndarray  # (n, dimension) unit rows, parallel to record_ids

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.record_ids)

    def entries(self) -> Iterable[tuple[str, str, np.ndarray]]:
        for i, rid in enumerate(self.record_ids):
            yield rid, self.document_texts[i], self.matrix[i]


def document_text(record: EhrRecord) -> str:
    treatment = record.treatment_text or ""
    return (
        f"diagnosis: {record.diagnosis_raw}\n"
        f"manifestations: {record.manifestation_text}\n"
        f"treatment: {treatment}"
    )


def ingest(corpus: Sequence[EhrRecord], embedder: EmbeddingBackend) -> DocumentIndex:
    """Embed manifestation texts and build the index in corpus order."""
    if not corpus:
        raise IndexError_("cannot ingest an empty corpus")
    seen: set[str] = set()
    for record in corpus:
        if record.record_id in seen:
            raise IndexError_(f"duplicate record_id in corpus: {record.record_id!r}")
        seen.add(record.record_id)
    vectors = embedder.embed([r.manifestation_text for r in corpus])
    matrix = np.vstack(vectors)
    return DocumentIndex(
        record_ids=tuple(r.record_id for r in corpus),
        document_texts=tuple(document_text(r) for r in corpus),
        matrix=matrix,
    )


@dataclass(frozen=True, slots=True)
class Hit:
    record_id: str
    document_text: str
    score: float


@dataclass(frozen=True, slots=True)
class RetrievedContext:
    hits: tuple[Hit, ...]
    k_requested: int


def retrieve(
    index: DocumentIndex,
    query_vector: np.ndarray,
    k: int,
    exclude_record_ids: AbstractSet[str] = frozenset(),
) -> RetrievedContext:
    """Exact top-k by dot product, descending; ties by record_id ascending.

    exclude_record_ids drops records before ranking (the eval harness uses
    it to keep a test case's own record out of its context).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise IndexError_(
            f"query vector has shape {q.shape}, index dimension is {index.dimension}"
        )
    scores = index.matrix @ q
    order = sorted(
        (i for i in range(len(index)) if index.record_ids[i] not in exclude_record_ids),
        key=lambda i: (-scores[i], index.record_ids[i]),
    )
    hits = tuple(
        Hit(index.record_ids[i], index.document_texts[i], float(scores[i]))
        for i in order[:k]
    )
    return RetrievedContext(hits=hits, k_requested=k)


def save_index(index: DocumentIndex, path: str | Path) -> None:
    doc = {
        "version": INDEX_VERSION,
        "dimension": index.dimension,
        "entries": [
            {
                "record_id": rid,
                "document_text": text,
                "vector": [float(x) for x in vec],
            }
            for rid, text, vec in index.entries()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_index(path: str | Path) -> DocumentIndex:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IndexError_(f"index file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != INDEX_VERSION:
        raise IndexError_(f"unsupported index document: version {doc.get('version')!r}")
    dimension = doc.get("dimension")
    entries = doc.get("entries")
    if not isinstance(dimension, int) or dimension < 1 or not isinstance(entries, list):
        raise IndexError_("index document missing dimension or entries")
    ids: list[str] = []
    texts: list[str] = []
    rows: list[np.ndarray] = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise IndexError_(f"index entry must be an object: {entry!r}")
        rid = entry.get("record_id")
        text = entry.get("document_text")
        vector = entry.get("vector")
        if not isinstance(rid, str) or not isinstance(text, str) or not isinstance(vector, list):
            raise IndexError_(f"index entry has missing or ill-typed fields: {entry!r}")
        row = np.asarray(vector, dtype=np.float64)
        if row.shape != (dimension,):
            raise IndexError_(
                f"vector for {rid!r} has length {row.shape[0]}, expected {dimension}"
            )
        norm = float(np.linalg.norm(row))
        if abs(norm - 1.0) > _LOAD_NORM_TOL:
            raise IndexError_(f"vector for {rid!r} is not unit-norm (|v| = {norm!r})")
        ids.append(rid)
        texts.append(text)
        rows.append(row)
    if len(set(ids)) != len(ids):
        raise IndexError_("index contains duplicate record ids")
    if not rows:
        raise IndexError_("index contains no entries")
    return DocumentIndex(tuple(ids), tuple(texts), np.vstack(rows))
