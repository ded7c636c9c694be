"""Diagnostic graph construction from an EHR corpus.

Four stages. First, free-text disease names are clustered so spelling and
phrasing variants collapse onto one canonical name per cluster. Second, a
chat backend proposes subcategory and category topics and every disease is
assigned to its nearest topic by embedding similarity. Third, each record's
manifestation text is decomposed into discrete features that become the L4d
tier. Fourth (optional), the chat backend is asked, per disease, for the
manifestations that distinguish it from its sibling diseases; the answers
become the L4a tier.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .backends import BackendError, ChatBackend, EmbeddingBackend
from .kg import (
    DiagnosticKG,
    FeatureKind,
    KgEdge,
    KgNode,
    Level,
    Relation,
    node_id,
    validate,
)
from .matching import DecomposeError, decompose
from .templates import builtin_template
from .text import classify_feature_kind, normalize_feature

log = logging.getLogger(__name__)

DEFAULT_CLUSTER_THRESHOLD = 0.35

TOPIC_SYSTEM = (
    "You are a clinical taxonomist. You group conditions into clinically"
    " meaningful topics and always respond with only a JSON array of"
    " short topic name strings."
)

AUGMENT_SYSTEM = (
    "You are a clinical knowledge assistant. You list manifestations that"
    " set one condition apart from similar ones, and always respond with"
    " only a JSON array of short phrase strings."
)

_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?(.*?)```", re.DOTALL)


class BuildError(ValueError):
    """Raised for corpus defects and unrecoverable build-stage failures."""


class TopicError(BuildError):
    """Chat backend returned no usable topic list. Carries the raw text."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(f"{message}: {raw_text[:200]!r}")
        self.raw_text = raw_text


@dataclass(frozen=True, slots=True)
class EhrRecord:
    record_id: str
    diagnosis_raw: str
    manifestation_text: str
    treatment_text: str | None = None
    demographics: Mapping[str, str] | None = None


def load_corpus(path: str | Path) -> list[EhrRecord]:
    """Read a JSON-lines corpus, one record per line, validating as it goes."""
    records: list[EhrRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BuildError(
                f"{path}:{lineno}: not valid JSON"
                f" (corpus files are JSON Lines, one record per line): {exc}"
            ) from exc
        record = _record_from_dict(doc, where=f"{path}:{lineno}")
        if record.record_id in seen:
            raise BuildError(f"{path}:{lineno}: duplicate record_id {record.record_id!r}")
        seen.add(record.record_id)
        records.append(record)
    if not records:
        raise BuildError(f"corpus is empty: {path}")
    return records


def save_corpus(records: Sequence[EhrRecord], path: str | Path) -> None:
    lines = []
    for r in records:
        doc: dict[str, object] = {
            "record_id": r.record_id,
            "diagnosis_raw": r.diagnosis_raw,
            "manifestation_text": r.manifestation_text,
        }
        if r.treatment_text is not None:
            doc["treatment_text"] = r.treatment_text
        if r.demographics is not None:
            doc["demographics"] = dict(r.demographics)
        lines.append(json.dumps(doc, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _record_from_dict(doc: object, where: str) -> EhrRecord:
    if not isinstance(doc, dict):
        raise BuildError(f"{where}: record must be a JSON object")
    for key in ("record_id", "diagnosis_raw", "manifestation_text"):
        value = doc.get(key)
        if not isinstance(value, str) or not value.strip():
            raise BuildError(f"{where}: missing or empty field {key!r}")
    treatment = doc.get("treatment_text")
    if treatment is not None and not isinstance(treatment, str):
        raise BuildError(f"{where}: treatment_text must be a string")
    demographics = doc.get("demographics")
    if demographics is not None and not isinstance(demographics, dict):
        raise BuildError(f"{where}: demographics must be an object")
    return EhrRecord(
        record_id=doc["record_id"],
        diagnosis_raw=doc["diagnosis_raw"],
        manifestation_text=doc["manifestation_text"],
        treatment_text=treatment,
        demographics=demographics,
    )


@dataclass(slots=True)
class CanonicalDiseaseMap:
    assignments: dict[str, str]  # raw name -> canonical name
    clusters: dict[str, dict[str, int]]  # canonical -> member -> frequency

    def canonical(self, raw_name: str) -> str:
        try:
            return self.assignments[raw_name]
        except KeyError:
            raise BuildError(f"disease name not in canonical map: {raw_name!r}") from None


def cluster_diseases(
    raw_names: Iterable[str],
    embedder: EmbeddingBackend,
    threshold: float = DEFAULT_CLUSTER_THRESHOLD,
) -> CanonicalDiseaseMap:
    """Collapse disease-name variants by average-linkage cosine clustering.

    Each cluster's canonical name is its most frequent member; frequency
    ties go to the lexicographically smallest name.
    """
    counts = Counter(raw_names)
    if not counts:
        raise BuildError("cannot cluster an empty disease list")
    names = sorted(counts)
    if len(names) == 1:
        only = names[0]
        return CanonicalDiseaseMap({only: only}, {only: dict(counts)})
    matrix = np.vstack(embedder.embed(names))
    links = linkage(matrix, method="average", metric="cosine")
    labels = fcluster(links, t=threshold, criterion="distance")
    members: dict[int, list[str]] = {}
    for name, label in zip(names, labels):
        members.setdefault(int(label), []).append(name)
    assignments: dict[str, str] = {}
    clusters: dict[str, dict[str, int]] = {}
    for group in members.values():
        canonical = min(group, key=lambda n: (-counts[n], n))
        clusters[canonical] = {n: counts[n] for n in sorted(group)}
        for name in group:
            assignments[name] = canonical
    return CanonicalDiseaseMap(assignments, clusters)


@dataclass(slots=True)
class HierarchyAssignment:
    subcategory_of: dict[str, str]  # canonical disease -> subcategory label
    category_of: dict[str, str]  # subcategory label -> category label


def topic_user_prompt(items: Sequence[str], max_topics: int, noun: str) -> str:
    """The topic-proposal instruction sent to the chat backend."""
    return (
        f"Cluster the following {noun} into multiple categories based on the"
        " similarity of their manifestations, affected locations, and other"
        f" characteristics. Propose at most {max_topics} short category names"
        " covering all of them. Respond with only a JSON array of category"
        f" name strings. {noun.capitalize()}: {', '.join(items)}"
    )


def propose_topics(
    chat: ChatBackend, items: Sequence[str], max_topics: int, noun: str
) -> list[str]:
    response = chat.chat(TOPIC_SYSTEM, topic_user_prompt(items, max_topics, noun))
    topics = parse_string_array(response)
    if topics is None or not topics:
        raise TopicError(f"unparseable or empty topic list for {noun}", response)
    deduped: list[str] = []
    for topic in topics:
        cleaned = normalize_feature(topic)
        if cleaned and cleaned not in deduped:
            deduped.append(cleaned)
    if not deduped:
        raise TopicError(f"topic list for {noun} is empty after normalization", response)
    return deduped


def parse_string_array(text: str) -> list[str] | None:
    """Extract a JSON array of strings from a chat response, or None."""
    candidates = [m.strip() for m in _FENCE_RE.findall(text)]
    candidates.append(text.strip())
    start = text.find("[")
    end = text.rfind("]")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, list) and all(isinstance(x, str) for x in doc):
            return doc
    return None


def aggregate_hierarchy(
    diseases: Iterable[str],
    chat: ChatBackend,
    embedder: EmbeddingBackend,
    max_subcategories: int = 12,
    max_categories: int = 6,
) -> HierarchyAssignment:
    """Propose topics with the chat backend, assign by nearest embedding.

    Two rounds: disease list -> subcategory topics, subcategory topics ->
    category topics. Assignment is a plain cosine argmax against the topic
    embeddings; ties go to the earliest topic in proposal order.
    """
    names = sorted(set(diseases))
    if not names:
        raise BuildError("cannot build a hierarchy from zero diseases")
    sub_topics = propose_topics(chat, names, max_subcategories, "diseases")
    cat_topics = propose_topics(chat, sub_topics, max_categories, "disease subcategories")
    subcategory_of = _nearest_assignment(names, sub_topics, embedder)
    category_of = _nearest_assignment(sub_topics, cat_topics, embedder)
    return HierarchyAssignment(subcategory_of=subcategory_of, category_of=category_of)


def _nearest_assignment(
    items: Sequence[str], topics: Sequence[str], embedder: EmbeddingBackend
) -> dict[str, str]:
    item_vectors = embedder.embed(list(items))
    topic_matrix = np.vstack(embedder.embed(list(topics)))
    assignment: dict[str, str] = {}
    for item, vector in zip(items, item_vectors):
        scores = topic_matrix @ vector
        assignment[item] = topics[int(np.argmax(scores))]
    return assignment


@dataclass(slots=True)
class DecompositionResult:
    features: list[tuple[str, str, FeatureKind]]  # (canonical disease, feature, kind)
    skipped_record_ids: list[str] = field(default_factory=list)


def decompose_record_manifestations(
    corpus: Sequence[EhrRecord], canonical: CanonicalDiseaseMap
) -> DecompositionResult:
    """Split every record's manifestations into (disease, feature, kind) rows.

    Duplicate (disease, feature) pairs are emitted once, first occurrence
    wins. Records that decompose to nothing land in the skip list.
    """
    result = DecompositionResult(features=[])
    seen: set[tuple[str, str]] = set()
    for record in corpus:
        disease = canonical.canonical(record.diagnosis_raw)
        try:
            fragments = decompose(record.manifestation_text)
        except DecomposeError:
            result.skipped_record_ids.append(record.record_id)
            continue
        for fragment in fragments:
            key = (disease, fragment)
            if key in seen:
                continue
            seen.add(key)
            result.features.append(
                (disease, fragment, FeatureKind(classify_feature_kind(fragment)))
            )
    return result


def build_disease_kg(
    corpus: Sequence[EhrRecord],
    canonical: CanonicalDiseaseMap,
    hierarchy: HierarchyAssignment,
) -> DiagnosticKG:
    """Assemble the validated graph: categories, subcategories, diseases, L4d."""
    if not corpus:
        raise BuildError("cannot build a graph from an empty corpus")
    decomposition = decompose_record_manifestations(corpus, canonical)
    if decomposition.skipped_record_ids:
        log.warning(
            "skipped %d records with zero decomposable features: %s",
            len(decomposition.skipped_record_ids),
            ", ".join(decomposition.skipped_record_ids[:5]),
        )
    diseases = sorted({canonical.canonical(r.diagnosis_raw) for r in corpus})
    missing = [d for d in diseases if d not in hierarchy.subcategory_of]
    if missing:
        raise BuildError(f"hierarchy does not cover diseases: {', '.join(missing)}")
    nodes: list[KgNode] = []
    edges: list[KgEdge] = []
    subcategories = sorted({hierarchy.subcategory_of[d] for d in diseases})
    bad_subs = [s for s in subcategories if s not in hierarchy.category_of]
    if bad_subs:
        raise BuildError(f"hierarchy does not cover subcategories: {', '.join(bad_subs)}")
    categories = sorted({hierarchy.category_of[s] for s in subcategories})
    for category in categories:
        nodes.append(KgNode(node_id(Level.L1, category), Level.L1, category))
    for sub in subcategories:
        nodes.append(KgNode(node_id(Level.L2, sub), Level.L2, sub))
        edges.append(
            KgEdge(
                node_id(Level.L2, sub),
                node_id(Level.L1, hierarchy.category_of[sub]),
                Relation.IS_A,
            )
        )
    for disease in diseases:
        nodes.append(KgNode(node_id(Level.L3, disease), Level.L3, disease))
        edges.append(
            KgEdge(
                node_id(Level.L3, disease),
                node_id(Level.L2, hierarchy.subcategory_of[disease]),
                Relation.IS_A,
            )
        )
    for disease, feature, kind in decomposition.features:
        fid = node_id(Level.L4D, feature)
        nodes.append(KgNode(fid, Level.L4D, feature, kind))
        edges.append(KgEdge(node_id(Level.L3, disease), fid, Relation.HAS_MANIFESTATION))
    kg = DiagnosticKG(nodes, edges)
    violations = validate(kg)
    if violations:
        raise BuildError("built graph failed validation: " + "; ".join(violations))
    return kg


def augment_manifestations(
    kg: DiagnosticKG,
    chat: ChatBackend,
    template: str | None = None,
) -> DiagnosticKG:
    """Add the L4a tier: per-disease distinguishing manifestations.

    For each disease the chat backend is asked what sets it apart from its
    sibling diseases (same subcategory). Unparseable responses and backend
    failures skip that disease with a warning; the build never crashes on a
    single bad generation. Returns a new graph; the input is untouched.
    """
    if template is None:
        template = builtin_template("augment.txt")
    for placeholder in ("{disease}", "{sibling_diseases}"):
        if placeholder not in template:
            raise BuildError(f"augment template is missing placeholder {placeholder}")
    nodes = list(kg.nodes)
    edges = list(kg.edges)
    known_edges = set(edges)
    known_ids = {n.id for n in nodes}
    for disease in sorted(kg.nodes_at(Level.L3), key=lambda n: n.id):
        parents = kg.out_edges(disease.id, Relation.IS_A)
        siblings: list[str] = []
        if parents:
            siblings = sorted(
                kg.node(e.src).label
                for e in kg.in_edges(parents[0].dst, Relation.IS_A)
                if e.src != disease.id
            )
        user_text = template.replace("{disease}", disease.label).replace(
            "{sibling_diseases}", ", ".join(siblings) if siblings else "none listed"
        )
        try:
            response = chat.chat(AUGMENT_SYSTEM, user_text)
        except BackendError as exc:
            log.warning("augmentation skipped for %s: %s", disease.id, exc)
            continue
        phrases = parse_string_array(response)
        if phrases is None:
            log.warning(
                "augmentation response for %s is not a JSON string array; skipped",
                disease.id,
            )
            continue
        for phrase in phrases:
            label = normalize_feature(phrase)
            if not label:
                continue
            fid = node_id(Level.L4A, label)
            if fid not in known_ids:
                nodes.append(
                    KgNode(fid, Level.L4A, label, FeatureKind(classify_feature_kind(label)))
                )
                known_ids.add(fid)
            edge = KgEdge(disease.id, fid, Relation.HAS_MANIFESTATION)
            if edge not in known_edges:
                edges.append(edge)
                known_edges.add(edge)
    augmented = DiagnosticKG(nodes, edges)
    violations = validate(augmented)
    if violations:
        raise BuildError("augmented graph failed validation: " + "; ".join(violations))
    return augmented


def ddxplus_to_records(
    rows: Sequence[Mapping[str, object]],
    evidence_names: Mapping[str, str] | None = None,
) -> list[EhrRecord]:
    """Convert DDXPlus-style patient rows into EhrRecords.

    Expected row keys: PATHOLOGY, EVIDENCES (list of codes or phrases),
    optionally ANTECEDENTS, AGE, SEX, ID. evidence_names maps codes to
    readable phrases; absent codes fall back to underscores-to-spaces.
    """
    records: list[EhrRecord] = []
    for i, row in enumerate(rows):
        pathology = str(row.get("PATHOLOGY", "")).strip()
        evidences = list(row.get("EVIDENCES", []) or [])
        antecedents = list(row.get("ANTECEDENTS", []) or [])
        if not pathology or not (evidences or antecedents):
            raise BuildError(f"row {i}: needs PATHOLOGY and at least one evidence")
        phrases = [_evidence_phrase(str(e), evidence_names) for e in evidences + antecedents]
        demographics: dict[str, str] = {}
        for key in ("AGE", "SEX"):
            if key in row and row[key] is not None:
                demographics[key.lower()] = str(row[key])
        records.append(
            EhrRecord(
                record_id=str(row.get("ID", f"ddx-{i}")),
                diagnosis_raw=pathology,
                manifestation_text="; ".join(phrases),
                demographics=demographics or None,
            )
        )
    return records


def _evidence_phrase(code: str, names: Mapping[str, str] | None) -> str:
    if names and code in names:
        return names[code]
    return code.replace("_", " ").strip()


def sample_per_pathology(
    records: Sequence[EhrRecord], n: int, rng: np.random.Generator
) -> list[EhrRecord]:
    """Draw up to n records per distinct diagnosis_raw, seeded and ordered."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    groups: dict[str, list[EhrRecord]] = {}
    for record in records:
        groups.setdefault(record.diagnosis_raw, []).append(record)
    sampled: list[EhrRecord] = []
    for pathology in sorted(groups):
        group = groups[pathology]
        if len(group) <= n:
            sampled.extend(group)
        else:
            picks = rng.choice(len(group), size=n, replace=False)
            sampled.extend(group[i] for i in sorted(int(p) for p in picks))
    return sampled
