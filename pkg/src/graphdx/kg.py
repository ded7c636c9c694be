"""Four-tier diagnostic knowledge graph: types, validation, persistence.

The graph has four levels. L1 categories sit at the top, L2 subcategories
under them, L3 diseases under subcategories, and L4 manifestation features
under diseases. L4 splits into two tiers that never merge: L4a features come
from model augmentation, L4d features come from decomposed records. Only two
edge kinds exist: ``is_a`` points strictly upward (L3 -> L2, L2 -> L1) and
``has_manifestation_of`` points from a disease to one of its features
(L3 -> L4a or L3 -> L4d). Above L3 the structure is a strict tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .text import slugify

DOCUMENT_VERSION = 1


class GraphError(ValueError):
    """Raised for graph lookups or documents that violate the model."""


class Level(str, Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    L4A = "L4a"
    L4D = "L4d"


class Relation(str, Enum):
    IS_A = "is_a"
    HAS_MANIFESTATION = "has_manifestation_of"


class FeatureKind(str, Enum):
    SYMPTOM = "symptom"
    LOCATION = "location"
    ACTIVITY_LIMITATION = "activity_limitation"
    OTHER = "other"


FEATURE_LEVELS = frozenset({Level.L4A, Level.L4D})


def node_id(level: Level, label: str) -> str:
    """Canonical node id: level prefix plus label slug, e.g. ``L3:sciatica``."""
    return f"{level.value}:{slugify(label)}"


@dataclass(frozen=True, slots=True)
class KgNode:
    id: str
    level: Level
    label: str
    feature_kind: FeatureKind | None = None


@dataclass(frozen=True, slots=True)
class KgEdge:
    src: str
    dst: str
    relation: Relation


class DiagnosticKG:
    """Immutable node/edge container with adjacency lookups.

    Construction never raises on structural violations; run validate() to
    collect them. Exact duplicate nodes and edges collapse (set semantics).
    """

    def __init__(self, nodes: Iterable[KgNode], edges: Iterable[KgEdge]):
        self._nodes: tuple[KgNode, ...] = tuple(dict.fromkeys(nodes))
        self._edges: tuple[KgEdge, ...] = tuple(dict.fromkeys(edges))
        self._by_id: dict[str, KgNode] = {}
        self._id_collisions: list[str] = []
        for node in self._nodes:
            if node.id in self._by_id:
                self._id_collisions.append(node.id)
            else:
                self._by_id[node.id] = node
        self._out: dict[str, list[KgEdge]] = {}
        self._in: dict[str, list[KgEdge]] = {}
        for edge in self._edges:
            self._out.setdefault(edge.src, []).append(edge)
            self._in.setdefault(edge.dst, []).append(edge)

    @property
    def nodes(self) -> tuple[KgNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[KgEdge, ...]:
        return self._edges

    def __contains__(self, nid: str) -> bool:
        return nid in self._by_id

    def node(self, nid: str) -> KgNode:
        try:
            return self._by_id[nid]
        except KeyError:
            raise GraphError(f"unknown node id: {nid!r}") from None

    def nodes_at(self, level: Level) -> list[KgNode]:
        return [n for n in self._nodes if n.level is level]

    def out_edges(self, nid: str, relation: Relation | None = None) -> list[KgEdge]:
        edges = self._out.get(nid, [])
        if relation is None:
            return list(edges)
        return [e for e in edges if e.relation is relation]

    def in_edges(self, nid: str, relation: Relation | None = None) -> list[KgEdge]:
        edges = self._in.get(nid, [])
        if relation is None:
            return list(edges)
        return [e for e in edges if e.relation is relation]

    def neighbors(self, nid: str) -> Iterator[str]:
        """Undirected neighbor ids, each edge walked both ways."""
        for edge in self._out.get(nid, []):
            yield edge.dst
        for edge in self._in.get(nid, []):
            yield edge.src


def graph_equal(a: DiagnosticKG, b: DiagnosticKG) -> bool:
    return set(a.nodes) == set(b.nodes) and set(a.edges) == set(b.edges)


# Edge shape constraints: relation -> allowed (src level, dst level) pairs.
_EDGE_SHAPES: Mapping[Relation, frozenset[tuple[Level, Level]]] = {
    Relation.IS_A: frozenset({(Level.L3, Level.L2), (Level.L2, Level.L1)}),
    Relation.HAS_MANIFESTATION: frozenset(
        {(Level.L3, Level.L4A), (Level.L3, Level.L4D)}
    ),
}


def validate(kg: DiagnosticKG) -> list[str]:
    """Collect structural violations; an empty list means the graph is valid.

    Checked: node id uniqueness, feature_kind present exactly on L4 nodes,
    edge endpoints exist, edge level shapes, single is_a parent for every
    L3 and L2 node, and at least one incident manifestation edge per L4 node.
    """
    violations: list[str] = []
    for nid in kg._id_collisions:
        violations.append(f"duplicate node id: {nid}")
    for node in kg.nodes:
        is_feature = node.level in FEATURE_LEVELS
        if is_feature and node.feature_kind is None:
            violations.append(f"feature node missing feature_kind: {node.id}")
        if not is_feature and node.feature_kind is not None:
            violations.append(f"non-feature node carries feature_kind: {node.id}")
        if not node.label.strip():
            violations.append(f"empty label: {node.id}")
    for edge in kg.edges:
        missing = [nid for nid in (edge.src, edge.dst) if nid not in kg]
        if missing:
            for nid in missing:
                violations.append(
                    f"edge {edge.src} -> {edge.dst} references unknown node: {nid}"
                )
            continue
        shape = (kg.node(edge.src).level, kg.node(edge.dst).level)
        if shape not in _EDGE_SHAPES[edge.relation]:
            violations.append(
                f"edge {edge.src} -> {edge.dst} has invalid levels for"
                f" {edge.relation.value}: {shape[0].value} -> {shape[1].value}"
            )
    for level in (Level.L3, Level.L2):
        for node in kg.nodes_at(level):
            parents = kg.out_edges(node.id, Relation.IS_A)
            if len(parents) != 1:
                violations.append(
                    f"{node.id} must have exactly one is_a parent, found {len(parents)}"
                )
    for level in FEATURE_LEVELS:
        for node in kg.nodes_at(level):
            if not kg.in_edges(node.id, Relation.HAS_MANIFESTATION):
                violations.append(f"feature node has no manifestation edge: {node.id}")
    return violations


def ancestors(kg: DiagnosticKG, disease_id: str) -> tuple[str, str]:
    """(subcategory id, category id) for a disease, following is_a upward."""
    node = kg.node(disease_id)
    if node.level is not Level.L3:
        raise GraphError(f"not a disease node: {disease_id} is {node.level.value}")
    sub = _sole_parent(kg, disease_id)
    cat = _sole_parent(kg, sub)
    return sub, cat


def _sole_parent(kg: DiagnosticKG, nid: str) -> str:
    parents = kg.out_edges(nid, Relation.IS_A)
    if len(parents) != 1:
        raise GraphError(
            f"{nid} has {len(parents)} is_a parents; validate the graph first"
        )
    return parents[0].dst


@dataclass(frozen=True, slots=True)
class Subgraph:
    subcategory: str
    diseases: frozenset[str]
    features: frozenset[str]
    edges: frozenset[KgEdge]


def subgraph_under(kg: DiagnosticKG, subcategory_id: str) -> Subgraph:
    """Diseases under a subcategory plus every feature they manifest."""
    node = kg.node(subcategory_id)
    if node.level is not Level.L2:
        raise GraphError(
            f"not a subcategory node: {subcategory_id} is {node.level.value}"
        )
    dis_edges = kg.in_edges(subcategory_id, Relation.IS_A)
    diseases = frozenset(e.src for e in dis_edges)
    feat_edges = [
        e
        for d in diseases
        for e in kg.out_edges(d, Relation.HAS_MANIFESTATION)
    ]
    features = frozenset(e.dst for e in feat_edges)
    return Subgraph(
        subcategory=subcategory_id,
        diseases=diseases,
        features=features,
        edges=frozenset(dis_edges) | frozenset(feat_edges),
    )


def dumps(kg: DiagnosticKG) -> str:
    """Serialize to the canonical JSON document (stable byte-for-byte)."""
    nodes = []
    for node in sorted(kg.nodes, key=lambda n: n.id):
        entry: dict[str, str] = {
            "id": node.id,
            "level": node.level.value,
            "label": node.label,
        }
        if node.feature_kind is not None:
            entry["feature_kind"] = node.feature_kind.value
        nodes.append(entry)
    edges = [
        {"src": e.src, "dst": e.dst, "relation": e.relation.value}
        for e in sorted(kg.edges, key=lambda e: (e.src, e.dst, e.relation.value))
    ]
    doc = {"version": DOCUMENT_VERSION, "nodes": nodes, "edges": edges}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save(kg: DiagnosticKG, path: str | Path) -> None:
    Path(path).write_text(dumps(kg), encoding="utf-8")


def loads(text: str) -> DiagnosticKG:
    """Parse and fully validate a graph document; any violation raises."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise GraphError("document root must be an object")
    if doc.get("version") != DOCUMENT_VERSION:
        raise GraphError(f"unsupported document version: {doc.get('version')!r}")
    for key in ("nodes", "edges"):
        if not isinstance(doc.get(key), list):
            raise GraphError(f"document missing list field: {key}")
    nodes = [_parse_node(entry) for entry in doc["nodes"]]
    edges = [_parse_edge(entry) for entry in doc["edges"]]
    kg = DiagnosticKG(nodes, edges)
    violations = validate(kg)
    if violations:
        raise GraphError("invalid graph document: " + "; ".join(violations))
    return kg


def load(path: str | Path) -> DiagnosticKG:
    return loads(Path(path).read_text(encoding="utf-8"))


def _parse_node(entry: object) -> KgNode:
    if not isinstance(entry, dict):
        raise GraphError(f"node entry must be an object: {entry!r}")
    for key in ("id", "level", "label"):
        if not isinstance(entry.get(key), str):
            raise GraphError(f"node entry missing string field {key!r}: {entry!r}")
    try:
        level = Level(entry["level"])
    except ValueError:
        raise GraphError(f"unknown level {entry['level']!r} on node {entry['id']!r}") from None
    kind_raw = entry.get("feature_kind")
    kind: FeatureKind | None = None
    if kind_raw is not None:
        try:
            kind = FeatureKind(kind_raw)
        except ValueError:
            raise GraphError(
                f"unknown feature_kind {kind_raw!r} on node {entry['id']!r}"
            ) from None
    return KgNode(id=entry["id"], level=level, label=entry["label"], feature_kind=kind)


def _parse_edge(entry: object) -> KgEdge:
    if not isinstance(entry, dict):
        raise GraphError(f"edge entry must be an object: {entry!r}")
    for key in ("src", "dst", "relation"):
        if not isinstance(entry.get(key), str):
            raise GraphError(f"edge entry missing string field {key!r}: {entry!r}")
    try:
        relation = Relation(entry["relation"])
    except ValueError:
        raise GraphError(
            f"unknown relation {entry['relation']!r} on edge"
            f" {entry['src']!r} -> {entry['dst']!r}"
        ) from None
    return KgEdge(src=entry["src"], dst=entry["dst"], relation=relation)
