"""Query decomposition, feature matching, subcategory voting, differences.

The flow: a raw patient text is decomposed into short feature clauses, each
clause is embedded and matched against the graph's decomposed-feature nodes
(L4d), the matched nodes vote for the nearest subcategory by undirected hop
distance, and the winning subcategory's augmented features (L4a) become the
diagnostic-differences triples handed to the generator.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .backends import EmbeddingBackend
from .kg import DiagnosticKG, GraphError, Level, Relation, subgraph_under
from .text import normalize_feature

# Clause separators: sentence terminators, semicolons, a comma followed by a
# conjunction, or a standalone "and"/"but". Plain commas do not split.
_SEPARATOR_RE = re.compile(
    r"[.;!?]+|,\s*(?:and|but)\b|\b(?:and|but)\b", re.IGNORECASE
)


class DecomposeError(ValueError):
    """Raised when a text yields no usable feature fragments."""


def decompose(raw_text: str) -> list[str]:
    """Split a manifestation text into normalized feature clauses.

    Fragments are normalized (lowercased, whitespace collapsed, terminal
    punctuation stripped), empties dropped, order preserved.
    """
    if not raw_text or not raw_text.strip():
        raise DecomposeError("cannot decompose empty text")
    fragments = [normalize_feature(part) for part in _SEPARATOR_RE.split(raw_text)]
    fragments = [f for f in fragments if f]
    if not fragments:
        raise DecomposeError(f"text decomposed to zero features: {raw_text!r}")
    return fragments


@dataclass(slots=True)
class PatientQuery:
    raw_text: str
    features: list[str]
    feature_embeddings: list[np.ndarray]
    confirmed: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.features) != len(self.feature_embeddings):
            raise ValueError(
                f"{len(self.features)} features but"
                f" {len(self.feature_embeddings)} embeddings"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatientQuery):
            return NotImplemented
        return (
            self.raw_text == other.raw_text
            and self.features == other.features
            and self.confirmed == other.confirmed
            and len(self.feature_embeddings) == len(other.feature_embeddings)
            and all(
                np.array_equal(a, b)
                for a, b in zip(self.feature_embeddings, other.feature_embeddings)
            )
        )


def prepare_query(raw_text: str, embedder: EmbeddingBackend) -> PatientQuery:
    features = decompose(raw_text)
    embeddings = embedder.embed(features)
    return PatientQuery(raw_text=raw_text, features=features, feature_embeddings=embeddings)


@dataclass(slots=True)
class MatchConfig:
    m: int = 3
    t_matching: float = 0.6
    k: int = 5

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0.0 < self.t_matching < 1.0:
            raise ValueError(f"t_matching must be in (0, 1), got {self.t_matching}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True, slots=True)
class FeatureMatch:
    feature_index: int
    node_id: str
    similarity: float


@dataclass(frozen=True, slots=True)
class MatchResult:
    matched: frozenset[str]  # T: union of matched L4d node ids
    matches: tuple[FeatureMatch, ...]


def l4d_label_vectors(kg: DiagnosticKG, embedder: EmbeddingBackend) -> dict[str, np.ndarray]:
    """Embed every L4d node label once; keys in ascending node-id order."""
    nodes = sorted(kg.nodes_at(Level.L4D), key=lambda n: n.id)
    if not nodes:
        return {}
    vectors = embedder.embed([n.label for n in nodes])
    return {n.id: v for n, v in zip(nodes, vectors)}


def match_features(
    query: PatientQuery,
    kg: DiagnosticKG,
    node_vectors: Mapping[str, np.ndarray],
    cfg: MatchConfig,
) -> MatchResult:
    """Top-m L4d nodes per feature with cosine strictly above t_matching.

    node_vectors is the l4d_label_vectors output for kg. T may be empty;
    callers treat that as an unmatchable query, not an error.
    """
    if not node_vectors:
        raise GraphError("graph has no L4d nodes to match against")
    matches: list[FeatureMatch] = []
    items = list(node_vectors.items())
    for index, emb in enumerate(query.feature_embeddings):
        scored = [(float(np.dot(emb, vec)), nid) for nid, vec in items]
        eligible = [(s, nid) for s, nid in scored if s > cfg.t_matching]
        eligible.sort(key=lambda pair: (-pair[0], pair[1]))
        for similarity, nid in eligible[: cfg.m]:
            matches.append(FeatureMatch(index, nid, similarity))
    return MatchResult(
        matched=frozenset(m.node_id for m in matches),
        matches=tuple(matches),
    )


class VoteError(ValueError):
    """Raised when the vote cannot be computed (empty T, unreachable nodes)."""


@dataclass(frozen=True, slots=True)
class VoteResult:
    winner: str
    tally: dict[str, Fraction]  # exact fractional vote mass per L2 node


def _hop_distances(kg: DiagnosticKG, start: str) -> dict[str, int]:
    """Unweighted BFS over edges taken as undirected."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        current = queue.popleft()
        for neighbor in kg.neighbors(current):
            if neighbor not in dist:
                dist[neighbor] = dist[current] + 1
                queue.append(neighbor)
    return dist


def vote_subcategory(T: Sequence[str] | frozenset[str], kg: DiagnosticKG) -> VoteResult:
    """Vote the subcategory closest (in undirected hops) to the matched nodes.

    Each matched node votes for its nearest L2 node; equidistant ties split
    the vote as 1/|tied| so total vote mass stays exactly |T|. The winner is
    the L2 node with the highest tally; remaining ties go to the node with
    the smallest summed distance from all of T, then the smallest id.
    """
    voters = sorted(set(T))
    if not voters:
        raise VoteError("cannot vote with an empty matched set")
    for nid in voters:
        kg.node(nid)  # raises GraphError on unknown ids
    l2_ids = sorted(n.id for n in kg.nodes_at(Level.L2))
    if not l2_ids:
        raise VoteError("graph has no subcategory (L2) nodes")
    tally: dict[str, Fraction] = {nid: Fraction(0) for nid in l2_ids}
    summed: dict[str, float] = {nid: 0.0 for nid in l2_ids}
    for voter in voters:
        dist = _hop_distances(kg, voter)
        reachable = [(dist[nid], nid) for nid in l2_ids if nid in dist]
        if not reachable:
            raise VoteError(f"matched node {voter} cannot reach any subcategory node")
        best = min(d for d, _ in reachable)
        tied = [nid for d, nid in reachable if d == best]
        share = Fraction(1, len(tied))
        for nid in tied:
            tally[nid] += share
        for nid in l2_ids:
            summed[nid] += dist.get(nid, float("inf"))
    top = max(tally.values())
    leaders = [nid for nid in l2_ids if tally[nid] == top]
    leaders.sort(key=lambda nid: (summed[nid], nid))
    return VoteResult(winner=leaders[0], tally=tally)


@dataclass(frozen=True, slots=True)
class DifferenceSet:
    subcategory: str
    triples: frozenset[tuple[str, str]]  # (L3 disease id, L4a feature id)


def extract_differences(subcategory_id: str, kg: DiagnosticKG) -> DifferenceSet:
    """All (disease, augmented-feature) pairs under a subcategory.

    Only L4a nodes participate; decomposed features carry no differential
    signal by construction.
    """
    sub = subgraph_under(kg, subcategory_id)  # wrong-level ids raise here
    triples = set()
    for disease in sub.diseases:
        for edge in kg.out_edges(disease, Relation.HAS_MANIFESTATION):
            if kg.node(edge.dst).level is Level.L4A:
                triples.add((disease, edge.dst))
    return DifferenceSet(subcategory=subcategory_id, triples=frozenset(triples))
