"""Discriminability scoring, follow-up questions, and query masking.

A feature node that few diseases share pins the diagnosis down harder than
one every disease in the subcategory exhibits, so its score is inversely
proportional to its degree. Follow-up questions surface the highest-scoring
unconfirmed features. The masking helpers simulate a patient who failed to
mention their most telling manifestations: delete top-scored matched nodes,
drop the query sentences those nodes explain, and let the questioning loop
win the information back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import AbstractSet, Sequence

import numpy as np

from .backends import BackendError, ChatBackend, EmbeddingBackend
from .kg import DiagnosticKG, GraphError, Level, Relation, subgraph_under
from .matching import PatientQuery
from .templates import builtin_template

log = logging.getLogger(__name__)

QUESTION_SYSTEM = (
    "You turn clinical findings into short patient-facing questions."
    " Respond with the question only."
)


@dataclass(frozen=True, slots=True)
class DiscriminabilityScore:
    node_id: str
    degree: int
    score: float


def discriminability(kg: DiagnosticKG, node_id: str) -> DiscriminabilityScore:
    """score = (n - 1) / degree, with n the graph's total L4d node count.

    Degree counts incident manifestation edges. The n - 1 numerator is a
    constant per graph, so rankings depend only on degree.
    """
    node = kg.node(node_id)
    if node.level is not Level.L4D:
        raise GraphError(f"not a decomposed feature node: {node_id} is {node.level.value}")
    degree = len(kg.in_edges(node_id, Relation.HAS_MANIFESTATION)) + len(
        kg.out_edges(node_id, Relation.HAS_MANIFESTATION)
    )
    if degree == 0:
        raise GraphError(f"feature node {node_id} has no manifestation edges")
    n = len(kg.nodes_at(Level.L4D))
    return DiscriminabilityScore(node_id=node_id, degree=degree, score=(n - 1) / degree)


def select_question_features(kg: DiagnosticKG, subcategory_id: str, count: int) -> list[str]:
    """Top-`count` L4d nodes under a subcategory by score desc, ties by id."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    sub = subgraph_under(kg, subcategory_id)  # raises on wrong level
    candidates = [
        fid for fid in sub.features if kg.node(fid).level is Level.L4D
    ]
    candidates.sort(key=lambda fid: (-discriminability(kg, fid).score, fid))
    return candidates[:count]


@dataclass(frozen=True, slots=True)
class Question:
    text: str
    node_id: str


def template_question(label: str) -> str:
    """Deterministic fallback phrasing for a feature label.

    Verb-phrase labels are de-inflected into a "Does the ...?" question
    ("pain worsens while walking" -> "Does the pain worsen while walking?");
    anything else reads as a noun phrase and becomes "Do you have ...?".
    """
    words = label.split()
    if len(words) >= 2 and words[1].endswith("s") and not words[1].endswith("ss"):
        words = [words[0], words[1][:-1], *words[2:]]
        return "Does the " + " ".join(words) + "?"
    return "Do you have " + label + "?"


def generate_questions(
    features: Sequence[str],
    kg: DiagnosticKG,
    chat: ChatBackend | None = None,
    template: str | None = None,
) -> list[Question]:
    """One question per feature node, each carrying its source node id.

    With a chat backend the p_q template drives a rephrasing call; backend
    failures and empty generations fall back to the deterministic template
    phrasing. Without a backend the template phrasing is used directly.
    """
    if not features:
        raise ValueError("generate_questions requires a non-empty feature list")
    if template is None:
        template = builtin_template("question.txt")
    if "{feature_label}" not in template:
        raise ValueError("question template is missing the {feature_label} placeholder")
    questions: list[Question] = []
    for fid in features:
        label = kg.node(fid).label
        text = ""
        if chat is not None:
            try:
                text = chat.chat(
                    QUESTION_SYSTEM, template.replace("{feature_label}", label)
                ).strip()
            except BackendError as exc:
                log.warning("question rephrasing failed for %s: %s", fid, exc)
        if not text:
            text = template_question(label)
        questions.append(Question(text=text, node_id=fid))
    return questions


@dataclass(frozen=True, slots=True)
class MaskingConfig:
    r: float
    t: float = 0.6

    def __post_init__(self) -> None:
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"masking ratio r must be in [0, 1], got {self.r}")
        if not 0.0 < self.t < 1.0:
            raise ValueError(f"sentence threshold t must be in (0, 1), got {self.t}")


def mask_features(
    kg: DiagnosticKG,
    subcategory_id: str,
    matched: AbstractSet[str],
    cfg: MaskingConfig,
) -> frozenset[str]:
    """Delete the ceil(r * |matched|) highest-scoring matched nodes.

    Ranking is score descending with ties by id, so deleted sets are nested
    across increasing r. The ceiling means any r > 0 deletes at least one
    node from a non-empty matched set.
    """
    sub = subgraph_under(kg, subcategory_id)
    strays = sorted(set(matched) - set(sub.features))
    if strays:
        raise ValueError(
            f"matched nodes not under {subcategory_id}: {', '.join(strays)}"
        )
    ranked = sorted(matched, key=lambda fid: (-discriminability(kg, fid).score, fid))
    n_delete = math.ceil(cfg.r * len(ranked))
    return frozenset(ranked[:n_delete])


def prune_attribution(
    query: PatientQuery,
    deleted: AbstractSet[str],
    kg: DiagnosticKG,
    embedder: EmbeddingBackend,
    t: float,
) -> list[frozenset[str]]:
    """Per feature, the deleted nodes whose label similarity exceeds t.

    An empty set at position i means feature i survives pruning. This is
    the bookkeeping the restore-on-question rule needs: a question sourced
    at a deleted node restores exactly the features attributed to it.
    """
    deleted_ids = sorted(deleted)
    if not deleted_ids:
        return [frozenset() for _ in query.features]
    labels = [kg.node(fid).label for fid in deleted_ids]
    label_matrix = np.vstack(embedder.embed(labels))
    causes: list[frozenset[str]] = []
    for emb in query.feature_embeddings:
        scores = label_matrix @ emb
        causes.append(
            frozenset(fid for fid, s in zip(deleted_ids, scores) if float(s) > t)
        )
    return causes


def prune_query(
    query: PatientQuery,
    deleted: AbstractSet[str],
    kg: DiagnosticKG,
    embedder: EmbeddingBackend,
    t: float,
) -> PatientQuery:
    """Remove every feature explained by a deleted node (cosine > t).

    With an empty deleted set the query is returned unchanged. Otherwise
    the surviving features keep their order and raw_text is rebuilt from
    them, so downstream prompts cannot leak the pruned sentences. The
    result may have zero features; the engine treats that as a
    low-information query rather than an error.
    """
    if not deleted:
        return query
    causes = prune_attribution(query, deleted, kg, embedder, t)
    kept = [i for i, cause in enumerate(causes) if not cause]
    return PatientQuery(
        raw_text="; ".join(query.features[i] for i in kept),
        features=[query.features[i] for i in kept],
        feature_embeddings=[query.feature_embeddings[i] for i in kept],
        confirmed=list(query.confirmed),
    )
