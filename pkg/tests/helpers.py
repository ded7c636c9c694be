"""Shared test utilities: controlled vectors and random valid graphs."""

from __future__ import annotations

import math

import numpy as np

from graphdx.backends import MockEmbeddingBackend
from graphdx.kg import DiagnosticKG, FeatureKind, KgEdge, KgNode, Level, Relation

NodeTuple = tuple[str, str, str, str | None]  # (id, level, label, feature_kind)
EdgeTuple = tuple[str, str, str]  # (src, dst, relation)


def basis_vec(dim: int, axis: int) -> np.ndarray:
    v = np.zeros(dim)
    v[axis] = 1.0
    return v


def pair_vec(dim: int, axis: int, aux_axis: int, cosine: float) -> np.ndarray:
    """Unit vector at exactly `cosine` to basis_vec(dim, axis)."""
    v = np.zeros(dim)
    v[axis] = cosine
    v[aux_axis] = math.sqrt(1.0 - cosine * cosine)
    return v


def table_embedder(table: dict[str, np.ndarray], dim: int) -> MockEmbeddingBackend:
    return MockEmbeddingBackend(
        dimension=dim, table={k: list(v) for k, v in table.items()}
    )


_KINDS = ("symptom", "location", "activity_limitation", "other")


def random_kg_tuples(
    rng: np.random.Generator, max_nodes: int = 60
) -> tuple[list[NodeTuple], list[EdgeTuple]]:
    """Random valid four-tier graph as raw tuples (oracle-friendly form)."""
    n_cat = int(rng.integers(1, 4))
    n_sub = int(rng.integers(1, 6))
    n_dis = int(rng.integers(1, 11))
    backbone = n_cat + n_sub + n_dis
    budget = max_nodes - backbone
    n_l4d = int(rng.integers(1, max(2, budget - 2)))
    n_l4a = int(rng.integers(0, max(1, budget - n_l4d)))

    nodes: list[NodeTuple] = []
    edges: list[EdgeTuple] = []
    cats = [f"L1:cat_{i}" for i in range(n_cat)]
    subs = [f"L2:sub_{i}" for i in range(n_sub)]
    dis = [f"L3:disease_{i}" for i in range(n_dis)]
    for i, nid in enumerate(cats):
        nodes.append((nid, "L1", f"cat {i}", None))
    for i, nid in enumerate(subs):
        nodes.append((nid, "L2", f"sub {i}", None))
        edges.append((nid, cats[int(rng.integers(n_cat))], "is_a"))
    for i, nid in enumerate(dis):
        nodes.append((nid, "L3", f"disease {i}", None))
        edges.append((nid, subs[int(rng.integers(n_sub))], "is_a"))
    for i in range(n_l4d):
        nid = f"L4d:feat_{i}"
        nodes.append((nid, "L4d", f"feat {i}", _KINDS[int(rng.integers(4))]))
        n_owners = 1 + int(rng.binomial(min(3, n_dis - 1), 0.3)) if n_dis > 1 else 1
        owners = rng.choice(n_dis, size=min(n_owners, n_dis), replace=False)
        for owner in owners:
            edges.append((dis[int(owner)], nid, "has_manifestation_of"))
    for i in range(n_l4a):
        nid = f"L4a:aug_{i}"
        nodes.append((nid, "L4a", f"aug {i}", _KINDS[int(rng.integers(4))]))
        owners = rng.choice(
            n_dis, size=min(1 + int(rng.binomial(1, 0.2)), n_dis), replace=False
        )
        for owner in owners:
            edges.append((dis[int(owner)], nid, "has_manifestation_of"))
    return nodes, edges


def kg_from_tuples(
    nodes: list[NodeTuple], edges: list[EdgeTuple]
) -> DiagnosticKG:
    return DiagnosticKG(
        nodes=[
            KgNode(
                id=nid,
                level=Level(level),
                label=label,
                feature_kind=FeatureKind(kind) if kind else None,
            )
            for nid, level, label, kind in nodes
        ],
        edges=[KgEdge(src, dst, Relation(rel)) for src, dst, rel in edges],
    )


def random_kg(
    rng: np.random.Generator, max_nodes: int = 60
) -> tuple[DiagnosticKG, list[NodeTuple], list[EdgeTuple]]:
    nodes, edges = random_kg_tuples(rng, max_nodes)
    return kg_from_tuples(nodes, edges), nodes, edges


def mutate_kg(
    kg: DiagnosticKG, rng: np.random.Generator
) -> tuple[DiagnosticKG, str]:
    """Apply one random invariant-breaking mutation; returns (graph, kind)."""
    nodes = list(kg.nodes)
    edges = list(kg.edges)
    choices = ["drop_parent", "double_parent", "dangling_edge", "drop_kind", "dup_id", "bad_shape"]
    while True:
        kind = choices[int(rng.integers(len(choices)))]
        if kind == "drop_parent":
            candidates = [
                e for e in edges if e.relation is Relation.IS_A
            ]
            if not candidates:
                continue
            edges.remove(candidates[int(rng.integers(len(candidates)))])
        elif kind == "double_parent":
            l3 = [n for n in nodes if n.level is Level.L3]
            l2 = [n for n in nodes if n.level is Level.L2]
            if not l3 or not l2:
                continue
            src = l3[int(rng.integers(len(l3)))]
            dst = l2[int(rng.integers(len(l2)))]
            extra = KgEdge(src.id, dst.id, Relation.IS_A)
            if extra in edges:
                # duplicate edges collapse; pick a different violation
                continue
            edges.append(extra)
        elif kind == "dangling_edge":
            edges.append(KgEdge("L3:no_such_node", "L2:nowhere", Relation.IS_A))
        elif kind == "drop_kind":
            feats = [
                i
                for i, n in enumerate(nodes)
                if n.level in (Level.L4A, Level.L4D)
            ]
            if not feats:
                continue
            i = feats[int(rng.integers(len(feats)))]
            n = nodes[i]
            nodes[i] = KgNode(n.id, n.level, n.label, None)
        elif kind == "dup_id":
            n = nodes[int(rng.integers(len(nodes)))]
            nodes.append(KgNode(n.id, n.level, n.label + " copy", n.feature_kind))
        elif kind == "bad_shape":
            l4 = [n for n in nodes if n.level is Level.L4D]
            l1 = [n for n in nodes if n.level is Level.L1]
            if not l4 or not l1:
                continue
            edges.append(
                KgEdge(
                    l1[int(rng.integers(len(l1)))].id,
                    l4[int(rng.integers(len(l4)))].id,
                    Relation.HAS_MANIFESTATION,
                )
            )
        return DiagnosticKG(nodes, edges), kind
