"""Small built-in fixtures: a hand-checkable toy graph and matching corpus.

The toy graph covers one category, two subcategories, four diseases, three
augmented features and five decomposed features. Shipped in the package so
demos, tests and the docs all exercise the same object.
"""

from __future__ import annotations

from .build import EhrRecord
from .kg import (
    DiagnosticKG,
    FeatureKind,
    KgEdge,
    KgNode,
    Level,
    Relation,
    node_id,
)
from .text import classify_feature_kind

_CATEGORY = "musculoskeletal pain"
_SUBCATEGORIES = {
    "lumbar pain": _CATEGORY,
    "neck pain": _CATEGORY,
}
_DISEASES = {
    "lumbar canal stenosis": "lumbar pain",
    "sciatica": "lumbar pain",
    "lumbar spondylosis": "lumbar pain",
    "cervical spondylosis": "neck pain",
}
# feature label -> diseases manifesting it (decomposed-from-records tier)
_DECOMPOSED = {
    "pain located in lumbar region": (
        "lumbar canal stenosis",
        "sciatica",
        "lumbar spondylosis",
    ),
    "pain worsens while walking": ("lumbar canal stenosis",),
    "shooting pain down leg": ("sciatica",),
    "neck stiffness": ("cervical spondylosis",),
    "morning stiffness": ("lumbar spondylosis",),
}
# feature label -> diseases manifesting it (model-augmented tier)
_AUGMENTED = {
    "pain alleviated when sitting": ("lumbar canal stenosis",),
    "pain worsens when sitting": ("sciatica",),
    "stiffness or pain in the lower back": ("lumbar spondylosis",),
}


def toy_kg(include_augmented: bool = True) -> DiagnosticKG:
    nodes: list[KgNode] = [KgNode(node_id(Level.L1, _CATEGORY), Level.L1, _CATEGORY)]
    edges: list[KgEdge] = []
    for sub, cat in _SUBCATEGORIES.items():
        nodes.append(KgNode(node_id(Level.L2, sub), Level.L2, sub))
        edges.append(
            KgEdge(node_id(Level.L2, sub), node_id(Level.L1, cat), Relation.IS_A)
        )
    for disease, sub in _DISEASES.items():
        nodes.append(KgNode(node_id(Level.L3, disease), Level.L3, disease))
        edges.append(
            KgEdge(node_id(Level.L3, disease), node_id(Level.L2, sub), Relation.IS_A)
        )
    tiers: list[tuple[Level, dict[str, tuple[str, ...]]]] = [(Level.L4D, _DECOMPOSED)]
    if include_augmented:
        tiers.append((Level.L4A, _AUGMENTED))
    for level, table in tiers:
        for label, diseases in table.items():
            kind = FeatureKind(classify_feature_kind(label))
            nodes.append(KgNode(node_id(level, label), level, label, kind))
            for disease in diseases:
                edges.append(
                    KgEdge(
                        node_id(Level.L3, disease),
                        node_id(level, label),
                        Relation.HAS_MANIFESTATION,
                    )
                )
    return DiagnosticKG(nodes, edges)


def toy_corpus() -> list[EhrRecord]:
    """Four records whose decomposition reproduces the toy graph's L4d tier."""
    return [
        EhrRecord(
            record_id="r1",
            diagnosis_raw="lumbar canal stenosis",
            manifestation_text=(
                "Pain located in lumbar region; pain worsens while walking."
            ),
            treatment_text="physical therapy and decompression assessment",
        ),
        EhrRecord(
            record_id="r2",
            diagnosis_raw="sciatica",
            manifestation_text=(
                "Pain located in lumbar region; shooting pain down leg."
            ),
            treatment_text="nerve gliding exercises and analgesics",
        ),
        EhrRecord(
            record_id="r3",
            diagnosis_raw="lumbar spondylosis",
            manifestation_text=(
                "Pain located in lumbar region; morning stiffness."
            ),
            treatment_text="mobility program and heat therapy",
        ),
        EhrRecord(
            record_id="r4",
            diagnosis_raw="cervical spondylosis",
            manifestation_text="Neck stiffness.",
            treatment_text="posture correction and traction",
        ),
    ]
