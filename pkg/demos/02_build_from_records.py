"""Build the four-tier graph from raw records with fully scripted mock backends.

Every chat reply the build needs is registered up front, so the run is
deterministic and works offline.
"""

import numpy as np

from graphdx.backends import MockChatBackend, MockEmbeddingBackend
from graphdx.build import (
    AUGMENT_SYSTEM,
    TOPIC_SYSTEM,
    aggregate_hierarchy,
    augment_manifestations,
    build_disease_kg,
    cluster_diseases,
    topic_user_prompt,
)
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.kg import Level, Relation, graph_equal, validate
from graphdx.templates import builtin_template

corpus = toy_corpus()
print(f"corpus: {len(corpus)} records")
for r in corpus:
    print(f"  {r.record_id}  {r.diagnosis_raw:<22} {r.manifestation_text}")

# embeddings pin each disease name near its topic but far from its siblings,
# so clustering keeps them separate and assignment lands on the right topic
dim = 8


def blend(main_axis, aux_axis, cosine):
    v = np.zeros(dim)
    v[main_axis] = cosine
    v[aux_axis] = np.sqrt(1 - cosine**2)
    return v


table = {
    "lumbar pain": blend(0, 7, 1.0),
    "neck pain": blend(1, 7, 1.0),
    "musculoskeletal pain": blend(2, 7, 1.0),
    "lumbar canal stenosis": blend(0, 3, 0.6),
    "sciatica": blend(0, 4, 0.6),
    "lumbar spondylosis": blend(0, 5, 0.6),
    "cervical spondylosis": blend(1, 6, 0.6),
}
embedder = MockEmbeddingBackend(dimension=dim, table=table)

# step 1: merge spelling variants of the same disease (none in this corpus)
canonical = cluster_diseases((r.diagnosis_raw for r in corpus), embedder, 0.35)
print()
print(f"canonical diseases: {sorted(canonical.clusters)}")

# step 2: elicit subcategory and category topics, then assign by similarity
chat = MockChatBackend()
diseases = sorted(canonical.clusters)
chat.script_exchange(
    TOPIC_SYSTEM, topic_user_prompt(diseases, 12, "diseases"), '["lumbar pain", "neck pain"]'
)
chat.script_exchange(
    TOPIC_SYSTEM,
    topic_user_prompt(["lumbar pain", "neck pain"], 6, "disease subcategories"),
    '["musculoskeletal pain"]',
)
hierarchy = aggregate_hierarchy(diseases, chat, embedder)
for disease, sub in sorted(hierarchy.subcategory_of.items()):
    print(f"  {disease:<22} -> {sub} -> {hierarchy.category_of[sub]}")

# step 3: decompose each record's manifestations into feature nodes
kg = build_disease_kg(corpus, canonical, hierarchy)
print()
print(f"built graph: {len(kg.nodes)} nodes, validation {validate(kg) or 'clean'}")

# step 4: ask the model for distinguishing manifestations per disease
augment_chat = MockChatBackend(fallback="[]")
replies = {
    "lumbar canal stenosis": '["pain alleviated when sitting"]',
    "sciatica": '["pain worsens when sitting"]',
    "lumbar spondylosis": '["stiffness or pain in the lower back"]',
    "cervical spondylosis": "[]",
}
template = builtin_template("augment.txt")
for disease in kg.nodes_at(Level.L3):
    parent = kg.out_edges(disease.id, Relation.IS_A)[0].dst
    siblings = sorted(
        kg.node(e.src).label
        for e in kg.in_edges(parent, Relation.IS_A)
        if e.src != disease.id
    )
    user_text = template.replace("{disease}", disease.label).replace(
        "{sibling_diseases}", ", ".join(siblings) if siblings else "none listed"
    )
    augment_chat.script_exchange(AUGMENT_SYSTEM, user_text, replies[disease.label])

augmented = augment_manifestations(kg, augment_chat)
added = len(augmented.nodes) - len(kg.nodes)
print(f"augmentation added {added} distinguishing-feature nodes")
print(f"result matches the bundled fixture: {graph_equal(augmented, toy_kg())}")
