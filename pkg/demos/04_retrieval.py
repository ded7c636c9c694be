"""Embed a record corpus into the exact-scan index and query it."""

import numpy as np

from graphdx.backends import MockEmbeddingBackend, unit
from graphdx.fixtures import toy_corpus
from graphdx.matching import prepare_query
from graphdx.retrieval import ingest, load_index, retrieve, save_index

embedder = MockEmbeddingBackend(dimension=32)
corpus = toy_corpus()
index = ingest(corpus, embedder)
print(f"indexed {len(index)} documents at dimension {index.dimension}")

# the query vector is the renormalized mean of the clause embeddings
query = prepare_query("Pain located in lumbar region; morning stiffness.", embedder)
vector = unit(np.mean(np.vstack(query.feature_embeddings), axis=0))

context = retrieve(index, vector, k=3)
print()
print("top hits:")
for hit in context.hits:
    first_line = hit.document_text.splitlines()[0]
    print(f"  {hit.score:+.4f}  {hit.record_id}  {first_line}")

# excluding a record id keeps a patient's own note out of their context
context = retrieve(index, vector, k=3, exclude_record_ids=frozenset({"r3"}))
print()
print("same query with r3 excluded:")
for hit in context.hits:
    print(f"  {hit.score:+.4f}  {hit.record_id}")

# indexes round-trip through a single JSON document
save_index(index, "/tmp/graphdx_demo_index.json")
reloaded = load_index("/tmp/graphdx_demo_index.json")
print()
print(f"saved and reloaded: {len(reloaded)} documents")
