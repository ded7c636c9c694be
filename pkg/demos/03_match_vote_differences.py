"""Trace one complaint through decomposition, matching, voting, differences."""

from graphdx.backends import MockEmbeddingBackend
from graphdx.fixtures import toy_kg
from graphdx.matching import (
    MatchConfig,
    decompose,
    extract_differences,
    l4d_label_vectors,
    match_features,
    prepare_query,
    vote_subcategory,
)

kg = toy_kg()
embedder = MockEmbeddingBackend(dimension=32)
text = "Pain located in lumbar region; pain worsens while walking."

print(f"complaint: {text}")
print(f"clauses: {decompose(text)}")

query = prepare_query(text, embedder)
vectors = l4d_label_vectors(kg, embedder)
result = match_features(query, kg, vectors, MatchConfig())

print()
print("matches above the similarity threshold:")
for m in result.matches:
    print(f"  clause {m.feature_index} -> {m.node_id}  (similarity {m.similarity:.3f})")

# each matched manifestation votes for its nearest subcategory by hop count
vote = vote_subcategory(result.matched, kg)
print()
print("subcategory tally:")
for nid, votes in sorted(vote.tally.items()):
    print(f"  {nid}: {float(votes):g}")
print(f"winner: {vote.winner} ({kg.node(vote.winner).label})")

# the distinguishing manifestations under the winner separate its diseases
diffs = extract_differences(vote.winner, kg)
print()
print("distinguishing manifestations under the winner:")
for disease_id, feature_id in sorted(diffs.triples):
    print(f"  {kg.node(disease_id).label:<22} {kg.node(feature_id).label}")
