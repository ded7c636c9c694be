"""Walk the bundled toy diagnostic graph: structure, validation, round trip."""

from graphdx.fixtures import toy_kg
from graphdx.kg import Level, Relation, ancestors, dumps, loads, graph_equal, validate

kg = toy_kg()

print("nodes by level:")
for level in Level:
    for node in kg.nodes_at(level):
        print(f"  {node.id:<42} {node.label}")

print()
print("edges from the stenosis node:")
for edge in kg.out_edges("L3:lumbar_canal_stenosis"):
    print(f"  {edge.src} -[{edge.relation.value}]-> {edge.dst}")

sub, cat = ancestors(kg, "L3:lumbar_canal_stenosis")
print()
print(f"stenosis sits under {sub} under {cat}")

# every graph consumer calls validate() before trusting a document
problems = validate(kg)
print(f"validation problems: {problems or 'none'}")

# the canonical JSON form is byte-stable, so round trips are exact
text = dumps(kg)
print(f"serialized size: {len(text)} bytes")
print(f"round trip preserves the graph: {graph_equal(loads(text), kg)}")

# manifestation edges distinguish corpus-derived from model-suggested features
decomposed = [e for e in kg.edges if e.relation is Relation.HAS_MANIFESTATION and e.dst.startswith("L4d:")]
augmented = [e for e in kg.edges if e.relation is Relation.HAS_MANIFESTATION and e.dst.startswith("L4a:")]
print(f"{len(decomposed)} corpus-derived manifestation edges, {len(augmented)} model-suggested")
