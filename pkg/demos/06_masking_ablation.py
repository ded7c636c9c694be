"""Stress the question loop by masking query clauses and ablating each leg.

The mock generator here answers correctly only when a case's own wording
appears in the prompt's query block, so accuracy genuinely tracks what the
pipeline managed to keep or recover.
"""

from graphdx.backends import MockEmbeddingBackend
from graphdx.engine import Pipeline
from graphdx.evaluate import (
    EvalCase,
    OracleChatBackend,
    render_ablation_table,
    render_masking_table,
    render_plain_table,
    resolve_cases,
    run_ablation,
    run_masking_experiment,
    run_plain,
)
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.retrieval import ingest


def correct_report(l2, l3):
    return {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": l2,
        "diagnosis_l3": l3,
        "reasoning": "matched the distinctive presentation",
        "treatments": ["supportive care"],
        "medications": [],
    }


cases = [
    EvalCase(r.record_id, r.manifestation_text, r.diagnosis_raw)
    for r in toy_corpus()
]

golds = {
    "lumbar canal stenosis": "lumbar pain",
    "sciatica": "lumbar pain",
    "lumbar spondylosis": "lumbar pain",
    "cervical spondylosis": "neck pain",
}
rules = []
for case in cases:
    rebuilt = "; ".join(p.strip().lower().rstrip(".") for p in case.query_text.split(";"))
    for marker in (case.query_text, rebuilt + "\n"):
        rules.append(
            (
                f"Patient manifestations:\n{marker}",
                correct_report(golds[case.gold_l3], case.gold_l3),
            )
        )
chat = OracleChatBackend(rules, default={"diagnosis_l3": "undetermined", "reasoning": "?"})

embedder = MockEmbeddingBackend(dimension=32)
pipeline = Pipeline(toy_kg(), ingest(toy_corpus(), embedder), chat, embedder)
resolved = resolve_cases(cases, pipeline.kg)

print(render_plain_table(run_plain(pipeline, resolved)))

# masking removes the most informative matched clauses, then the follow-up
# questions win some of them back
masking = run_masking_experiment(pipeline, resolved)
print()
print(render_masking_table(masking))

# ablation drops the retrieval leg, the graph leg, or replaces them with
# random draws; seeded so reruns agree
ablation = run_ablation(pipeline, resolved, seed=42)
print()
print(render_ablation_table(ablation))
