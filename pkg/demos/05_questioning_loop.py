"""Run a consultation: initial report, follow-up question, revised report."""

import json

from graphdx.backends import MockChatBackend, MockEmbeddingBackend
from graphdx.engine import Pipeline
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.retrieval import ingest

# the mock generator always answers with the same structured report, which
# keeps the focus on how the question loop feeds confirmed features back in
report_text = "```json\n" + json.dumps(
    {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": "lumbar pain",
        "diagnosis_l3": "lumbar canal stenosis",
        "reasoning": "walking-dependent pain suggests canal narrowing",
        "treatments": ["physical therapy"],
        "medications": ["nsaids"],
    }
) + "\n```"

embedder = MockEmbeddingBackend(dimension=32)
pipeline = Pipeline(
    toy_kg(),
    ingest(toy_corpus(), embedder),
    MockChatBackend(fallback=report_text),
    embedder,
)

session = pipeline.start_session("demo", "Pain located in lumbar region; pain worsens while walking.")
report = session.latest_report
print(f"diagnosis: {report.diagnosis_l3}  (subcategory {report.subcategory_id})")
print("follow-up questions:")
for q in report.follow_up_questions:
    print(f"  [{q.node_id}] {q.text}")

# the patient confirms the first question; its label joins the query
first = report.follow_up_questions[0]
session = pipeline.consult_step(session, (first.node_id, True))
confirmed_label = pipeline.kg.node(first.node_id).label
print()
print(f"after confirming '{confirmed_label}':")
print(f"  features: {session.query.features}")
print(f"  confirmed: {session.query.confirmed}")

# the second question from the opening report can still be answered later;
# a denial is recorded without touching the query
second = report.follow_up_questions[1]
session = pipeline.consult_step(session, (second.node_id, False))
print()
print(f"denied '{pipeline.kg.node(second.node_id).label}'")
print(f"  features unchanged: {session.query.features}")

print()
print(f"turns taken: {len(session.turns)}")
print(f"answers on record: {session.answered}")
print(f"generation counter: {dict(pipeline.telemetry)}")
