"""Talk to the HTTP service the way an external client would."""

import json
import threading
import time

import httpx
import uvicorn

from graphdx.backends import MockChatBackend, MockEmbeddingBackend
from graphdx.engine import Pipeline
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.retrieval import ingest
from graphdx.service import create_app

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

server = uvicorn.Server(
    uvicorn.Config(create_app(pipeline), host="127.0.0.1", port=8765, log_level="warning")
)
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)

base = "http://127.0.0.1:8765"
with httpx.Client(base_url=base, timeout=10.0) as client:
    print("health:", client.get("/health").json())

    created = client.post(
        "/sessions",
        json={"manifestation_text": "Pain located in lumbar region; pain worsens while walking."},
    ).json()
    sid = created["session_id"]
    report = created["report"]
    print()
    print(f"session {sid[:8]}… diagnosed {report['diagnosis_l3']}")
    for q in report["follow_up_questions"]:
        print(f"  question {q['question_id']}: {q['text']}")

    answer = client.post(
        f"/sessions/{sid}/answers",
        json={
            "question_id": report["follow_up_questions"][0]["question_id"],
            "affirmation": True,
        },
    ).json()
    print()
    print(f"confirmed features now: {answer['confirmed']}")

    # retried deliveries of the same answer are safe
    replay = client.post(
        f"/sessions/{sid}/answers",
        json={
            "question_id": report["follow_up_questions"][0]["question_id"],
            "affirmation": True,
        },
    ).json()
    print(f"replay returned identical turn count: {len(replay['report']['turns']) == len(answer['report']['turns'])}")

    diffs = client.get("/kg/differences", params={"subcategory": "L2:lumbar_pain"}).json()
    print()
    print(f"distinguishing manifestations under {diffs['label']}:")
    for group in diffs["groups"]:
        for feature in group["features"]:
            print(f"  {group['disease_label']:<22} {feature['label']}")

server.should_exit = True
thread.join(timeout=5)
print()
print("server stopped")
