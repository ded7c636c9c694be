"""Launch the consultation service with scripted mock backends.

The generator is rule-driven: the sciatica report fires only once the
patient has confirmed the shooting-pain feature, so the UI tests can
observe a diagnosis change at L3 over a real socket.
"""
import argparse

import uvicorn

from graphdx.backends import MockEmbeddingBackend
from graphdx.engine import Pipeline
from graphdx.evaluate import OracleChatBackend
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.retrieval import ingest
from graphdx.service import create_app

STENOSIS = {
    "diagnosis_l1": "musculoskeletal pain",
    "diagnosis_l2": "lumbar pain",
    "diagnosis_l3": "lumbar canal stenosis",
    "reasoning": "pain on walking with lumbar location fits canal narrowing",
    "treatments": ["physical therapy"],
    "medications": ["nsaids"],
}

SCIATICA = {
    "diagnosis_l1": "musculoskeletal pain",
    "diagnosis_l2": "lumbar pain",
    "diagnosis_l3": "sciatica",
    "reasoning": "confirmed radiating leg pain indicates nerve root involvement",
    "treatments": ["physical therapy", "nerve gliding exercises"],
    "medications": ["nsaids"],
}

DEFAULT = {
    "diagnosis_l1": "general condition",
    "diagnosis_l2": "unspecified",
    "diagnosis_l3": "undetermined condition",
    "reasoning": "the reported manifestations match no scripted rule",
    "treatments": [],
    "medications": [],
}


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--static", default=None)
    args = parser.parse_args()

    embedder = MockEmbeddingBackend(32)
    # Rule markers anchor on prompt-only phrasings so retrieved document
    # echoes can never fire them; the sciatica rule comes first because a
    # confirmed feature leaves both markers present.
    chat = OracleChatBackend(
        rules=[
            ("Additionally confirmed on questioning: shooting pain down leg", SCIATICA),
            ("Patient manifestations:\nPain located in lumbar region", STENOSIS),
        ],
        default=DEFAULT,
    )
    pipeline = Pipeline(toy_kg(), ingest(toy_corpus(), embedder), chat, embedder)
    app = create_app(pipeline, static_dir=args.static)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
