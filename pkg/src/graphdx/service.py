"""HTTP layer over the engine: sessions, answers, graph inspection, health.

The endpoints add no behavior of their own; every response body is a plain
serialization of an engine or matcher result. Sessions live in memory and
are single-writer: a second concurrent step on the same session gets a 409
while distinct sessions proceed in parallel over the shared immutable graph
and index.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import uuid
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .backends import BackendError
from .engine import ConsultationSession, DiagnosisReport, EngineError, Pipeline
from .kg import GraphError, Level
from .matching import DecomposeError, extract_differences

log = logging.getLogger(__name__)


class SessionRequest(BaseModel):
    manifestation_text: str


class AnswerRequest(BaseModel):
    question_id: str
    affirmation: bool


def question_id(session_id: str, node_id: str) -> str:
    """Stable content hash so a retried answer addresses the same question."""
    digest = hashlib.sha256(f"{session_id}:{node_id}".encode("utf-8")).hexdigest()
    return digest[:16]


def _report_payload(session: ConsultationSession, report: DiagnosisReport) -> dict:
    payload = report.to_dict()
    for question in payload["follow_up_questions"]:
        question["question_id"] = question_id(session.session_id, question["node_id"])
    payload["turns"] = session.to_dict()["turns"]
    return payload


def _error(status: int, detail: str, retriable: bool = False) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"detail": detail, "retriable": retriable}
    )


def create_app(
    pipeline: Pipeline,
    snapshot_path: str | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    sessions: dict[str, ConsultationSession] = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        if snapshot_path:
            with registry_lock:
                doc = {sid: s.to_dict() for sid, s in sessions.items()}
            Path(snapshot_path).write_text(
                json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            log.info("wrote %d sessions to %s", len(doc), snapshot_path)

    app = FastAPI(title="graphdx", docs_url=None, redoc_url=None, lifespan=lifespan)

    @app.post("/sessions")
    def create_session(body: SessionRequest) -> JSONResponse:
        if not body.manifestation_text.strip():
            return _error(400, "manifestation_text must be non-empty")
        session_id = uuid.uuid4().hex
        try:
            session = pipeline.start_session(session_id, body.manifestation_text)
        except DecomposeError as exc:
            return _error(422, str(exc))
        except BackendError as exc:
            return _error(502, str(exc), retriable=exc.retriable)
        with registry_lock:
            sessions[session_id] = session
            locks[session_id] = threading.Lock()
        assert session.latest_report is not None
        return JSONResponse(
            {
                "session_id": session_id,
                "report": _report_payload(session, session.latest_report),
            }
        )

    @app.post("/sessions/{session_id}/answers")
    def answer_question(session_id: str, body: AnswerRequest) -> JSONResponse:
        with registry_lock:
            session = sessions.get(session_id)
            lock = locks.get(session_id)
        if session is None or lock is None:
            return _error(404, f"unknown session: {session_id}")
        node_id = next(
            (
                nid
                for nid in sorted(session.asked_node_ids)
                if question_id(session_id, nid) == body.question_id
            ),
            None,
        )
        if node_id is None:
            return _error(400, f"unknown question id: {body.question_id}")
        if not lock.acquire(blocking=False):
            return _error(409, "another step is in flight for this session")
        try:
            session = pipeline.consult_step(session, (node_id, body.affirmation))
        except EngineError as exc:
            return _error(400, str(exc))
        except BackendError as exc:
            return _error(502, str(exc), retriable=exc.retriable)
        finally:
            lock.release()
        assert session.latest_report is not None
        return JSONResponse(
            {
                "report": _report_payload(session, session.latest_report),
                "features": list(session.query.features),
                "confirmed": list(session.query.confirmed),
            }
        )

    @app.get("/kg/differences")
    def differences(subcategory: str) -> JSONResponse:
        try:
            node = pipeline.kg.node(subcategory)
            if node.level is not Level.L2:
                raise GraphError(f"not a subcategory node: {subcategory}")
            diffs = extract_differences(subcategory, pipeline.kg)
        except GraphError as exc:
            return _error(404, str(exc))
        grouped: dict[str, list[str]] = {}
        for disease_id, feature_id in diffs.triples:
            grouped.setdefault(disease_id, []).append(feature_id)
        groups = [
            {
                "disease_id": disease_id,
                "disease_label": pipeline.kg.node(disease_id).label,
                "features": [
                    {"id": fid, "label": pipeline.kg.node(fid).label}
                    for fid in sorted(features)
                ],
            }
            for disease_id, features in sorted(grouped.items())
        ]
        return JSONResponse(
            {"subcategory": subcategory, "label": node.label, "groups": groups}
        )

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "kg_nodes": len(pipeline.kg.nodes),
            "index_size": len(pipeline.index),
        }

    @app.exception_handler(Exception)
    def unhandled(request: Request, exc: Exception) -> JSONResponse:
        log.exception("unhandled service error: %s", exc)
        return _error(500, f"internal error: {exc}")

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
