"""Pipeline orchestration: prompt assembly, diagnosis, consultation loop.

One diagnose pass runs decompose -> embed -> match -> vote -> differences ->
retrieve -> prompt -> chat -> parse. The prompt always has the same three
blocks (instruction, answer template, information); legs that are disabled
or empty render explicit markers instead of content, so prompt diffs
isolate exactly what changed between pipeline configurations.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Mapping

import numpy as np

from .backends import ChatBackend, EmbeddingBackend, unit
from .config import AppConfig
from .kg import DiagnosticKG, GraphError, Level, ancestors
from .matching import (
    DifferenceSet,
    MatchConfig,
    MatchResult,
    PatientQuery,
    extract_differences,
    l4d_label_vectors,
    match_features,
    prepare_query,
    vote_subcategory,
)
from .questions import Question, generate_questions, select_question_features
from .retrieval import DocumentIndex, Hit, RetrievedContext, retrieve
from .templates import builtin_template

log = logging.getLogger(__name__)

NO_DOCUMENTS_MARKER = "no historical records provided"
NO_DIFFERENCES_MARKER = "no differential knowledge found"
NO_QUERY_MARKER = "(no manifestations reported)"

REPROMPT_SUFFIX = (
    "\n\nYour previous reply could not be parsed. Respond again with only the"
    " fenced JSON report object, nothing else."
)

_PLACEHOLDERS = ("{query}", "{documents}", "{differences}")


class EngineError(RuntimeError):
    """Raised for pipeline-level failures that are not backend errors."""


class TemplateError(ValueError):
    """Raised for template files missing sections or placeholders."""


class ReportParseError(ValueError):
    """Raised when no parseable report object exists in a generation."""


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    system_text: str
    user_text: str


def split_template(text: str, require_differences: bool = True) -> PromptTemplate:
    """Parse a template file with [system] and [user] section markers."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("[system]", "[user]"):
            current = stripped[1:-1]
            sections.setdefault(current, [])
            continue
        if current is not None:
            sections[current].append(line)
    if "system" not in sections or "user" not in sections:
        raise TemplateError("template needs [system] and [user] sections")
    user = "\n".join(sections["user"]).strip()
    required = _PLACEHOLDERS if require_differences else _PLACEHOLDERS[:2]
    missing = [p for p in required if p not in user]
    if missing:
        raise TemplateError(f"template user section missing placeholders: {missing}")
    return PromptTemplate(
        system_text="\n".join(sections["system"]).strip(), user_text=user
    )


def render_query(query: PatientQuery) -> str:
    text = query.raw_text.strip()
    if not text:
        return NO_QUERY_MARKER
    if query.confirmed:
        text += "\nAdditionally confirmed on questioning: " + "; ".join(query.confirmed)
    return text


def render_documents(context: RetrievedContext | None) -> str:
    if context is None or not context.hits:
        return NO_DOCUMENTS_MARKER
    blocks = []
    for i, hit in enumerate(context.hits, 1):
        blocks.append(f"[{i}] (similarity {hit.score:.4f})\n{hit.document_text}")
    return "\n\n".join(blocks)


def render_differences(diffs: DifferenceSet | None, kg: DiagnosticKG) -> str:
    if diffs is None or not diffs.triples:
        return NO_DIFFERENCES_MARKER
    lines = sorted(
        (kg.node(d).label, kg.node(f).label) for d, f in diffs.triples
    )
    return "\n".join(f"- {disease}: {feature}" for disease, feature in lines)


def assemble_prompt(
    query: PatientQuery,
    context: RetrievedContext | None,
    diffs: DifferenceSet | None,
    template: PromptTemplate,
    kg: DiagnosticKG,
) -> tuple[str, str]:
    """Fill the template's information block. Pure: same inputs, same text."""
    user = template.user_text
    user = user.replace("{query}", render_query(query))
    user = user.replace("{documents}", render_documents(context))
    if "{differences}" in user:
        user = user.replace("{differences}", render_differences(diffs, kg))
    return template.system_text, user


@dataclass(slots=True)
class DiagnosisReport:
    diagnosis_l1: str | None
    diagnosis_l2: str | None
    diagnosis_l3: str | None
    reasoning_text: str
    treatments: list[str]
    medications: list[str]
    follow_up_questions: list[Question] = field(default_factory=list)
    confidence_flag: str = "normal"  # "normal" or "low_info"
    off_graph: bool = False
    subcategory_id: str | None = None  # voted L2 node, when the KG leg ran

    def to_dict(self) -> dict:
        return {
            "diagnosis_l1": self.diagnosis_l1,
            "diagnosis_l2": self.diagnosis_l2,
            "diagnosis_l3": self.diagnosis_l3,
            "reasoning": self.reasoning_text,
            "treatments": list(self.treatments),
            "medications": list(self.medications),
            "follow_up_questions": [
                {"text": q.text, "node_id": q.node_id} for q in self.follow_up_questions
            ],
            "confidence_flag": self.confidence_flag,
            "off_graph": self.off_graph,
            "subcategory_id": self.subcategory_id,
        }


def report_json(report: DiagnosisReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _label_key(label: str) -> str:
    return " ".join(label.lower().split())


def _extract_json_object(text: str) -> dict | None:
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            doc, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(doc, dict):
            return doc
        start = text.find("{", start + 1)
    return None


def _string_list(value: object) -> list[str]:
    if not isinstance(value, list):
        return []
    return [x.strip() for x in value if isinstance(x, str) and x.strip()]


def parse_report(text: str, kg: DiagnosticKG) -> DiagnosisReport:
    """Pull the fenced (or bare) JSON report out of a generation.

    Diagnosis labels are resolved against KG labels case-insensitively;
    when the disease resolves, missing parent labels are filled from the
    graph and inconsistent ones flag the report off_graph. Labels that do
    not resolve at all are kept verbatim with off_graph set.
    """
    doc = _extract_json_object(text)
    if doc is None:
        raise ReportParseError("no JSON report object found in generation")

    def norm_label(key: str) -> str | None:
        value = doc.get(key)
        if isinstance(value, str) and value.strip():
            return " ".join(value.split())
        return None

    l1, l2, l3 = norm_label("diagnosis_l1"), norm_label("diagnosis_l2"), norm_label("diagnosis_l3")
    reasoning = doc.get("reasoning")
    if not isinstance(reasoning, str):
        reasoning = doc.get("reasoning_text")
    report = DiagnosisReport(
        diagnosis_l1=l1,
        diagnosis_l2=l2,
        diagnosis_l3=l3,
        reasoning_text=reasoning.strip() if isinstance(reasoning, str) else "",
        treatments=_string_list(doc.get("treatments")),
        medications=_string_list(doc.get("medications")),
    )
    disease_by_label = {
        _label_key(n.label): n for n in kg.nodes_at(Level.L3)
    }
    disease = disease_by_label.get(_label_key(l3)) if l3 else None
    if disease is None:
        report.off_graph = True
        return report
    report.diagnosis_l3 = disease.label
    try:
        sub_id, cat_id = ancestors(kg, disease.id)
    except GraphError:
        report.off_graph = True
        return report
    sub_label = kg.node(sub_id).label
    cat_label = kg.node(cat_id).label
    if l2 is not None and _label_key(l2) != _label_key(sub_label):
        report.off_graph = True
    else:
        report.diagnosis_l2 = sub_label
    if l1 is not None and _label_key(l1) != _label_key(cat_label):
        report.off_graph = True
    else:
        report.diagnosis_l1 = cat_label
    return report


@dataclass(slots=True)
class TurnRecord:
    questions: tuple[Question, ...]
    answer: tuple[str, bool] | None  # (node id, affirmation) consumed this turn


@dataclass(slots=True)
class ConsultationSession:
    session_id: str
    query: PatientQuery
    turns: list[TurnRecord] = field(default_factory=list)
    asked_node_ids: set[str] = field(default_factory=set)
    answered: dict[str, bool] = field(default_factory=dict)
    latest_report: DiagnosisReport | None = None

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "raw_text": self.query.raw_text,
            "features": list(self.query.features),
            "confirmed": list(self.query.confirmed),
            "asked_node_ids": sorted(self.asked_node_ids),
            "answered": dict(sorted(self.answered.items())),
            "turns": [
                {
                    "questions": [
                        {"text": q.text, "node_id": q.node_id} for q in t.questions
                    ],
                    "answer": (
                        {"node_id": t.answer[0], "affirmation": t.answer[1]}
                        if t.answer is not None
                        else None
                    ),
                }
                for t in self.turns
            ],
            "latest_report": (
                self.latest_report.to_dict() if self.latest_report else None
            ),
        }


class Pipeline:
    """Holds the loaded graph, index, backends and config; runs diagnoses."""

    def __init__(
        self,
        kg: DiagnosticKG,
        index: DocumentIndex,
        chat: ChatBackend,
        embedder: EmbeddingBackend,
        config: AppConfig | None = None,
    ):
        self.kg = kg
        self.index = index
        self.chat = chat
        self.embedder = embedder
        self.config = config or AppConfig()
        self.telemetry: Counter[str] = Counter()
        self.match_cfg = MatchConfig(
            m=self.config.matcher.m,
            t_matching=self.config.matcher.t_matching,
            k=self.config.retriever.k,
        )
        self._l4d_vectors = l4d_label_vectors(kg, embedder)
        self.template = self._load_template(
            "naive.txt" if self.config.engine.naive else "diagnose.txt",
            require_differences=not self.config.engine.naive,
        )
        self.question_template = self._load_text("question.txt")

    def _load_text(self, name: str) -> str:
        directory = self.config.paths.templates_dir
        if directory:
            candidate = Path(directory) / name
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        return builtin_template(name)

    def _load_template(self, name: str, require_differences: bool) -> PromptTemplate:
        return split_template(
            self._load_text(name), require_differences=require_differences
        )

    def prepare(self, raw_text: str) -> PatientQuery:
        return prepare_query(raw_text, self.embedder)

    def match(self, query: PatientQuery) -> MatchResult:
        """Match the query's features against the graph's L4d nodes."""
        if not self._l4d_vectors or not query.features:
            return MatchResult(matched=frozenset(), matches=())
        return match_features(query, self.kg, self._l4d_vectors, self.match_cfg)

    def query_vector(self, query: PatientQuery) -> np.ndarray:
        """Renormalized mean of the feature embeddings."""
        if not query.feature_embeddings:
            raise EngineError("query has no features to build a vector from")
        return unit(np.mean(np.vstack(query.feature_embeddings), axis=0))

    def diagnose(self, raw_text: str, **modes) -> DiagnosisReport:
        return self.diagnose_query(self.prepare(raw_text), **modes)

    def diagnose_query(
        self,
        query: PatientQuery,
        *,
        retriever_mode: str = "with",
        kg_mode: str = "with",
        rng: np.random.Generator | None = None,
        exclude_record_ids: AbstractSet[str] = frozenset(),
        exclude_question_nodes: AbstractSet[str] = frozenset(),
    ) -> DiagnosisReport:
        """One full diagnosis pass over an already-prepared query.

        retriever_mode / kg_mode accept "with", "without" and "random";
        the random modes need an rng and exist for the ablation harness.
        """
        for mode in (retriever_mode, kg_mode):
            if mode not in ("with", "without", "random"):
                raise ValueError(f"unknown pipeline mode: {mode!r}")
        if "random" in (retriever_mode, kg_mode) and rng is None:
            raise ValueError("random modes require an rng")

        subcategory: str | None = None
        diffs: DifferenceSet | None = None
        confidence = "normal"
        matched: frozenset[str] = frozenset()
        if kg_mode == "with":
            matched = self.match(query).matched
            if matched:
                subcategory = vote_subcategory(matched, self.kg).winner
                diffs = extract_differences(subcategory, self.kg)
            else:
                confidence = "low_info"
        elif kg_mode == "random":
            l2_ids = sorted(n.id for n in self.kg.nodes_at(Level.L2))
            if not l2_ids:
                raise EngineError("graph has no subcategory nodes to draw from")
            subcategory = l2_ids[int(rng.integers(len(l2_ids)))]
            diffs = extract_differences(subcategory, self.kg)

        context: RetrievedContext | None = None
        if retriever_mode != "without" and query.features:
            vector = self.query_vector(query)
            if retriever_mode == "with":
                context = retrieve(
                    self.index,
                    vector,
                    self.match_cfg.k,
                    exclude_record_ids=exclude_record_ids,
                )
            else:
                context = self._random_context(vector, exclude_record_ids, rng)

        system_text, user_text = assemble_prompt(
            query, context, diffs, self.template, self.kg
        )
        report = self._generate(system_text, user_text)
        report.confidence_flag = confidence
        report.subcategory_id = subcategory
        if subcategory is not None and self.config.questioning.count > 0:
            report.follow_up_questions = self._follow_ups(
                subcategory, matched | frozenset(exclude_question_nodes)
            )
        return report

    def _random_context(
        self,
        vector: np.ndarray,
        exclude_record_ids: AbstractSet[str],
        rng: np.random.Generator,
    ) -> RetrievedContext | None:
        k = self.match_cfg.k
        eligible = [
            i
            for i in range(len(self.index))
            if self.index.record_ids[i] not in exclude_record_ids
        ]
        if not eligible:
            return None
        size = min(k, len(eligible))
        picks = rng.choice(len(eligible), size=size, replace=False)
        chosen = [eligible[int(p)] for p in picks]
        hits = [
            Hit(
                self.index.record_ids[i],
                self.index.document_texts[i],
                float(self.index.matrix[i] @ vector),
            )
            for i in chosen
        ]
        hits.sort(key=lambda h: (-h.score, h.record_id))
        return RetrievedContext(hits=tuple(hits), k_requested=k)

    def _generate(self, system_text: str, user_text: str) -> DiagnosisReport:
        self.telemetry["generations"] += 1
        response = self.chat.chat(system_text, user_text)
        try:
            return parse_report(response, self.kg)
        except ReportParseError:
            self.telemetry["parse_retries"] += 1
            log.warning("generation was unparseable; reprompting once")
            response = self.chat.chat(system_text, user_text + REPROMPT_SUFFIX)
            return parse_report(response, self.kg)

    def _follow_ups(
        self, subcategory: str, exclude: AbstractSet[str]
    ) -> list[Question]:
        ranked = select_question_features(
            self.kg, subcategory, count=len(self.kg.nodes)
        )
        chosen = [fid for fid in ranked if fid not in exclude]
        chosen = chosen[: self.config.questioning.count]
        if not chosen:
            return []
        chat = self.chat if self.config.questioning.rephrase else None
        return generate_questions(chosen, self.kg, chat, self.question_template)

    # -- consultation loop -------------------------------------------------

    def start_session(self, session_id: str, raw_text: str) -> ConsultationSession:
        session = ConsultationSession(session_id=session_id, query=self.prepare(raw_text))
        return self.consult_step(session, None)

    def consult_step(
        self,
        session: ConsultationSession,
        answer: tuple[str, bool] | None = None,
    ) -> ConsultationSession:
        """Apply an optional answer, re-diagnose, and record the turn.

        An affirmative answer appends the source node's label to the query
        features (with a fresh embedding). Replaying an already-answered
        question is a no-op returning the session unchanged, which makes
        retried requests idempotent. Questions never repeat across turns.
        """
        if answer is not None:
            fid, affirmation = answer
            if fid not in session.asked_node_ids:
                raise EngineError(f"answer references a node never asked: {fid}")
            if fid in session.answered:
                return session
            session.answered[fid] = affirmation
            if affirmation:
                label = self.kg.node(fid).label
                embedding = self.embedder.embed([label])[0]
                session.query.features.append(label)
                session.query.feature_embeddings.append(embedding)
                session.query.confirmed.append(label)
        report = self.diagnose_query(
            session.query,
            exclude_question_nodes=frozenset(session.asked_node_ids),
        )
        session.asked_node_ids.update(q.node_id for q in report.follow_up_questions)
        session.turns.append(
            TurnRecord(questions=tuple(report.follow_up_questions), answer=answer)
        )
        session.latest_report = report
        return session
