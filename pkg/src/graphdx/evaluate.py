"""Evaluation harness: level accuracies, masking experiment, ablation grid.

Accuracy is measured at three granularities: category (L1), subcategory
(L2), disease (L3). The masking experiment degrades each query by deleting
its most discriminative matched features and measures how much the
questioning loop's restore rule wins back. The ablation grid toggles the
retrieval and graph legs independently through with/without/random modes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backends import BackendError
from .engine import DiagnosisReport, EngineError, Pipeline
from .kg import DiagnosticKG, GraphError, Level, ancestors
from .matching import DecomposeError, PatientQuery, VoteError, vote_subcategory
from .questions import (
    MaskingConfig,
    mask_features,
    prune_attribution,
    select_question_features,
)

log = logging.getLogger(__name__)

LEVELS = ("L1", "L2", "L3")
DEFAULT_MASK_RATIOS = (1.0, 0.666, 0.333, 0.0)
MODES = ("with", "without", "random")


class EvalError(ValueError):
    """Raised for unusable cases, alias tables, or mismatched inputs."""


@dataclass(frozen=True, slots=True)
class EvalCase:
    record_id: str
    query_text: str
    gold_l3: str


@dataclass(frozen=True, slots=True)
class ResolvedCase:
    case: EvalCase
    gold_l3_label: str
    gold_l2_label: str
    gold_l1_label: str


def _label_key(label: str) -> str:
    return " ".join(label.lower().split())


def load_cases(path: str | Path) -> list[EvalCase]:
    cases: list[EvalCase] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvalError(
                f"{path}:{lineno}: not valid JSON"
                f" (case files are JSON Lines, one object per line): {exc}"
            ) from exc
        if not isinstance(doc, dict):
            raise EvalError(f"{path}:{lineno}: case must be a JSON object")
        try:
            cases.append(
                EvalCase(
                    record_id=str(doc["record_id"]),
                    query_text=str(doc["query_text"]),
                    gold_l3=str(doc["gold_l3"]),
                )
            )
        except KeyError as exc:
            raise EvalError(f"{path}:{lineno}: missing field {exc}") from None
    if not cases:
        raise EvalError(f"case file is empty: {path}")
    return cases


def resolve_cases(cases: Sequence[EvalCase], kg: DiagnosticKG) -> list[ResolvedCase]:
    """Resolve each gold disease label in the graph and derive its ancestors."""
    by_label = {_label_key(n.label): n for n in kg.nodes_at(Level.L3)}
    resolved: list[ResolvedCase] = []
    for case in cases:
        node = by_label.get(_label_key(case.gold_l3))
        if node is None:
            raise EvalError(f"gold label not in graph: {case.gold_l3!r} ({case.record_id})")
        sub_id, cat_id = ancestors(kg, node.id)
        resolved.append(
            ResolvedCase(
                case=case,
                gold_l3_label=node.label,
                gold_l2_label=kg.node(sub_id).label,
                gold_l1_label=kg.node(cat_id).label,
            )
        )
    return resolved


def load_alias_table(path: str | Path) -> dict[str, frozenset[str]]:
    """JSON map gold label -> list of disease labels counted correct at L3."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise EvalError("alias table must be a JSON object")
    table: dict[str, frozenset[str]] = {}
    for key, values in doc.items():
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise EvalError(f"alias entry for {key!r} must be a list of strings")
        table[_label_key(key)] = frozenset(_label_key(v) for v in values)
    return table


def _case_correct(
    report: DiagnosisReport,
    case: ResolvedCase,
    level: str,
    aliases: Mapping[str, frozenset[str]] | None,
) -> bool:
    if report.off_graph:
        return False
    predicted = {
        "L1": report.diagnosis_l1,
        "L2": report.diagnosis_l2,
        "L3": report.diagnosis_l3,
    }[level]
    if predicted is None:
        return False
    gold = {
        "L1": case.gold_l1_label,
        "L2": case.gold_l2_label,
        "L3": case.gold_l3_label,
    }[level]
    if _label_key(predicted) == _label_key(gold):
        return True
    if level == "L3" and aliases:
        return _label_key(predicted) in aliases.get(_label_key(gold), frozenset())
    return False


def level_accuracy(
    predictions: Sequence[DiagnosisReport],
    cases: Sequence[ResolvedCase],
    level: str,
    aliases: Mapping[str, frozenset[str]] | None = None,
) -> float:
    """Fraction of cases predicted correctly at one granularity level.

    off_graph reports count as wrong at every level. The alias table widens
    L3 equality for pain-type gold labels that stand for a set of diseases.
    """
    if level not in LEVELS:
        raise EvalError(f"unknown level: {level!r}")
    if len(predictions) != len(cases):
        raise EvalError(
            f"{len(predictions)} predictions for {len(cases)} cases"
        )
    if not cases:
        raise EvalError("cannot compute accuracy over zero cases")
    hits = sum(
        1
        for report, case in zip(predictions, cases)
        if _case_correct(report, case, level, aliases)
    )
    return hits / len(cases)


def _all_level_accuracy(
    predictions: Sequence[DiagnosisReport],
    cases: Sequence[ResolvedCase],
    aliases: Mapping[str, frozenset[str]] | None,
) -> dict[str, float]:
    return {
        level: level_accuracy(predictions, cases, level, aliases) for level in LEVELS
    }


@dataclass(slots=True)
class PlainRunResult:
    accuracy: dict[str, float]
    reports: list[DiagnosisReport]
    errors: list[tuple[str, str]] = field(default_factory=list)  # (record_id, message)


_WRONG = DiagnosisReport(
    diagnosis_l1=None,
    diagnosis_l2=None,
    diagnosis_l3=None,
    reasoning_text="",
    treatments=[],
    medications=[],
    off_graph=True,
)


def run_plain(
    pipeline: Pipeline,
    cases: Sequence[ResolvedCase],
    aliases: Mapping[str, frozenset[str]] | None = None,
) -> PlainRunResult:
    """Straight diagnose over every case, own record excluded from retrieval."""
    reports: list[DiagnosisReport] = []
    errors: list[tuple[str, str]] = []
    for case in cases:
        try:
            reports.append(
                pipeline.diagnose(
                    case.case.query_text,
                    exclude_record_ids=frozenset({case.case.record_id}),
                )
            )
        except (EngineError, BackendError, DecomposeError, VoteError, GraphError) as exc:
            errors.append((case.case.record_id, str(exc)))
            reports.append(_WRONG)
    return PlainRunResult(
        accuracy=_all_level_accuracy(reports, cases, aliases),
        reports=reports,
        errors=errors,
    )


# -- masking experiment ----------------------------------------------------


@dataclass(slots=True)
class MaskingRunResult:
    ratios: tuple[float, ...]
    accuracy: dict[float, dict[str, float]]
    errors: list[tuple[float, str, str]] = field(default_factory=list)


def _subset_query(query: PatientQuery, keep: Sequence[int]) -> PatientQuery:
    return PatientQuery(
        raw_text="; ".join(query.features[i] for i in keep),
        features=[query.features[i] for i in keep],
        feature_embeddings=[query.feature_embeddings[i] for i in keep],
        confirmed=list(query.confirmed),
    )


def _masked_query(
    pipeline: Pipeline,
    query: PatientQuery,
    ratio: float,
    mask_t: float,
    restore: bool,
) -> PatientQuery:
    """Apply the masking protocol to one query.

    Steps: match and vote on the intact query, delete the top-ratio matched
    nodes by discriminability, prune the query sentences those nodes
    explain, then (when restoring) re-run matching on the pruned query,
    generate the follow-up question set, and add back every pruned sentence
    whose cause node got asked about.
    """
    kg = pipeline.kg
    matched = pipeline.match(query).matched
    if not matched:
        return query
    subcategory = vote_subcategory(matched, kg).winner
    in_sub = matched & select_all_features(kg, subcategory)
    if not in_sub:
        return query
    deleted = mask_features(
        kg, subcategory, in_sub, MaskingConfig(r=ratio, t=mask_t)
    )
    if not deleted:
        return query
    causes = prune_attribution(query, deleted, kg, pipeline.embedder, mask_t)
    keep = [i for i, cause in enumerate(causes) if not cause]
    if not restore:
        return _subset_query(query, keep)
    pruned = _subset_query(query, keep)
    asked: frozenset[str] = frozenset()
    if pruned.features:
        remaining = pipeline.match(pruned).matched
        if remaining:
            new_sub = vote_subcategory(remaining, kg).winner
            ranked = select_question_features(kg, new_sub, count=len(kg.nodes))
            count = pipeline.config.questioning.count
            asked = frozenset(
                [fid for fid in ranked if fid not in remaining][:count]
            )
    asked_deleted = asked & deleted
    restored = [
        i for i, cause in enumerate(causes) if cause and (cause & asked_deleted)
    ]
    return _subset_query(query, sorted(set(keep) | set(restored)))


def select_all_features(kg: DiagnosticKG, subcategory: str) -> frozenset[str]:
    """Every L4d node under a subcategory (helper for masking eligibility)."""
    return frozenset(select_question_features(kg, subcategory, count=len(kg.nodes)))


def run_masking_experiment(
    pipeline: Pipeline,
    cases: Sequence[ResolvedCase],
    ratios: Sequence[float] = DEFAULT_MASK_RATIOS,
    mask_t: float | None = None,
    restore: bool = True,
    aliases: Mapping[str, frozenset[str]] | None = None,
) -> MaskingRunResult:
    """Accuracy per masking ratio; per-case failures recorded, never fatal."""
    if mask_t is None:
        mask_t = pipeline.config.questioning.mask.t
    result = MaskingRunResult(ratios=tuple(ratios), accuracy={})
    for ratio in ratios:
        reports: list[DiagnosisReport] = []
        for case in cases:
            try:
                query = pipeline.prepare(case.case.query_text)
                final = _masked_query(pipeline, query, ratio, mask_t, restore)
                reports.append(
                    pipeline.diagnose_query(
                        final, exclude_record_ids=frozenset({case.case.record_id})
                    )
                )
            except (EngineError, BackendError, DecomposeError, VoteError, GraphError) as exc:
                result.errors.append((ratio, case.case.record_id, str(exc)))
                reports.append(_WRONG)
        result.accuracy[ratio] = _all_level_accuracy(reports, cases, aliases)
    return result


# -- ablation grid ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AblationConfig:
    retriever_mode: str
    kg_mode: str

    def __post_init__(self) -> None:
        for mode in (self.retriever_mode, self.kg_mode):
            if mode not in MODES:
                raise ValueError(f"unknown ablation mode: {mode!r}")


FULL_GRID = tuple(
    AblationConfig(r, g) for r in MODES for g in MODES
)


@dataclass(slots=True)
class AblationCellResult:
    accuracy: dict[str, float]
    reports: list[DiagnosisReport]
    errors: list[tuple[str, str]] = field(default_factory=list)


@dataclass(slots=True)
class AblationRunResult:
    seed: int
    cells: dict[AblationConfig, AblationCellResult]


def run_ablation(
    pipeline: Pipeline,
    cases: Sequence[ResolvedCase],
    grid: Sequence[AblationConfig] = FULL_GRID,
    seed: int | None = None,
    aliases: Mapping[str, frozenset[str]] | None = None,
) -> AblationRunResult:
    """Run every grid cell with a fresh seeded rng so runs are reproducible."""
    if seed is None:
        seed = pipeline.config.eval.seed
    cells: dict[AblationConfig, AblationCellResult] = {}
    for cell in grid:
        rng = np.random.default_rng(seed)
        reports: list[DiagnosisReport] = []
        errors: list[tuple[str, str]] = []
        for case in cases:
            try:
                reports.append(
                    pipeline.diagnose(
                        case.case.query_text,
                        retriever_mode=cell.retriever_mode,
                        kg_mode=cell.kg_mode,
                        rng=rng,
                        exclude_record_ids=frozenset({case.case.record_id}),
                    )
                )
            except (EngineError, BackendError, DecomposeError, VoteError, GraphError) as exc:
                errors.append((case.case.record_id, str(exc)))
                reports.append(_WRONG)
        cells[cell] = AblationCellResult(
            accuracy=_all_level_accuracy(reports, cases, aliases),
            reports=reports,
            errors=errors,
        )
    return AblationRunResult(seed=seed, cells=cells)


# -- deterministic oracle generator ----------------------------------------


class OracleChatBackend:
    """Rule-driven generator for experiments: first matching marker wins.

    Rules are (marker substring, report dict) pairs checked against the
    user prompt in order; no match falls back to the default report. Used
    to build experiments whose correctness provably depends on a specific
    string reaching the prompt.
    """

    model_tag = "oracle-chat"

    def __init__(
        self,
        rules: Sequence[tuple[str, Mapping[str, object]]],
        default: Mapping[str, object],
    ):
        self._rules = [(marker, dict(report)) for marker, report in rules]
        self._default = dict(default)

    def chat(self, system_text: str, user_text: str) -> str:
        for marker, report in self._rules:
            if marker in user_text:
                return "```json\n" + json.dumps(report, sort_keys=True) + "\n```"
        return "```json\n" + json.dumps(self._default, sort_keys=True) + "\n```"


# -- rendering ---------------------------------------------------------------


def render_accuracy_row(label: str, accuracy: Mapping[str, float]) -> str:
    cells = "".join(f"{accuracy[level] * 100:>10.2f}" for level in LEVELS)
    return f"{label:<18}{cells}"


def _table_header() -> str:
    return f"{'':<18}" + "".join(f"{level:>10}" for level in LEVELS)


def render_plain_table(result: PlainRunResult) -> str:
    return "\n".join(
        [_table_header(), render_accuracy_row("accuracy", result.accuracy)]
    )


def render_masking_table(result: MaskingRunResult) -> str:
    lines = [_table_header()]
    for ratio in result.ratios:
        lines.append(
            render_accuracy_row(f"mask {ratio * 100:.1f}%", result.accuracy[ratio])
        )
    return "\n".join(lines)


def render_ablation_table(result: AblationRunResult) -> str:
    lines = [_table_header()]
    for cell, outcome in result.cells.items():
        label = f"r={cell.retriever_mode},kg={cell.kg_mode}"
        lines.append(render_accuracy_row(label, outcome.accuracy))
    return "\n".join(lines)


def masking_result_to_dict(result: MaskingRunResult) -> dict:
    return {
        "ratios": list(result.ratios),
        "accuracy": {
            str(ratio): dict(result.accuracy[ratio]) for ratio in result.ratios
        },
        "errors": [
            {"ratio": r, "record_id": rid, "error": msg}
            for r, rid, msg in result.errors
        ],
    }


def ablation_result_to_dict(result: AblationRunResult) -> dict:
    return {
        "seed": result.seed,
        "cells": {
            f"{cell.retriever_mode}/{cell.kg_mode}": {
                "accuracy": dict(outcome.accuracy),
                "errors": [
                    {"record_id": rid, "error": msg} for rid, msg in outcome.errors
                ],
            }
            for cell, outcome in result.cells.items()
        },
    }
