import json

import numpy as np
import pytest

from graphdx.backends import MockChatBackend, MockEmbeddingBackend, RecordingChat
from graphdx.engine import (
    NO_DIFFERENCES_MARKER,
    NO_DOCUMENTS_MARKER,
    DiagnosisReport,
    Pipeline,
    report_json,
)
from graphdx.evaluate import (
    DEFAULT_MASK_RATIOS,
    FULL_GRID,
    AblationConfig,
    EvalCase,
    EvalError,
    OracleChatBackend,
    ablation_result_to_dict,
    level_accuracy,
    load_alias_table,
    load_cases,
    masking_result_to_dict,
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

STENOSIS_TEXT = "Pain located in lumbar region; pain worsens while walking."
SCIATICA_TEXT = "Pain located in lumbar region; shooting pain down leg."
SPONDYLOSIS_TEXT = "Pain located in lumbar region; morning stiffness."
CERVICAL_TEXT = "Neck stiffness."

_REPORTS = {
    "lumbar canal stenosis": {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": "lumbar pain",
        "diagnosis_l3": "lumbar canal stenosis",
        "reasoning": "walking-dependent pain",
        "treatments": ["physical therapy"],
        "medications": ["nsaids"],
    },
    "sciatica": {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": "lumbar pain",
        "diagnosis_l3": "sciatica",
        "reasoning": "radiating leg pain",
        "treatments": ["nerve gliding"],
        "medications": ["analgesics"],
    },
    "lumbar spondylosis": {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": "lumbar pain",
        "diagnosis_l3": "lumbar spondylosis",
        "reasoning": "stiffness pattern",
        "treatments": ["mobility program"],
        "medications": ["nsaids"],
    },
    "cervical spondylosis": {
        "diagnosis_l1": "musculoskeletal pain",
        "diagnosis_l2": "neck pain",
        "diagnosis_l3": "cervical spondylosis",
        "reasoning": "neck presentation",
        "treatments": ["posture correction"],
        "medications": ["nsaids"],
    },
}

_OFF_GRAPH_DEFAULT = {
    "diagnosis_l3": "undetermined condition",
    "reasoning": "insufficient information",
}


def _toy_cases() -> list[EvalCase]:
    return [
        EvalCase("r1", STENOSIS_TEXT, "lumbar canal stenosis"),
        EvalCase("r2", SCIATICA_TEXT, "sciatica"),
        EvalCase("r3", SPONDYLOSIS_TEXT, "lumbar spondylosis"),
        EvalCase("r4", CERVICAL_TEXT, "cervical spondylosis"),
    ]


def _rebuilt(text: str) -> str:
    """Masked queries are rebuilt from normalized clauses."""
    return "; ".join(p.strip().lower().rstrip(".") for p in text.split(";"))


def _oracle_chat() -> OracleChatBackend:
    """Answers correctly iff the case's own text sits in the query block.

    Markers are anchored to the query section header so document snippets
    repeating the same wording cannot trigger a rule.  Both the original
    raw text and the normalized rebuild produced by masking are keyed.
    """
    rules = []
    for text, gold in (
        (STENOSIS_TEXT, "lumbar canal stenosis"),
        (SCIATICA_TEXT, "sciatica"),
        (SPONDYLOSIS_TEXT, "lumbar spondylosis"),
        (CERVICAL_TEXT, "cervical spondylosis"),
    ):
        rules.append((f"Patient manifestations:\n{text}", _REPORTS[gold]))
        rules.append((f"Patient manifestations:\n{_rebuilt(text)}\n", _REPORTS[gold]))
    return OracleChatBackend(rules, default=_OFF_GRAPH_DEFAULT)


def _pipeline(chat=None) -> Pipeline:
    embedder = MockEmbeddingBackend(dimension=32)
    return Pipeline(
        toy_kg(),
        ingest(toy_corpus(), embedder),
        chat or _oracle_chat(),
        embedder,
    )


def _resolved():
    return resolve_cases(_toy_cases(), toy_kg())


# --- case loading and resolution ---------------------------------------------


def test_load_cases_round_trip(tmp_path):
    path = tmp_path / "cases.jsonl"
    path.write_text(
        '{"record_id": "r1", "query_text": "neck pain", "gold_l3": "sciatica"}\n'
        "\n"
        '{"record_id": "r2", "query_text": "leg pain", "gold_l3": "sciatica"}\n',
        encoding="utf-8",
    )
    cases = load_cases(path)
    assert cases == [
        EvalCase("r1", "neck pain", "sciatica"),
        EvalCase("r2", "leg pain", "sciatica"),
    ]


def test_load_cases_errors(tmp_path):
    path = tmp_path / "cases.jsonl"
    path.write_text("{bad\n", encoding="utf-8")
    with pytest.raises(EvalError, match="not valid JSON"):
        load_cases(path)
    path.write_text('{"record_id": "r1"}\n', encoding="utf-8")
    with pytest.raises(EvalError, match="missing field"):
        load_cases(path)
    path.write_text("", encoding="utf-8")
    with pytest.raises(EvalError, match="empty"):
        load_cases(path)


def test_resolve_cases_fills_ancestors_case_insensitively():
    cases = [EvalCase("r1", "text", "  SCIATICA  ")]
    resolved = resolve_cases(cases, toy_kg())
    assert resolved[0].gold_l3_label == "sciatica"
    assert resolved[0].gold_l2_label == "lumbar pain"
    assert resolved[0].gold_l1_label == "musculoskeletal pain"


def test_resolve_cases_unknown_gold():
    with pytest.raises(EvalError, match="gold label not in graph"):
        resolve_cases([EvalCase("r1", "text", "martian flu")], toy_kg())


def test_load_alias_table(tmp_path):
    path = tmp_path / "aliases.json"
    path.write_text(
        json.dumps({"Lumbar  Canal Stenosis": ["Sciatica", "lumbar spondylosis"]}),
        encoding="utf-8",
    )
    table = load_alias_table(path)
    assert table == {
        "lumbar canal stenosis": frozenset({"sciatica", "lumbar spondylosis"})
    }
    path.write_text(json.dumps({"x": "not a list"}), encoding="utf-8")
    with pytest.raises(EvalError, match="list of strings"):
        load_alias_table(path)


# --- accuracy arithmetic -----------------------------------------------------


def _report(l1, l2, l3, off_graph=False) -> DiagnosisReport:
    return DiagnosisReport(
        diagnosis_l1=l1,
        diagnosis_l2=l2,
        diagnosis_l3=l3,
        reasoning_text="",
        treatments=[],
        medications=[],
        off_graph=off_graph,
    )


def test_level_accuracy_counts_each_level():
    cases = _resolved()
    predictions = [
        _report("musculoskeletal pain", "lumbar pain", "lumbar canal stenosis"),
        _report("musculoskeletal pain", "lumbar pain", "lumbar spondylosis"),  # wrong L3
        _report("musculoskeletal pain", "neck pain", "sciatica"),  # wrong L2+L3
        _report(None, "neck pain", "cervical spondylosis"),  # missing L1
    ]
    assert level_accuracy(predictions, cases, "L3") == pytest.approx(0.5)
    assert level_accuracy(predictions, cases, "L2") == pytest.approx(0.75)
    assert level_accuracy(predictions, cases, "L1") == pytest.approx(0.75)


def test_level_accuracy_off_graph_is_wrong_everywhere():
    cases = _resolved()[:1]
    prediction = _report(
        "musculoskeletal pain", "lumbar pain", "lumbar canal stenosis", off_graph=True
    )
    for level in ("L1", "L2", "L3"):
        assert level_accuracy([prediction], cases, level) == 0.0


def test_level_accuracy_alias_widens_l3_only():
    cases = _resolved()[:1]  # gold: lumbar canal stenosis
    prediction = _report("musculoskeletal pain", "neck pain", "cervical spondylosis")
    aliases = {"lumbar canal stenosis": frozenset({"cervical spondylosis"})}
    assert level_accuracy([prediction], cases, "L3", aliases) == 1.0
    assert level_accuracy([prediction], cases, "L2", aliases) == 0.0
    assert level_accuracy([prediction], cases, "L3") == 0.0


def test_level_accuracy_is_permutation_invariant():
    cases = _resolved()
    predictions = [
        _report("musculoskeletal pain", "lumbar pain", "lumbar canal stenosis"),
        _report("musculoskeletal pain", "lumbar pain", "sciatica"),
        _report(None, None, None, off_graph=True),
        _report("musculoskeletal pain", "neck pain", "cervical spondylosis"),
    ]
    base = level_accuracy(predictions, cases, "L3")
    rng = np.random.default_rng(5)
    for _ in range(5):
        order = rng.permutation(len(cases))
        shuffled_p = [predictions[int(i)] for i in order]
        shuffled_c = [cases[int(i)] for i in order]
        assert level_accuracy(shuffled_p, shuffled_c, "L3") == pytest.approx(base)


def test_level_accuracy_validation():
    cases = _resolved()
    with pytest.raises(EvalError, match="unknown level"):
        level_accuracy([], cases[:0], "L9")
    with pytest.raises(EvalError, match="predictions for"):
        level_accuracy([], cases, "L3")
    with pytest.raises(EvalError, match="zero cases"):
        level_accuracy([], [], "L3")


# --- plain run ---------------------------------------------------------------


def test_run_plain_all_correct_with_query_keyed_oracle():
    result = run_plain(_pipeline(), _resolved())
    assert result.accuracy == {"L1": 1.0, "L2": 1.0, "L3": 1.0}
    assert result.errors == []
    assert [r.diagnosis_l3 for r in result.reports] == [
        "lumbar canal stenosis",
        "sciatica",
        "lumbar spondylosis",
        "cervical spondylosis",
    ]


def test_run_plain_records_errors_and_scores_them_wrong():
    cases = resolve_cases(
        [
            EvalCase("r1", STENOSIS_TEXT, "lumbar canal stenosis"),
            EvalCase("rX", "?!.", "sciatica"),  # decomposes to nothing
        ],
        toy_kg(),
    )
    result = run_plain(_pipeline(), cases)
    assert len(result.errors) == 1
    assert result.errors[0][0] == "rX"
    assert result.accuracy["L3"] == pytest.approx(0.5)
    assert result.reports[1].off_graph is True


def test_run_plain_excludes_own_record_from_context():
    chat = RecordingChat(_oracle_chat())
    pipeline = _pipeline(chat=chat)
    run_plain(pipeline, _resolved()[:1])
    user_text = chat.exchanges[-1].user_text
    # r1's own document must not appear; the other three do
    assert user_text.count("diagnosis:") == 3
    assert "diagnosis: lumbar canal stenosis" not in user_text


# --- masking experiment ------------------------------------------------------


def test_default_mask_ratios():
    assert DEFAULT_MASK_RATIOS == (1.0, 0.666, 0.333, 0.0)


def test_masking_at_ratio_zero_equals_plain_run():
    cases = _resolved()
    plain = run_plain(_pipeline(), cases)
    masked = run_masking_experiment(_pipeline(), cases, ratios=(0.0,))
    assert masked.accuracy[0.0] == plain.accuracy
    assert masked.errors == []


def test_masking_restore_wins_back_the_deleted_clause():
    # at r = 0.5 the walking clause (the most discriminative match) is
    # deleted; the follow-up set re-asks it, so restore recovers the case
    cases = _resolved()[:1]
    with_restore = run_masking_experiment(
        _pipeline(), cases, ratios=(0.5,), restore=True
    )
    without_restore = run_masking_experiment(
        _pipeline(), cases, ratios=(0.5,), restore=False
    )
    assert with_restore.accuracy[0.5]["L3"] == 1.0
    assert without_restore.accuracy[0.5]["L3"] == 0.0


def test_masking_full_deletion_loses_the_case():
    cases = _resolved()[:1]
    result = run_masking_experiment(_pipeline(), cases, ratios=(1.0,))
    # both matched clauses deleted, nothing left to requestion from
    assert result.accuracy[1.0]["L3"] == 0.0


def test_masking_accuracy_non_increasing_in_ratio_on_toy():
    cases = _resolved()
    result = run_masking_experiment(_pipeline(), cases, ratios=DEFAULT_MASK_RATIOS)
    ordered = sorted(result.ratios)  # ascending ratio
    values = [result.accuracy[r]["L3"] for r in ordered]
    assert values == sorted(values, reverse=True)


# --- ablation grid -----------------------------------------------------------


def test_ablation_config_validation():
    AblationConfig("with", "random")
    with pytest.raises(ValueError, match="unknown ablation mode"):
        AblationConfig("with", "never")


def test_full_grid_has_nine_cells():
    assert len(FULL_GRID) == 9
    assert len(set(FULL_GRID)) == 9


def test_ablation_with_with_cell_matches_plain_run():
    cases = _resolved()
    plain = run_plain(_pipeline(), cases)
    ablation = run_ablation(
        _pipeline(), cases, grid=[AblationConfig("with", "with")], seed=7
    )
    cell = ablation.cells[AblationConfig("with", "with")]
    assert cell.accuracy == plain.accuracy
    assert [report_json(r) for r in cell.reports] == [
        report_json(r) for r in plain.reports
    ]


def test_ablation_without_cells_render_markers():
    chat = RecordingChat(_oracle_chat())
    pipeline = _pipeline(chat=chat)
    run_ablation(
        pipeline,
        _resolved()[:1],
        grid=[AblationConfig("without", "without")],
        seed=7,
    )
    user_text = chat.exchanges[-1].user_text
    assert NO_DOCUMENTS_MARKER in user_text
    assert NO_DIFFERENCES_MARKER in user_text


def test_ablation_is_reproducible_for_a_seed():
    cases = _resolved()
    grid = [AblationConfig("random", "random"), AblationConfig("random", "with")]
    a = run_ablation(_pipeline(), cases, grid=grid, seed=42)
    b = run_ablation(_pipeline(), cases, grid=grid, seed=42)
    assert a.seed == b.seed == 42
    for cell in grid:
        assert a.cells[cell].accuracy == b.cells[cell].accuracy
        assert [report_json(r) for r in a.cells[cell].reports] == [
            report_json(r) for r in b.cells[cell].reports
        ]


def test_ablation_default_seed_comes_from_config():
    result = run_ablation(
        _pipeline(), _resolved()[:1], grid=[AblationConfig("with", "with")]
    )
    assert result.seed == 42


# --- rendering ---------------------------------------------------------------


def test_render_tables_are_aligned():
    cases = _resolved()
    plain = run_plain(_pipeline(), cases)
    table = render_plain_table(plain)
    lines = table.splitlines()
    assert lines[0].split() == ["L1", "L2", "L3"]
    assert "accuracy" in lines[1]
    assert "100.00" in lines[1]

    masked = run_masking_experiment(_pipeline(), cases, ratios=(0.666, 0.0))
    mtable = render_masking_table(masked)
    assert "mask 66.6%" in mtable
    assert "mask 0.0%" in mtable

    ablation = run_ablation(
        _pipeline(), cases[:1], grid=[AblationConfig("with", "without")], seed=1
    )
    atable = render_ablation_table(ablation)
    assert "r=with,kg=without" in atable


def test_result_to_dict_shapes_are_serializable():
    cases = _resolved()[:1]
    masked = run_masking_experiment(_pipeline(), cases, ratios=(1.0, 0.0))
    mdoc = masking_result_to_dict(masked)
    json.dumps(mdoc)
    assert mdoc["ratios"] == [1.0, 0.0]
    assert set(mdoc["accuracy"]) == {"1.0", "0.0"}

    ablation = run_ablation(
        _pipeline(), cases, grid=[AblationConfig("random", "with")], seed=3
    )
    adoc = ablation_result_to_dict(ablation)
    json.dumps(adoc)
    assert adoc["seed"] == 3
    assert set(adoc["cells"]) == {"random/with"}
