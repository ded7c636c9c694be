import json

import pytest
from helpers import pair_vec

from graphdx.backends import exchange_key
from graphdx.build import AUGMENT_SYSTEM, TOPIC_SYSTEM, save_corpus, topic_user_prompt
from graphdx.cli import main
from graphdx.fixtures import toy_corpus, toy_kg
from graphdx.kg import Level, Relation, graph_equal, load
from graphdx.templates import builtin_template

STENOSIS_TEXT = "Pain located in lumbar region; pain worsens while walking."

_GOOD_REPORT = (
    "```json\n"
    + json.dumps(
        {
            "diagnosis_l1": "musculoskeletal pain",
            "diagnosis_l2": "lumbar pain",
            "diagnosis_l3": "lumbar canal stenosis",
            "reasoning": "claudication-style pain fits stenosis",
            "treatments": ["physical therapy"],
            "medications": ["nsaids"],
        }
    )
    + "\n```\n"
)


def _write_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    save_corpus(toy_corpus(), path)
    return path


def _write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def _build_transcript() -> dict[str, str]:
    """Scripted replies for topic proposal and L4a augmentation."""
    diseases = sorted(r.diagnosis_raw for r in toy_corpus())
    script = {
        exchange_key(
            TOPIC_SYSTEM, topic_user_prompt(diseases, 12, "diseases")
        ): '["lumbar pain", "neck pain"]',
        exchange_key(
            TOPIC_SYSTEM,
            topic_user_prompt(["lumbar pain", "neck pain"], 6, "disease subcategories"),
        ): '["musculoskeletal pain"]',
    }
    replies = {
        "lumbar canal stenosis": '["pain alleviated when sitting"]',
        "sciatica": '["pain worsens when sitting"]',
        "lumbar spondylosis": '["stiffness or pain in the lower back"]',
        "cervical spondylosis": "[]",
    }
    template = builtin_template("augment.txt")
    base = toy_kg(include_augmented=False)
    for disease in base.nodes_at(Level.L3):
        parent = base.out_edges(disease.id, Relation.IS_A)[0].dst
        siblings = sorted(
            base.node(e.src).label
            for e in base.in_edges(parent, Relation.IS_A)
            if e.src != disease.id
        )
        user_text = template.replace("{disease}", disease.label).replace(
            "{sibling_diseases}", ", ".join(siblings) if siblings else "none listed"
        )
        script[exchange_key(AUGMENT_SYSTEM, user_text)] = replies[disease.label]
    return script


def _hierarchy_table() -> dict[str, list[float]]:
    # blends at cosine 0.6 keep the four diseases in separate clusters
    # (distance 0.64 > threshold 0.35) while still pointing at their topic
    dim = 8
    return {
        "lumbar pain": pair_vec(dim, 0, 7, 1.0).tolist(),
        "neck pain": pair_vec(dim, 1, 7, 1.0).tolist(),
        "musculoskeletal pain": pair_vec(dim, 2, 7, 1.0).tolist(),
        "lumbar canal stenosis": pair_vec(dim, 0, 3, 0.6).tolist(),
        "sciatica": pair_vec(dim, 0, 4, 0.6).tolist(),
        "lumbar spondylosis": pair_vec(dim, 0, 5, 0.6).tolist(),
        "cervical spondylosis": pair_vec(dim, 1, 6, 0.6).tolist(),
    }


def _build_config(tmp_path):
    transcript = tmp_path / "transcript.json"
    transcript.write_text(json.dumps(_build_transcript()), encoding="utf-8")
    table = tmp_path / "table.json"
    table.write_text(json.dumps(_hierarchy_table()), encoding="utf-8")
    return _write_config(
        tmp_path,
        "build.json",
        {
            "mock": {
                "transcript_path": str(transcript),
                "embedding_table_path": str(table),
            }
        },
    )


def _built_artifacts(tmp_path, capsys):
    """Build kg + index once via the CLI; returns (kg_path, index_path)."""
    corpus = _write_corpus(tmp_path)
    cfg = _build_config(tmp_path)
    kg_path = tmp_path / "kg.json"
    index_path = tmp_path / "index.json"
    assert (
        main(
            [
                "--config",
                str(cfg),
                "build-kg",
                "--corpus",
                str(corpus),
                "--out",
                str(kg_path),
                "--augment",
            ]
        )
        == 0
    )
    assert (
        main(["ingest", "--corpus", str(corpus), "--out", str(index_path)]) == 0
    )
    capsys.readouterr()
    return kg_path, index_path


# --- build-kg and ingest -----------------------------------------------------


def test_build_kg_reproduces_toy_graph(tmp_path, capsys):
    corpus = _write_corpus(tmp_path)
    cfg = _build_config(tmp_path)
    out = tmp_path / "kg.json"
    code = main(
        [
            "--config",
            str(cfg),
            "build-kg",
            "--corpus",
            str(corpus),
            "--out",
            str(out),
            "--augment",
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "15 nodes" in stdout
    assert "16 edges" in stdout
    assert "L4a=3" in stdout
    assert graph_equal(load(out), toy_kg(include_augmented=True))


def test_build_kg_without_augment_has_no_l4a(tmp_path, capsys):
    corpus = _write_corpus(tmp_path)
    cfg = _build_config(tmp_path)
    out = tmp_path / "kg.json"
    code = main(
        ["--config", str(cfg), "build-kg", "--corpus", str(corpus), "--out", str(out)]
    )
    assert code == 0
    assert "L4a=0" in capsys.readouterr().out
    assert graph_equal(load(out), toy_kg(include_augmented=False))


def test_ingest_writes_loadable_index(tmp_path, capsys):
    corpus = _write_corpus(tmp_path)
    out = tmp_path / "index.json"
    assert main(["ingest", "--corpus", str(corpus), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "4 documents" in stdout
    assert "dimension 32" in stdout
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["version"] == 1


# --- retrieve ----------------------------------------------------------------


def test_retrieve_prints_ranked_hits(tmp_path, capsys):
    corpus = _write_corpus(tmp_path)
    dim = 8
    table = {
        "pain located in lumbar region": pair_vec(dim, 0, 7, 1.0).tolist(),
        "pain worsens while walking": pair_vec(dim, 0, 7, 1.0).tolist(),
        STENOSIS_TEXT: pair_vec(dim, 0, 7, 1.0).tolist(),
        "Pain located in lumbar region; shooting pain down leg.": pair_vec(
            dim, 1, 7, 1.0
        ).tolist(),
        "Pain located in lumbar region; morning stiffness.": pair_vec(
            dim, 2, 7, 1.0
        ).tolist(),
        "Neck stiffness.": pair_vec(dim, 3, 7, 1.0).tolist(),
    }
    table_path = tmp_path / "table.json"
    table_path.write_text(json.dumps(table), encoding="utf-8")
    cfg = _write_config(
        tmp_path, "cfg.json", {"mock": {"embedding_table_path": str(table_path)}}
    )
    index_path = tmp_path / "index.json"
    assert (
        main(
            [
                "--config",
                str(cfg),
                "ingest",
                "--corpus",
                str(corpus),
                "--out",
                str(index_path),
            ]
        )
        == 0
    )
    capsys.readouterr()
    code = main(
        [
            "--config",
            str(cfg),
            "retrieve",
            "--index",
            str(index_path),
            "--text",
            STENOSIS_TEXT,
            "-k",
            "2",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("+1.0000  r1  diagnosis: lumbar canal stenosis")


# --- match -------------------------------------------------------------------


def test_match_prints_vote_and_differences(tmp_path, capsys):
    from graphdx.kg import save

    kg_path = tmp_path / "kg.json"
    save(toy_kg(), kg_path)
    code = main(["match", "--kg", str(kg_path), "--text", STENOSIS_TEXT])
    assert code == 0
    out = capsys.readouterr().out
    assert "  - pain located in lumbar region" in out
    assert "f[0] -> L4d:pain_located_in_lumbar_region  sim=1.0000" in out
    assert "L2:lumbar_pain: 2" in out
    assert "L2:neck_pain: 0" in out
    assert "winner: L2:lumbar_pain" in out
    assert "(L3:sciatica, has_manifestation_of, L4a:pain_worsens_when_sitting)" in out


def test_match_with_nothing_matched_reports_and_exits_zero(tmp_path, capsys):
    from graphdx.kg import save

    kg_path = tmp_path / "kg.json"
    save(toy_kg(), kg_path)
    code = main(["match", "--kg", str(kg_path), "--text", "feels fine today"])
    assert code == 0
    assert "matched set is empty" in capsys.readouterr().out


# --- diagnose ----------------------------------------------------------------


def test_diagnose_emits_report_json(tmp_path, capsys):
    kg_path, index_path = _built_artifacts(tmp_path, capsys)
    cfg = _write_config(
        tmp_path, "chat.json", {"mock": {"chat_fallback": _GOOD_REPORT}}
    )
    code = main(
        [
            "--config",
            str(cfg),
            "diagnose",
            "--kg",
            str(kg_path),
            "--index",
            str(index_path),
            "--text",
            STENOSIS_TEXT,
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["diagnosis_l3"] == "lumbar canal stenosis"
    assert report["subcategory_id"] == "L2:lumbar_pain"
    assert report["off_graph"] is False


def test_diagnose_ablation_flags_drop_legs(tmp_path, capsys):
    kg_path, index_path = _built_artifacts(tmp_path, capsys)
    cfg = _write_config(
        tmp_path, "chat.json", {"mock": {"chat_fallback": _GOOD_REPORT}}
    )
    code = main(
        [
            "--config",
            str(cfg),
            "diagnose",
            "--kg",
            str(kg_path),
            "--index",
            str(index_path),
            "--text",
            STENOSIS_TEXT,
            "--no-kg",
            "--no-retrieval",
        ]
    )
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["subcategory_id"] is None
    assert report["follow_up_questions"] == []


# --- eval --------------------------------------------------------------------


def _write_cases(tmp_path):
    path = tmp_path / "cases.jsonl"
    lines = [
        json.dumps(
            {
                "record_id": r.record_id,
                "query_text": r.manifestation_text,
                "gold_l3": r.diagnosis_raw,
            }
        )
        for r in toy_corpus()
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_eval_prints_tables_and_writes_report(tmp_path, capsys):
    kg_path, index_path = _built_artifacts(tmp_path, capsys)
    cases = _write_cases(tmp_path)
    cfg = _write_config(
        tmp_path, "chat.json", {"mock": {"chat_fallback": _GOOD_REPORT}}
    )
    report_path = tmp_path / "report.json"
    code = main(
        [
            "--config",
            str(cfg),
            "eval",
            "--kg",
            str(kg_path),
            "--index",
            str(index_path),
            "--cases",
            str(cases),
            "--mask-ratios",
            "1.0,0.0",
            "--ablation",
            "--report",
            str(report_path),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "accuracy" in out
    assert "mask 100.0%" in out
    assert "mask 0.0%" in out
    assert "r=random,kg=random" in out
    doc = json.loads(report_path.read_text(encoding="utf-8"))
    assert set(doc) == {"plain", "masking", "ablation"}
    # the fallback always answers stenosis: 1 of 4 golds right at L3
    assert doc["plain"]["accuracy"]["L3"] == pytest.approx(0.25)
    assert doc["plain"]["accuracy"]["L1"] == pytest.approx(1.0)
    assert set(doc["masking"]["accuracy"]) == {"1.0", "0.0"}
    assert len(doc["ablation"]["cells"]) == 9


# --- failure paths -----------------------------------------------------------


def test_missing_case_file_exits_two(tmp_path, capsys):
    kg_path, index_path = _built_artifacts(tmp_path, capsys)
    code = main(
        [
            "eval",
            "--kg",
            str(kg_path),
            "--index",
            str(index_path),
            "--cases",
            str(tmp_path / "nope.jsonl"),
        ]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_invalid_config_exits_two(tmp_path, capsys):
    cfg = _write_config(tmp_path, "bad.json", {"matcher": {"m": 0}})
    kg_path = tmp_path / "kg.json"
    from graphdx.kg import save

    save(toy_kg(), kg_path)
    code = main(
        ["--config", str(cfg), "match", "--kg", str(kg_path), "--text", "pain"]
    )
    assert code == 2
    assert "matcher.m" in capsys.readouterr().err


def test_featureless_text_exits_two(tmp_path, capsys):
    from graphdx.kg import save

    kg_path = tmp_path / "kg.json"
    save(toy_kg(), kg_path)
    code = main(["match", "--kg", str(kg_path), "--text", "?!."])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_missing_required_arguments_raise_system_exit():
    with pytest.raises(SystemExit):
        main(["retrieve"])
