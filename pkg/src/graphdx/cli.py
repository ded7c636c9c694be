"""Command-line entry point: build, index, query, evaluate, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import build, evaluate, kg as kg_model, retrieval
from .backends import BackendError, make_backends, unit
from .config import AppConfig, ConfigError, load_config, validate_config
from .engine import Pipeline, report_json
from .matching import (
    DecomposeError,
    MatchConfig,
    extract_differences,
    l4d_label_vectors,
    match_features,
    prepare_query,
    vote_subcategory,
)

log = logging.getLogger(__name__)

_ERRORS = (
    BackendError,
    ConfigError,
    DecomposeError,
    build.BuildError,
    evaluate.EvalError,
    kg_model.GraphError,
    retrieval.IndexError_,
    FileNotFoundError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        problems = validate_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        return args.handler(args, cfg)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphdx",
        description="Knowledge-graph-augmented retrieval and diagnosis engine",
    )
    parser.add_argument("--config", default=None, help="path to a JSON config file")
    parser.add_argument("--log-level", default="warning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kg", help="build the diagnostic graph from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--augment", action="store_true")
    p.set_defaults(handler=_cmd_build_kg)

    p = sub.add_parser("ingest", help="embed a corpus into a document index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("retrieve", help="top-k similar records for a query")
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("-k", type=int, default=None)
    p.set_defaults(handler=_cmd_retrieve)

    p = sub.add_parser("match", help="debug: match, vote and extract differences")
    p.add_argument("--kg", required=True)
    p.add_argument("--text", required=True)
    p.set_defaults(handler=_cmd_match)

    p = sub.add_parser("diagnose", help="full diagnosis pass for one query")
    p.add_argument("--kg", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--no-kg", action="store_true")
    p.add_argument("--no-retrieval", action="store_true")
    p.set_defaults(handler=_cmd_diagnose)

    p = sub.add_parser("eval", help="accuracy tables over a case file")
    p.add_argument("--kg", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--mask-ratios", default=None, help="comma list, e.g. 1.0,0.666,0.333,0.0")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--kg", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(handler=_cmd_serve)

    return parser


def _cmd_build_kg(args: argparse.Namespace, cfg: AppConfig) -> int:
    chat, embedder = make_backends(cfg)
    corpus = build.load_corpus(args.corpus)
    canonical = build.cluster_diseases(
        (r.diagnosis_raw for r in corpus), embedder, cfg.clustering.threshold
    )
    hierarchy = build.aggregate_hierarchy(
        canonical.clusters.keys(),
        chat,
        embedder,
        max_subcategories=cfg.hierarchy.max_subcategories,
        max_categories=cfg.hierarchy.max_categories,
    )
    graph = build.build_disease_kg(corpus, canonical, hierarchy)
    if args.augment:
        graph = build.augment_manifestations(graph, chat)
    kg_model.save(graph, args.out)
    levels = {
        level.value: len(graph.nodes_at(level)) for level in kg_model.Level
    }
    print(
        f"wrote {args.out}: {len(graph.nodes)} nodes"
        f" ({', '.join(f'{k}={v}' for k, v in levels.items())}),"
        f" {len(graph.edges)} edges"
    )
    return 0


def _cmd_ingest(args: argparse.Namespace, cfg: AppConfig) -> int:
    _, embedder = make_backends(cfg)
    corpus = build.load_corpus(args.corpus)
    index = retrieval.ingest(corpus, embedder)
    retrieval.save_index(index, args.out)
    print(f"wrote {args.out}: {len(index)} documents, dimension {index.dimension}")
    return 0


def _cmd_retrieve(args: argparse.Namespace, cfg: AppConfig) -> int:
    _, embedder = make_backends(cfg)
    index = retrieval.load_index(args.index)
    query = prepare_query(args.text, embedder)
    vector = unit(np.mean(np.vstack(query.feature_embeddings), axis=0))
    k = args.k if args.k is not None else cfg.retriever.k
    context = retrieval.retrieve(index, vector, k)
    for hit in context.hits:
        first_line = hit.document_text.splitlines()[0]
        print(f"{hit.score:+.4f}  {hit.record_id}  {first_line}")
    return 0


def _cmd_match(args: argparse.Namespace, cfg: AppConfig) -> int:
    _, embedder = make_backends(cfg)
    graph = kg_model.load(args.kg)
    query = prepare_query(args.text, embedder)
    print("features:")
    for feature in query.features:
        print(f"  - {feature}")
    vectors = l4d_label_vectors(graph, embedder)
    result = match_features(
        query,
        graph,
        vectors,
        MatchConfig(m=cfg.matcher.m, t_matching=cfg.matcher.t_matching, k=cfg.retriever.k),
    )
    print("matches:")
    for m in result.matches:
        print(f"  f[{m.feature_index}] -> {m.node_id}  sim={m.similarity:.4f}")
    if not result.matched:
        print("matched set is empty; no vote possible")
        return 0
    vote = vote_subcategory(result.matched, graph)
    print("tally:")
    for nid, votes in sorted(vote.tally.items()):
        print(f"  {nid}: {float(votes):g}")
    print(f"winner: {vote.winner}")
    diffs = extract_differences(vote.winner, graph)
    print("differences:")
    for disease_id, feature_id in sorted(diffs.triples):
        print(f"  ({disease_id}, has_manifestation_of, {feature_id})")
    return 0


def _make_pipeline(kg_path: str, index_path: str, cfg: AppConfig) -> Pipeline:
    chat, embedder = make_backends(cfg)
    graph = kg_model.load(kg_path)
    index = retrieval.load_index(index_path)
    return Pipeline(graph, index, chat, embedder, cfg)


def _cmd_diagnose(args: argparse.Namespace, cfg: AppConfig) -> int:
    pipeline = _make_pipeline(args.kg, args.index, cfg)
    report = pipeline.diagnose(
        args.text,
        retriever_mode="without" if args.no_retrieval else "with",
        kg_mode="without" if args.no_kg else "with",
    )
    sys.stdout.write(report_json(report))
    return 0


def _cmd_eval(args: argparse.Namespace, cfg: AppConfig) -> int:
    pipeline = _make_pipeline(args.kg, args.index, cfg)
    cases = evaluate.resolve_cases(evaluate.load_cases(args.cases), pipeline.kg)
    aliases = None
    if cfg.paths.alias_table:
        aliases = evaluate.load_alias_table(cfg.paths.alias_table)
    report_doc: dict[str, object] = {}
    plain = evaluate.run_plain(pipeline, cases, aliases)
    print(evaluate.render_plain_table(plain))
    report_doc["plain"] = {
        "accuracy": plain.accuracy,
        "errors": [{"record_id": r, "error": e} for r, e in plain.errors],
    }
    if args.mask_ratios:
        ratios = [float(x) for x in args.mask_ratios.split(",") if x.strip()]
        masking = evaluate.run_masking_experiment(
            pipeline, cases, ratios=ratios, aliases=aliases
        )
        print()
        print(evaluate.render_masking_table(masking))
        report_doc["masking"] = evaluate.masking_result_to_dict(masking)
    if args.ablation:
        ablation = evaluate.run_ablation(pipeline, cases, aliases=aliases)
        print()
        print(evaluate.render_ablation_table(ablation))
        report_doc["ablation"] = evaluate.ablation_result_to_dict(ablation)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"\nwrote {args.report}")
    return 0


def _cmd_serve(args: argparse.Namespace, cfg: AppConfig) -> int:
    import uvicorn

    from .service import create_app

    pipeline = _make_pipeline(args.kg, args.index, cfg)
    app = create_app(
        pipeline,
        snapshot_path=cfg.service.snapshot_path,
        static_dir=cfg.service.static_dir,
    )
    uvicorn.run(
        app,
        host=args.host or cfg.service.host,
        port=args.port or cfg.service.port,
        log_level="info",
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
