"""Command-line front door: ingest, index, query, eval, provenance, serve.

Exit codes: 0 for success (including partial ingest), 1 for operational
failures, 2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigError, EvalInputError, MissingJudgmentsError, ReqragError
from .evaluation import (
    compare_runs,
    evaluate_run,
    format_table,
    latency_stats,
    parse_qrels,
    parse_run,
)
from .fusion import StageTimings
from .provenance import record_to_dict
from .system import RagSystem

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reqrag",
        description="Hybrid lexical/vector retrieval with routed generation and provenance.",
    )
    parser.add_argument("--version", action="version", version=f"reqrag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse and chunk a corpus JSONL file")
    p_ingest.add_argument("--corpus", help="corpus file (default: paths.corpus from config)")
    p_ingest.add_argument("--config", help="YAML config file")

    p_index = sub.add_parser("index", help="build lexical and vector index snapshots")
    p_index.add_argument("--config", help="YAML config file")

    p_query = sub.add_parser("query", help="answer one query against the built indexes")
    p_query.add_argument("text", help="the query text")
    p_query.add_argument("--config", help="YAML config file")
    p_query.add_argument("--dry-run", action="store_true", help="retrieval only, no generation")
    p_query.add_argument("--no-rerank", action="store_true", help="skip the re-ranking stage")
    p_query.add_argument("--sparse-only", action="store_true", help="BM25 retrieval only")
    p_query.add_argument("--dense-only", action="store_true", help="vector retrieval only")
    p_query.add_argument("--json", action="store_true", help="emit JSON instead of text")

    p_eval = sub.add_parser("eval", help="score a run file against graded judgments")
    p_eval.add_argument("--run", required=True, help="run file (query, chunk, rank, score)")
    p_eval.add_argument("--qrels", required=True, help="judgments file (query, chunk, grade)")
    p_eval.add_argument("--baseline", help="second run file for a significance comparison")
    p_eval.add_argument("--timings", help="JSONL of stage timings for the latency summary")
    p_eval.add_argument(
        "--relevance-threshold", type=int, default=3, help="grade treated as relevant (default 3)"
    )

    p_prov = sub.add_parser("provenance", help="export one provenance record by id")
    p_prov.add_argument("--id", required=True, dest="record_id")
    p_prov.add_argument("--config", help="YAML config file")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", help="YAML config file")
    p_serve.add_argument("--host", help="override service.host")
    p_serve.add_argument("--port", type=int, help="override service.port")
    return parser


def _load_system(config_path: str | None) -> RagSystem:
    return RagSystem(load_config(config_path))


def cmd_ingest(args: argparse.Namespace) -> int:
    system = _load_system(args.config)
    corpus = Path(args.corpus or system.config.paths.corpus)
    if not corpus.exists():
        print(f"error: corpus file not found: {corpus}", file=sys.stderr)
        return EXIT_USAGE
    report = system.ingest(corpus)
    summary = report.token_count_summary()
    print(f"documents ingested: {report.documents}")
    print(f"chunks written:     {report.chunk_count} -> {system.config.paths.chunk_store}")
    print(
        "token counts:       min %s  mean %.1f  max %s"
        % (summary["min"], summary["mean"], summary["max"])
    )
    print(f"errors:             {len(report.errors)}")
    for line_no, message in report.errors:
        print(f"  line {line_no}: {message}")
    if report.documents == 0 and report.errors:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    system = _load_system(args.config)
    stats = system.build_indexes()
    print(f"chunks indexed: {stats['chunks']}")
    if "lexical_terms" in stats:
        print(f"lexical terms:  {stats['lexical_terms']} -> {system.config.paths.lexical_index}")
    else:
        print("lexical index:  skipped (sparse retrieval disabled)")
    if "vectors" in stats:
        print(f"vectors:        {stats['vectors']} -> {system.config.paths.vector_index}")
    else:
        print("vector index:   skipped (dense retrieval disabled)")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    system = _load_system(args.config)
    outcome = system.query(
        args.text,
        dry_run=args.dry_run,
        rerank=False if args.no_rerank else None,
        sparse_only=args.sparse_only,
        dense_only=args.dense_only,
    )
    if args.json:
        print(json.dumps(_outcome_dict(outcome), indent=2, sort_keys=True))
        return EXIT_OK
    rows = [
        (
            i,
            c.chunk_id,
            _fmt(c.dense_score),
            _fmt(c.sparse_score),
            _fmt(c.rrf_score),
            _fmt(c.rerank_score),
        )
        for i, c in enumerate(outcome.candidates, start=1)
    ]
    print(format_table(("rank", "chunk", "dense", "sparse", "rrf", "rerank"), rows))
    t = outcome.timings
    print(
        f"timings ms: dense {t.dense_ms:.1f}  sparse {t.sparse_ms:.1f}  fuse {t.fuse_ms:.2f}"
        f"  rerank {t.rerank_ms:.2f}  total {t.total_ms:.1f}"
    )
    if outcome.dry_run:
        print("(dry run: no generation performed)")
    else:
        print(f"\nanswer ({outcome.provider_id}, tier {outcome.tier_id}):\n{outcome.answer_text}")
        print(f"\nprovenance record: {outcome.provenance_id}")
    return EXIT_OK


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def _outcome_dict(outcome) -> dict:
    return {
        "query": outcome.query,
        "sources": [
            {
                "chunk_id": c.chunk_id,
                "dense_score": c.dense_score,
                "sparse_score": c.sparse_score,
                "rrf_score": c.rrf_score,
                "rerank_score": c.rerank_score,
            }
            for c in outcome.candidates
        ],
        "timings": outcome.timings.as_dict(),
        "answer": outcome.answer_text,
        "provenance_id": outcome.provenance_id,
        "dry_run": outcome.dry_run,
    }


def cmd_eval(args: argparse.Namespace) -> int:
    qrels = parse_qrels(args.qrels)
    run = parse_run(args.run)
    report = evaluate_run(run, qrels, args.relevance_threshold)
    payload: dict = {"run": args.run, "metrics": report.as_dict()}
    print(
        format_table(
            ("metric", "value"),
            [
                ("MRR", f"{report.mrr:.4f}"),
                ("P@5", f"{report.precision_at_5:.4f}"),
                ("NDCG@10", f"{report.ndcg_at_10:.4f}"),
                ("queries", report.query_count),
            ],
        )
    )
    if args.baseline:
        baseline = parse_run(args.baseline)
        comparison = compare_runs(run, baseline, qrels, args.relevance_threshold)
        baseline_report = evaluate_run(baseline, qrels, args.relevance_threshold)
        payload["baseline"] = {"run": args.baseline, "metrics": baseline_report.as_dict()}
        payload["mann_whitney_u"] = comparison
        print("\nComparison vs baseline (Mann-Whitney U on per-query reciprocal ranks):")
        print(f"  baseline MRR {baseline_report.mrr:.4f}")
        print(f"  U = {comparison['statistic_u']:.1f}   p = {comparison['p_value']:.4g}")
    if args.timings:
        timings = _load_timings(args.timings)
        stats = latency_stats(timings)
        rows = [
            (stage, f"{s.mean:.1f}", f"{s.p50:.1f}", f"{s.p95:.1f}") for stage, s in stats.items()
        ]
        print("\nLatency summary (ms):")
        print(format_table(("stage", "mean", "p50", "p95"), rows))
        payload["latency"] = {
            stage: {"mean": s.mean, "p50": s.p50, "p95": s.p95} for stage, s in stats.items()
        }
    print("\nJSON:")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _load_timings(path: str) -> list[StageTimings]:
    timings = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                timings.append(StageTimings(**json.loads(line)))
    return timings


def cmd_provenance(args: argparse.Namespace) -> int:
    system = _load_system(args.config)
    record = system.get_provenance(args.record_id)
    if record is None:
        print(f"error: provenance record not found: {args.record_id}", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(record_to_dict(record), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    system = _load_system(args.config)
    host = args.host or system.config.service.host
    port = args.port or system.config.service.port
    uvicorn.run(create_app(system), host=host, port=port)
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "query": cmd_query,
    "eval": cmd_eval,
    "provenance": cmd_provenance,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvalInputError, MissingJudgmentsError, ReqragError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
