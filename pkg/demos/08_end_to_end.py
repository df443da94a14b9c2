"""Walkthrough: the whole pipeline behind one configuration object.

RagSystem wires ingestion, both indexes, hybrid retrieval, tier-routed
generation (offline mock providers by default), and the provenance store.
The CLI (`reqrag ingest/index/query/eval/serve`) and the HTTP service drive
this same facade, so all three front doors return identical retrieval
results for identical inputs.
"""

import json
import tempfile
from pathlib import Path

from reqrag import RagSystem
from reqrag.config import config_from_dict

with tempfile.TemporaryDirectory() as tmp:
    workdir = Path(tmp)
    print("=== 1. Write a small corpus and a config ===")
    topics = [
        "conveyor belt speed limits and guarding",
        "welding cell ventilation and fume extraction",
        "robot arm torque limits during manual guidance",
        "authentication requirements for controller access",
    ]
    records = []
    for d, topic in enumerate(topics * 3):
        records.append({
            "doc_id": f"DOC-{d:02d}",
            "version_timestamp": "2023-06-01",
            "title": f"Spec {d}",
            "source_tag": "native",
            "blocks": [
                {"kind": "heading", "level": 1, "text": f"Requirements for area {d}"},
                {"kind": "paragraph",
                 "text": f"Requirement {d}: {topic}. The supplier shall verify compliance and "
                         f"retain evidence in the qualification file."},
            ],
            "metadata": {"category": "Functional Safety", "year": 2023},
        })
    corpus = workdir / "corpus.jsonl"
    corpus.write_text("\n".join(json.dumps(r) for r in records))

    config = config_from_dict({
        "paths": {
            "corpus": str(corpus),
            "chunk_store": str(workdir / "chunks.jsonl"),
            "lexical_index": str(workdir / "lexical.idx"),
            "vector_index": str(workdir / "vectors.idx"),
            "provenance_store": str(workdir / "provenance.jsonl"),
            "cost_ledger": str(workdir / "ledger.jsonl"),
            "pending_ingest": str(workdir / "pending.jsonl"),
        },
        "chunking": {"target_tokens": 48, "min_tokens": 8, "max_tokens": 128},
    })
    system = RagSystem(config)

    print("\n=== 2. Ingest and index ===")
    report = system.ingest()
    print(f"documents={report.documents} chunks={report.chunk_count} errors={len(report.errors)}")
    print("index stats:", system.build_indexes())

    print("\n=== 3. Dry-run retrieval (no generation, no ledger entry) ===")
    outcome = system.query("torque limits for the robot arm", dry_run=True)
    for i, cand in enumerate(outcome.candidates, start=1):
        print(f"  {i}. {cand.chunk_id}  rrf={cand.rrf_score:.5f} rerank={cand.rerank_score}")

    print("\n=== 4. Full query: generation + provenance + costing ===")
    outcome = system.query("explain the welding ventilation requirements")
    print("answer      :", outcome.answer_text[:90], "...")
    print("tier        :", outcome.tier_id, "provider:", outcome.provider_id)
    print("provenance  :", outcome.provenance_id)
    record = system.get_provenance(outcome.provenance_id)
    print("attributions:", [a.chunk_id for a in record.attributions])
    print("verified    :", system.verify_provenance(outcome.provenance_id).ok)

    print("\n=== 5. Ablation flags mirror the CLI (--sparse-only / --dense-only) ===")
    sparse = system.query("torque limits", dry_run=True, sparse_only=True)
    print("sparse-only dense scores all absent:",
          all(c.dense_score is None for c in sparse.candidates))

    print("\n=== 6. Service-style metrics ===")
    print(json.dumps(system.metrics(), indent=2)[:400], "...")
