"""Walkthrough: every answer carries a verifiable trail back to its sources.

A provenance record bundles the query, the answer, one attribution per
retrieved chunk with its full score quadruple, generation metadata, and
confidence measures. Records persist to an append-only store and can be
re-verified against the corpus later; tampering is detected per attribution.
"""

import json
import tempfile
from pathlib import Path

from reqrag.fusion import RetrievalCandidate
from reqrag.ingest import Chunk, ChunkMetadata
from reqrag.orchestrator import GenerationResult
from reqrag.provenance import (
    ProvenanceStore,
    assemble_provenance,
    record_to_dict,
    verify_record,
)

corpus = {
    "SPEC-1#0000": Chunk(
        chunk_id="SPEC-1#0000", doc_id="SPEC-1", section_path=("Safety functions",),
        block_range=(0, 2), token_count=14,
        text="the conveyor shall stop within 500 ms of an emergency stop request",
        metadata=ChunkMetadata(doc_id="SPEC-1", version_timestamp="2023-05-15", year=2023),
    ),
    "SPEC-1#0001": Chunk(
        chunk_id="SPEC-1#0001", doc_id="SPEC-1", section_path=("Safety functions", "Diagnostics"),
        block_range=(2, 4), token_count=11,
        text="every stop event is logged with a timestamp and zone",
        metadata=ChunkMetadata(doc_id="SPEC-1", version_timestamp="2023-05-15", year=2023),
    ),
}

candidates = [
    RetrievalCandidate("SPEC-1#0000", dense_rank=1, sparse_rank=1,
                       dense_score=0.82, sparse_score=4.1, rrf_score=0.01639, rerank_score=5.0),
    RetrievalCandidate("SPEC-1#0001", dense_rank=2, sparse_rank=3,
                       dense_score=0.61, sparse_score=2.2, rrf_score=0.01601, rerank_score=3.0),
]
generation = GenerationResult(
    text="The conveyor stops within 500 ms. Stop events are logged with a timestamp.",
    provider_id="mock-economy", model_id="mock-small",
    tokens_in=140, tokens_out=16, attempts=1, started_at=100.0, finished_at=100.4,
)

print("=== 1. Assemble the record ===")
record = assemble_provenance(
    "how fast does the conveyor stop", candidates, generation, corpus,
    prompt="(the full prompt; stored as a digest by default)",
)
print(f"record {record.record_id}: {len(record.attributions)} attributions, "
      f"coverage={record.confidence.retrieval_coverage:.2f}, ungrounded={record.ungrounded}")
for attr, scores in zip(record.attributions, record.retrieval_scores):
    print(f"  {attr.chunk_id} @ {' > '.join(attr.section_path)}  "
          f"dense={scores.dense_score} sparse={scores.sparse_score} "
          f"rrf={scores.rrf_score} rerank={scores.rerank_score}")

print("\n=== 2. Records round-trip losslessly and persist append-only ===")
with tempfile.TemporaryDirectory() as tmp:
    store = ProvenanceStore(Path(tmp) / "provenance.jsonl")
    store.append(record)
    fetched = store.get(record.record_id)
    print(f"round trip equal: {fetched == record}")
    print("stored JSON starts:", json.dumps(record_to_dict(record))[:80], "...")

print("\n=== 3. Verification against the live corpus ===")
report = verify_record(record, corpus)
print(f"ok={report.ok} ({report.checked} attributions checked)")

print("\n=== 4. Tampering is pinpointed ===")
moved = dict(corpus)
original = moved["SPEC-1#0001"]
moved["SPEC-1#0001"] = Chunk(**{**original.__dict__, "section_path": ("Relocated",)})
report = verify_record(record, moved)
for failure in report.failures:
    print(f"  {failure.chunk_id}: {failure.reason}  recorded={failure.recorded_path} "
          f"current={failure.current_path}")

del moved["SPEC-1#0000"]
report = verify_record(record, moved)
print("after deleting a chunk too:", [(f.chunk_id, f.reason) for f in report.failures])
