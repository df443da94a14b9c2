"""Walkthrough: weighted reciprocal-rank fusion and why hybrid beats either half.

Sparse retrieval nails exact terminology but is blind to paraphrase; dense
retrieval handles paraphrase but can blur precise terms. Weighted RRF
(alpha_dense=0.7, alpha_sparse=0.3, k=60) merges both rankings, and a
pluggable scorer re-orders the top pool.
"""

from reqrag.embedding import SynonymHashProvider, embed
from reqrag.fusion import FusionConfig, hybrid_search, rrf_fuse
from reqrag.hnsw import build_graph
from reqrag.lexical import build_index

print("=== 1. The fusion formula on a worked example ===")
cfg = FusionConfig()
fused = rrf_fuse(["A", "B", "C"], ["B", "C", "A"], cfg)
for cand in fused:
    print(f"  {cand.chunk_id}: dense_rank={cand.dense_rank} sparse_rank={cand.sparse_rank} "
          f"rrf={cand.rrf_score:.6f}")
print("A wins: 0.7/61 + 0.3/63 > 0.7/62 + 0.3/61")

print("\n=== 2. A corpus where one relevant chunk shares no words with the query ===")
chunks = {
    "c-estop": "the actuator stops dangerous motion within 500 ms",
    "c-paint": "paint booth airflow requirements for solvent extraction",
    "c-weld": "welding cell ventilation and fume hood placement",
    "c-agv": "automated guided vehicle routing constraints",
    "c-conv": "conveyor belt speed limits and guarding",
}
# the provider knows domain synonyms, standing in for a semantic encoder
provider = SynonymHashProvider({"halts": "stops", "hazardous": "dangerous", "movement": "motion"})
index = build_index(chunks.items())
graph = build_graph({cid: embed(text, provider) for cid, text in chunks.items()}, rng_seed=11)

query = "halts hazardous movement"  # zero token overlap with c-estop
print(f"query: {query!r}")

print("\n=== 3. Sparse-only misses it; the dense path carries it ===")
sparse_only = FusionConfig(dense_enabled=False, rerank_enabled=False)
candidates, _ = hybrid_search(query, index, graph, provider, sparse_only, texts=chunks)
print("sparse-only results:", [c.chunk_id for c in candidates] or "(none)")

hybrid_cfg = FusionConfig(rerank_enabled=False)
candidates, timings = hybrid_search(query, index, graph, provider, hybrid_cfg, texts=chunks)
print("hybrid results     :", [(c.chunk_id, round(c.rrf_score, 5)) for c in candidates])
top = candidates[0]
print(f"top candidate {top.chunk_id}: dense_rank={top.dense_rank}, "
      f"sparse_rank={top.sparse_rank} (absent -> contributed 0)")

print("\n=== 4. Re-ranking with the built-in token-overlap scorer ===")
candidates, timings = hybrid_search(
    query + " extraction airflow", index, graph, provider, FusionConfig(), texts=chunks
)
for cand in candidates:
    print(f"  {cand.chunk_id}: rrf={cand.rrf_score:.5f} rerank={cand.rerank_score}")

print("\n=== 5. Every stage reports its wall time ===")
print({k: round(v, 3) for k, v in timings.as_dict().items()})
