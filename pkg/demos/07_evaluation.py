"""Walkthrough: scoring retrieval runs and analyzing requirement evolution.

Judgments are graded 0..4 per (query, chunk); by default grade >= 3 counts as
relevant for the binary metrics. Runs compare with a Mann-Whitney U test over
per-query reciprocal ranks; corpus metadata rolls up into a longitudinal
category table.
"""

from reqrag.evaluation import (
    Qrels,
    RunFile,
    compare_runs,
    evolution_report,
    format_table,
    latency_stats,
    mann_whitney_u,
    mrr,
    ndcg_at_k,
    precision_at_k,
)
from reqrag.fusion import StageTimings

print("=== 1. Metric kernels on a tiny judged run ===")
qrels = Qrels(judgments={
    "q1": {"a": 4, "b": 0, "c": 1},
    "q2": {"w": 0, "x": 0, "y": 2, "z": 3},
})
run = RunFile(rankings={
    "q1": [("a", 0.9), ("b", 0.6), ("c", 0.3)],
    "q2": [("w", 0.8), ("x", 0.7), ("y", 0.6), ("z", 0.5)],
})
print(f"MRR     = {mrr(run, qrels):.4f}   (first relevant at ranks 1 and 4)")
print(f"P@5     = {precision_at_k(run, qrels, k=5):.4f}")
print(f"NDCG@10 = {ndcg_at_k(run, qrels, k=10):.4f}")

print("\n=== 2. Comparing two runs: Mann-Whitney U ===")
better = RunFile(rankings={qid: ranking for qid, ranking in run.rankings.items()})
worse = RunFile(rankings={
    "q1": [("b", 0.9), ("c", 0.6), ("a", 0.3)],
    "q2": [("w", 0.8), ("x", 0.7), ("y", 0.6), ("z", 0.5)],
})
print(compare_runs(better, worse, qrels))
u, p = mann_whitney_u([1, 2, 3], [10, 11, 12])
print(f"fully separated samples: U={u}, p={p}")

print("\n=== 3. Latency summaries (nearest-rank percentiles) ===")
timings = [
    StageTimings(dense_ms=3 + i % 5, sparse_ms=1 + i % 3, fuse_ms=0.1,
                 rerank_ms=0.4, total_ms=5 + i % 7)
    for i in range(100)
]
stats = latency_stats(timings)
rows = [(stage, f"{s.mean:.2f}", f"{s.p50:.2f}", f"{s.p95:.2f}") for stage, s in stats.items()]
print(format_table(("stage", "mean", "p50", "p95"), rows))

print("\n=== 4. Requirement evolution between two corpus vintages ===")


class Req:
    def __init__(self, year, category):
        self.year = year
        self.category = category


records = (
    [Req(2015, "IT Security")] * 5
    + [Req(2015, "Functional Safety")] * 342
    + [Req(2015, "Functional (General)")] * 1140
    + [Req(2023, "IT Security")] * 95
    + [Req(2023, "Functional Safety")] * 187
    + [Req(2023, "Functional (General)")] * 369
    + [Req(2023, "Network Segmentation")] * 18
)
table = evolution_report(records, 2015, 2023)
print(format_table(
    ("category", "2015", "2023", "change"),
    [(r.category, r.count_start, r.count_end, r.change) for r in table.rows],
))
