"""Retrieval evaluation: graded judgments, rank metrics, significance, evolution reports.

Judgments live in tab-separated qrels files (query_id, chunk_id, grade 0..4);
system output lives in run files (query_id, chunk_id, rank, score, extras
ignored). Binary metrics (MRR, P@k) treat grade >= 3 as relevant by default;
NDCG uses exponential gain 2^grade - 1. A query present in a run but absent
from the qrels is an error, never a silent skip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EvalInputError, MissingJudgmentsError, ValidationError
from .fusion import StageTimings

RELEVANCE_THRESHOLD = 3  # grade at or above which a judgment counts as relevant
GRADE_RANGE = (0, 4)


@dataclass
class Qrels:
    """Graded relevance judgments: query_id -> chunk_id -> grade."""

    judgments: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, query_id: str, chunk_id: str, grade: int) -> None:
        if not GRADE_RANGE[0] <= grade <= GRADE_RANGE[1]:
            raise ValidationError(f"grade must be in 0..4, got {grade}", field="grade")
        self.judgments.setdefault(query_id, {})[chunk_id] = grade

    def grades_for(self, query_id: str) -> dict[str, int]:
        if query_id not in self.judgments:
            raise MissingJudgmentsError(query_id)
        return self.judgments[query_id]


@dataclass
class RunFile:
    """Ranked system output: query_id -> ordered (chunk_id, score) list."""

    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def query_ids(self) -> list[str]:
        return list(self.rankings)


def parse_qrels(path: str | Path) -> Qrels:
    """Read ``query_id <tab> chunk_id <tab> grade`` lines."""
    qrels = Qrels()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise EvalInputError(f"expected 3 tab-separated fields, got {len(parts)}", line=line_no)
            query_id, chunk_id, raw_grade = parts
            try:
                grade = int(raw_grade)
            except ValueError:
                raise EvalInputError(f"grade is not an integer: {raw_grade!r}", line=line_no) from None
            try:
                qrels.add(query_id, chunk_id, grade)
            except ValidationError as exc:
                raise EvalInputError(str(exc), line=line_no) from exc
    return qrels


def parse_run(path: str | Path) -> RunFile:
    """Read ``query_id <tab> chunk_id <tab> rank <tab> score`` lines; extra columns are ignored."""
    staged: dict[str, list[tuple[int, str, float]]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 4:
                raise EvalInputError(
                    f"expected at least 4 tab-separated fields, got {len(parts)}", line=line_no
                )
            query_id, chunk_id, raw_rank, raw_score = parts[:4]
            try:
                rank = int(raw_rank)
            except ValueError:
                raise EvalInputError(f"rank is not an integer: {raw_rank!r}", line=line_no) from None
            try:
                score = float(raw_score)
            except ValueError:
                raise EvalInputError(f"score is not a number: {raw_score!r}", line=line_no) from None
            if rank < 1:
                raise EvalInputError(f"rank must be >= 1, got {rank}", line=line_no)
            if any(cid == chunk_id for _, cid, _ in staged.get(query_id, ())):
                raise EvalInputError(
                    f"duplicate chunk {chunk_id!r} for query {query_id!r}", line=line_no
                )
            staged.setdefault(query_id, []).append((rank, chunk_id, score))
    run = RunFile()
    for query_id, rows in staged.items():
        rows.sort()
        run.rankings[query_id] = [(chunk_id, score) for _, chunk_id, score in rows]
    return run


# --- rank metrics -----------------------------------------------------------------

def reciprocal_rank(
    ranking: Sequence[tuple[str, float]] | Sequence[str],
    grades: Mapping[str, int],
    relevance_threshold: int = RELEVANCE_THRESHOLD,
) -> float:
    for i, item in enumerate(ranking, start=1):
        chunk_id = item[0] if isinstance(item, tuple) else item
        if grades.get(chunk_id, 0) >= relevance_threshold:
            return 1.0 / i
    return 0.0


def per_query_reciprocal_ranks(
    run: RunFile, qrels: Qrels, relevance_threshold: int = RELEVANCE_THRESHOLD
) -> dict[str, float]:
    return {
        query_id: reciprocal_rank(ranking, qrels.grades_for(query_id), relevance_threshold)
        for query_id, ranking in run.rankings.items()
    }


def mrr(run: RunFile, qrels: Qrels, relevance_threshold: int = RELEVANCE_THRESHOLD) -> float:
    """Mean reciprocal rank of the first relevant result; no-relevant queries score 0."""
    values = per_query_reciprocal_ranks(run, qrels, relevance_threshold)
    if not values:
        raise EvalInputError("run contains no queries")
    return sum(values.values()) / len(values)


def precision_at_k(
    run: RunFile, qrels: Qrels, k: int = 5, relevance_threshold: int = RELEVANCE_THRESHOLD
) -> float:
    """Mean |relevant in top-k| / k; the divisor stays k even for short result lists."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}", field="k")
    if not run.rankings:
        raise EvalInputError("run contains no queries")
    total = 0.0
    for query_id, ranking in run.rankings.items():
        grades = qrels.grades_for(query_id)
        hits = sum(
            1 for chunk_id, _ in ranking[:k] if grades.get(chunk_id, 0) >= relevance_threshold
        )
        total += hits / k
    return total / len(run.rankings)


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int = 10) -> float:
    """Mean NDCG@k with exponential gain (2^grade - 1) and log2(i+1) discount.

    The ideal ordering draws from every judged grade for the query; queries
    whose judgments are all zero score 0.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}", field="k")
    if not run.rankings:
        raise EvalInputError("run contains no queries")
    total = 0.0
    for query_id, ranking in run.rankings.items():
        grades = qrels.grades_for(query_id)
        dcg = sum(
            (2 ** grades.get(chunk_id, 0) - 1) / math.log2(i + 1)
            for i, (chunk_id, _) in enumerate(ranking[:k], start=1)
        )
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum((2**g - 1) / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
        total += dcg / idcg if idcg > 0 else 0.0
    return total / len(run.rankings)


# --- significance ------------------------------------------------------------------

def _midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1  # 1-based average rank of the tie group
        for t in range(i, j + 1):
            ranks[order[t]] = mid
        i = j + 1
    return ranks


def _u_statistics(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    n1, n2 = len(sample_a), len(sample_b)
    ranks = _midranks(list(sample_a) + list(sample_b))
    r1 = sum(ranks[:n1])
    u1 = r1 - n1 * (n1 + 1) / 2
    return u1, n1 * n2 - u1


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test: returns (min U, p).

    U uses midranks for ties. When min(n1, n2) <= 8 the p-value comes from
    exact enumeration of all splits of the pooled sample (p = probability of
    a min-U at or below the observed one); larger samples use the normal
    approximation with tie correction and continuity correction. Symmetric in
    its arguments.
    """
    if not sample_a or not sample_b:
        raise EvalInputError("both samples must be non-empty")
    u1, u2 = _u_statistics(sample_a, sample_b)
    u_min = min(u1, u2)
    n1, n2 = len(sample_a), len(sample_b)
    if min(n1, n2) <= 8:
        p = _exact_min_u_pvalue(list(sample_a) + list(sample_b), n1, u_min)
    else:
        p = _approx_pvalue(list(sample_a) + list(sample_b), n1, n2, u_min)
    return u_min, p


def _exact_min_u_pvalue(pooled: list[float], n1: int, observed: float) -> float:
    n = len(pooled)
    ranks = _midranks(pooled)
    n2 = n - n1
    offset = n1 * (n1 + 1) / 2
    hits = 0
    total = 0
    for subset in combinations(range(n), n1):
        u1 = sum(ranks[i] for i in subset) - offset
        u = min(u1, n1 * n2 - u1)
        total += 1
        if u <= observed + 1e-9:
            hits += 1
    return hits / total


def _approx_pvalue(pooled: list[float], n1: int, n2: int, u_min: float) -> float:
    n = n1 + n2
    mean = n1 * n2 / 2.0
    tie_term = 0.0
    seen: dict[float, int] = {}
    for v in pooled:
        seen[v] = seen.get(v, 0) + 1
    for count in seen.values():
        tie_term += count**3 - count
    variance = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0:
        return 1.0
    z = (u_min - mean + 0.5) / math.sqrt(variance)  # continuity correction toward the mean
    return min(1.0, 2.0 * _normal_sf(abs(z)))


# --- latency ----------------------------------------------------------------------

def _nearest_rank(sorted_values: Sequence[float], percentile: float) -> float:
    index = math.ceil(percentile / 100.0 * len(sorted_values))
    return sorted_values[max(index, 1) - 1]


@dataclass(frozen=True)
class StageSummary:
    mean: float
    p50: float
    p95: float


def latency_stats(timings: Sequence[StageTimings]) -> dict[str, StageSummary]:
    """Mean / p50 / p95 (nearest-rank) per stage and for the total."""
    if not timings:
        raise EvalInputError("no timings to summarize")
    summary: dict[str, StageSummary] = {}
    for stage in ("dense_ms", "sparse_ms", "fuse_ms", "rerank_ms", "total_ms"):
        values = sorted(getattr(t, stage) for t in timings)
        summary[stage] = StageSummary(
            mean=sum(values) / len(values),
            p50=_nearest_rank(values, 50),
            p95=_nearest_rank(values, 95),
        )
    return summary


# --- requirement evolution ---------------------------------------------------------

@dataclass(frozen=True)
class EvolutionRow:
    category: str
    count_start: int
    count_end: int
    change: str


@dataclass(frozen=True)
class EvolutionTable:
    start_year: int
    end_year: int
    rows: tuple[EvolutionRow, ...]  # total row first, then categories


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def format_change(count_start: int, count_end: int) -> str:
    """Percent change rounded to whole percent (+1,800% style); 'New' from a zero base."""
    if count_start == 0:
        return "New" if count_end > 0 else "0%"
    percent = _round_half_away((count_end - count_start) / count_start * 100.0)
    return f"{percent:+,d}%"


def evolution_report(
    records: Iterable[object], start_year: int, end_year: int
) -> EvolutionTable:
    """Per-category requirement counts at two years with a percent-change column.

    Records need ``year`` and ``category`` attributes (chunk metadata
    qualifies). Years with no records at all are an error naming the year.
    """
    start_counts: dict[str, int] = {}
    end_counts: dict[str, int] = {}
    start_total = end_total = 0
    for record in records:
        year = getattr(record, "year", None)
        category = getattr(record, "category", None) or "Uncategorized"
        if year == start_year:
            start_counts[category] = start_counts.get(category, 0) + 1
            start_total += 1
        elif year == end_year:
            end_counts[category] = end_counts.get(category, 0) + 1
            end_total += 1
    if start_total == 0:
        raise EvalInputError(f"no records in year {start_year}")
    if end_total == 0:
        raise EvalInputError(f"no records in year {end_year}")
    rows = [
        EvolutionRow(
            category="Total",
            count_start=start_total,
            count_end=end_total,
            change=format_change(start_total, end_total),
        )
    ]
    for category in sorted(set(start_counts) | set(end_counts)):
        s, e = start_counts.get(category, 0), end_counts.get(category, 0)
        rows.append(EvolutionRow(category=category, count_start=s, count_end=e, change=format_change(s, e)))
    return EvolutionTable(start_year=start_year, end_year=end_year, rows=tuple(rows))


# --- reporting ---------------------------------------------------------------------

def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Plain-text table with left-aligned, width-fitted columns."""
    cells = [[str(c) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


@dataclass(frozen=True)
class EvalReport:
    mrr: float
    precision_at_5: float
    ndcg_at_10: float
    query_count: int
    per_query_rr: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "precision_at_5": self.precision_at_5,
            "ndcg_at_10": self.ndcg_at_10,
            "query_count": self.query_count,
        }


def evaluate_run(
    run: RunFile, qrels: Qrels, relevance_threshold: int = RELEVANCE_THRESHOLD
) -> EvalReport:
    return EvalReport(
        mrr=mrr(run, qrels, relevance_threshold),
        precision_at_5=precision_at_k(run, qrels, 5, relevance_threshold),
        ndcg_at_10=ndcg_at_k(run, qrels, 10),
        query_count=len(run.rankings),
        per_query_rr=per_query_reciprocal_ranks(run, qrels, relevance_threshold),
    )


def compare_runs(
    run_a: RunFile, run_b: RunFile, qrels: Qrels, relevance_threshold: int = RELEVANCE_THRESHOLD
) -> dict:
    """Mann-Whitney U over the two runs' per-query reciprocal ranks."""
    rr_a = list(per_query_reciprocal_ranks(run_a, qrels, relevance_threshold).values())
    rr_b = list(per_query_reciprocal_ranks(run_b, qrels, relevance_threshold).values())
    u, p = mann_whitney_u(rr_a, rr_b)
    return {"statistic_u": u, "p_value": p, "n_a": len(rr_a), "n_b": len(rr_b)}
