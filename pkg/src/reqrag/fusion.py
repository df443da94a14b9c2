"""Weighted reciprocal-rank fusion of dense and sparse rankings, plus re-ranking.

The fused score of a chunk is
``alpha_dense / (k_rrf + dense_rank) + alpha_sparse / (k_rrf + sparse_rank)``
with an absent rank contributing zero. A pluggable scorer re-orders the top
candidate pool; the built-in test scorer counts query-token overlap. Every
stage records its wall time so answers can carry latency provenance.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .embedding import EmbeddingProvider, embed
from .errors import DuplicateIdError, ScorerError, ValidationError
from .hnsw import HnswGraph
from .lexical import (
    EMPTY_DICTIONARY,
    Bm25Params,
    DomainDictionary,
    InvertedIndex,
    search_sparse,
    tokenize,
)


@dataclass(frozen=True)
class FusionConfig:
    """Weights, pool sizes, and ablation toggles for the retrieval pipeline.

    ``dense_enabled`` / ``sparse_enabled`` switch individual retrievers off
    for ablation runs; hybrid mode means both are on. Disabling both is a
    configuration error.
    """

    alpha_dense: float = 0.7
    alpha_sparse: float = 0.3
    k_rrf: float = 60.0
    candidate_pool: int = 20
    final_k: int = 5
    rerank_enabled: bool = True
    dense_enabled: bool = True
    sparse_enabled: bool = True
    rerank_fallback: bool = False  # fall back to fused order when the scorer fails

    def __post_init__(self):
        if self.alpha_dense < 0 or self.alpha_sparse < 0:
            raise ValidationError("fusion weights must be non-negative")
        if self.alpha_dense == 0 and self.alpha_sparse == 0:
            raise ValidationError("fusion weights must not both be zero")
        if self.k_rrf <= 0:
            raise ValidationError(f"k_rrf must be positive, got {self.k_rrf}", field="k_rrf")
        if self.candidate_pool < 1:
            raise ValidationError("candidate_pool must be >= 1", field="candidate_pool")
        if not 1 <= self.final_k <= self.candidate_pool:
            raise ValidationError(
                f"final_k must be in 1..candidate_pool, got {self.final_k}", field="final_k"
            )
        if not self.dense_enabled and not self.sparse_enabled:
            raise ValidationError("at least one retriever must stay enabled")

    @property
    def hybrid_enabled(self) -> bool:
        return self.dense_enabled and self.sparse_enabled


@dataclass
class RetrievalCandidate:
    """One chunk with its per-stage score quadruple.

    Ranks are 1-based; a rank of ``None`` means the chunk was absent from that
    retriever's list (and contributed nothing to the fused score).
    """

    chunk_id: str
    dense_rank: int | None = None
    sparse_rank: int | None = None
    dense_score: float | None = None
    sparse_score: float | None = None
    rrf_score: float = 0.0
    rerank_score: float | None = None


@dataclass(frozen=True)
class StageTimings:
    """Wall-time milliseconds per retrieval stage; total covers the whole call."""

    dense_ms: float = 0.0
    sparse_ms: float = 0.0
    fuse_ms: float = 0.0
    rerank_ms: float = 0.0
    total_ms: float = 0.0

    def __post_init__(self):
        for name in ("dense_ms", "sparse_ms", "fuse_ms", "rerank_ms", "total_ms"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    def as_dict(self) -> dict[str, float]:
        return {
            "dense_ms": self.dense_ms,
            "sparse_ms": self.sparse_ms,
            "fuse_ms": self.fuse_ms,
            "rerank_ms": self.rerank_ms,
            "total_ms": self.total_ms,
        }


class RerankScorer(Protocol):
    def __call__(self, query: str, chunk_text: str) -> float: ...


class TokenOverlapScorer:
    """Deterministic built-in scorer: size of the shared distinct-token set."""

    def __init__(self, dictionary: DomainDictionary = EMPTY_DICTIONARY):
        self.dictionary = dictionary

    def __call__(self, query: str, chunk_text: str) -> float:
        q = set(tokenize(query, self.dictionary))
        return float(len(q & set(tokenize(chunk_text, self.dictionary))))


def rrf_fuse(
    dense: Sequence[str],
    sparse: Sequence[str],
    cfg: FusionConfig = FusionConfig(),
) -> list[RetrievalCandidate]:
    """Fuse two ranked id lists into candidates ordered by weighted RRF score.

    Ties break by ascending chunk_id; output is the id union truncated to
    ``cfg.candidate_pool``.
    """
    dense_ranks = _ranks_of(dense, "dense")
    sparse_ranks = _ranks_of(sparse, "sparse")
    fused: list[RetrievalCandidate] = []
    for chunk_id in set(dense_ranks) | set(sparse_ranks):
        dr = dense_ranks.get(chunk_id)
        sr = sparse_ranks.get(chunk_id)
        score = 0.0
        if dr is not None:
            score += cfg.alpha_dense / (cfg.k_rrf + dr)
        if sr is not None:
            score += cfg.alpha_sparse / (cfg.k_rrf + sr)
        fused.append(
            RetrievalCandidate(chunk_id=chunk_id, dense_rank=dr, sparse_rank=sr, rrf_score=score)
        )
    fused.sort(key=lambda c: (-c.rrf_score, c.chunk_id))
    return fused[: cfg.candidate_pool]


def _ranks_of(ids: Sequence[str], label: str) -> dict[str, int]:
    ranks: dict[str, int] = {}
    for i, chunk_id in enumerate(ids, start=1):
        if chunk_id in ranks:
            raise DuplicateIdError(f"{label} ranking", chunk_id)
        ranks[chunk_id] = i
    return ranks


def rerank(
    candidates: list[RetrievalCandidate],
    query: str,
    scorer: RerankScorer,
    texts: Mapping[str, str],
) -> list[RetrievalCandidate]:
    """Re-order candidates by descending scorer output; ties keep fused order.

    Returns a permutation of the input (nothing added, nothing dropped) with
    ``rerank_score`` populated on every candidate. A scorer exception is
    wrapped in :class:`ScorerError` naming the failing chunk.
    """
    scored: list[RetrievalCandidate] = []
    for cand in candidates:
        try:
            value = float(scorer(query, texts[cand.chunk_id]))
        except Exception as exc:
            raise ScorerError(str(exc), chunk_id=cand.chunk_id) from exc
        scored.append(replace(cand, rerank_score=value))
    scored.sort(key=lambda c: -c.rerank_score)  # stable: ties keep prior order
    return scored


def hybrid_search(
    query: str,
    lexical: InvertedIndex,
    vectors: HnswGraph,
    provider: EmbeddingProvider,
    cfg: FusionConfig = FusionConfig(),
    *,
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
    bm25: Bm25Params = Bm25Params(),
    texts: Mapping[str, str] | None = None,
    scorer: RerankScorer | None = None,
    query_vector: np.ndarray | None = None,
) -> tuple[list[RetrievalCandidate], StageTimings]:
    """Run the full retrieval pipeline for one query.

    Dense and sparse retrievers each fetch ``cfg.candidate_pool`` candidates
    (subject to the ablation toggles), the lists fuse by weighted RRF, and the
    pool is optionally re-ranked before truncation to ``cfg.final_k``.
    ``texts`` maps chunk ids to their text and is required when re-ranking.
    """
    if not query or not query.strip():
        raise ValidationError("query must be non-empty", field="query")
    t_start = time.perf_counter()

    dense_pairs: list[tuple[str, float]] = []
    dense_ms = 0.0
    if cfg.dense_enabled:
        t0 = time.perf_counter()
        qvec = query_vector if query_vector is not None else embed(query, provider)
        dense_pairs = vectors.search(qvec, cfg.candidate_pool)
        dense_ms = (time.perf_counter() - t0) * 1000.0

    sparse_pairs: list[tuple[str, float]] = []
    sparse_ms = 0.0
    if cfg.sparse_enabled:
        t0 = time.perf_counter()
        sparse_pairs = search_sparse(query, lexical, dictionary, bm25, cfg.candidate_pool)
        sparse_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    fused = rrf_fuse([cid for cid, _ in dense_pairs], [cid for cid, _ in sparse_pairs], cfg)
    dense_scores = dict(dense_pairs)
    sparse_scores = dict(sparse_pairs)
    for cand in fused:
        cand.dense_score = dense_scores.get(cand.chunk_id)
        cand.sparse_score = sparse_scores.get(cand.chunk_id)
    fuse_ms = (time.perf_counter() - t0) * 1000.0

    rerank_ms = 0.0
    if cfg.rerank_enabled:
        if texts is None:
            raise ValidationError("rerank_enabled requires chunk texts", field="texts")
        t0 = time.perf_counter()
        active_scorer = scorer if scorer is not None else TokenOverlapScorer(dictionary)
        try:
            fused = rerank(fused, query, active_scorer, texts)
        except ScorerError:
            if not cfg.rerank_fallback:
                raise
        rerank_ms = (time.perf_counter() - t0) * 1000.0

    total_ms = (time.perf_counter() - t_start) * 1000.0
    timings = StageTimings(
        dense_ms=dense_ms,
        sparse_ms=sparse_ms,
        fuse_ms=fuse_ms,
        rerank_ms=rerank_ms,
        total_ms=total_ms,
    )
    return fused[: cfg.final_k], timings


def candidate_to_dict(cand: RetrievalCandidate) -> dict:
    return {
        "chunk_id": cand.chunk_id,
        "dense_rank": cand.dense_rank,
        "sparse_rank": cand.sparse_rank,
        "dense_score": cand.dense_score,
        "sparse_score": cand.sparse_score,
        "rrf_score": cand.rrf_score,
        "rerank_score": cand.rerank_score,
    }


def candidate_from_dict(data: dict) -> RetrievalCandidate:
    return RetrievalCandidate(
        chunk_id=data["chunk_id"],
        dense_rank=data.get("dense_rank"),
        sparse_rank=data.get("sparse_rank"),
        dense_score=data.get("dense_score"),
        sparse_score=data.get("sparse_score"),
        rrf_score=data.get("rrf_score", 0.0),
        rerank_score=data.get("rerank_score"),
    )


def write_run_file(
    results: Mapping[str, Sequence[RetrievalCandidate]], path: str | Path
) -> None:
    """Write ranked results as tab-separated run lines, one candidate per line.

    Columns: query_id, chunk_id, rank, score, then a stage-score breakdown.
    The first four columns are what the evaluation harness consumes.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for query_id in results:
            for rank, cand in enumerate(results[query_id], start=1):
                score = cand.rerank_score if cand.rerank_score is not None else cand.rrf_score
                breakdown = json.dumps(candidate_to_dict(cand), sort_keys=True)
                fh.write(f"{query_id}\t{cand.chunk_id}\t{rank}\t{score:.6f}\t{breakdown}\n")
