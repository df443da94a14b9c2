"""End-to-end wiring: ingest -> index -> query -> provenance, driven by one config.

Both the command line and the HTTP service call this facade, so retrieval
results for a given query and configuration are identical regardless of the
front door.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from . import embedding as emb
from .config import SystemConfig
from .errors import ConfigError, ReqragError
from .fusion import (
    FusionConfig,
    RetrievalCandidate,
    StageTimings,
    TokenOverlapScorer,
    hybrid_search,
)
from .hnsw import HnswGraph, build_graph, load_graph, save_graph
from .ingest import (
    Chunk,
    IngestReport,
    chunk_document,
    chunk_to_dict,
    ingest_corpus,
    load_chunk_store,
    parse_structured_document,
    write_chunk_store,
)
from .lexical import InvertedIndex, build_index, load_index, save_index
from .orchestrator import (
    LlmOrchestrator,
    MockLlmProvider,
    RemoteLlmProvider,
    build_prompt,
)
from .provenance import ProvenanceRecord, ProvenanceStore, assemble_provenance, verify_record


@dataclass
class QueryOutcome:
    """Everything one query produced, for printing or serializing."""

    query: str
    candidates: list[RetrievalCandidate]
    timings: StageTimings
    answer_text: str | None = None
    provenance_id: str | None = None
    tier_id: int | None = None
    provider_id: str | None = None
    dry_run: bool = False


def _make_embedding_provider(config: SystemConfig):
    spec = config.embedding
    if spec.provider == "hashed-bag":
        return emb.HashedBagProvider(model_id=spec.model_id)
    if spec.provider == "synonym-hash":
        return emb.SynonymHashProvider(dict(spec.synonyms))
    if spec.provider == "remote":
        descriptor = emb.ProviderDescriptor(provider_id="remote", model_id=spec.model_id)
        return emb.RemoteEmbeddingProvider(
            descriptor, endpoint=spec.endpoint, api_key=spec.api_key or None
        )
    raise ConfigError(f"unknown embedding provider kind: {spec.provider!r}")


def _make_llm_providers(config: SystemConfig) -> dict:
    """Instantiate configured providers; tiers without explicit config get mocks."""
    providers: dict = {}
    for provider_id, spec in config.providers.items():
        if spec.kind == "mock":
            providers[provider_id] = MockLlmProvider(provider_id, spec.model_id or provider_id)
        elif spec.kind == "remote":
            providers[provider_id] = RemoteLlmProvider(
                provider_id,
                spec.model_id,
                endpoint=spec.endpoint,
                api_key=spec.api_key or None,
            )
        else:
            raise ConfigError(f"unknown provider kind for {provider_id!r}: {spec.kind!r}")
    for tier in config.routing.tiers:
        for provider_id in (tier.provider_id, *tier.fallback_chain):
            if provider_id not in providers:
                providers[provider_id] = MockLlmProvider(provider_id, tier.model_id)
    return providers


class RagSystem:
    """One configured instance of the whole pipeline."""

    def __init__(self, config: SystemConfig | None = None):
        self.config = config or SystemConfig()
        self.embedding_provider = _make_embedding_provider(self.config)
        self.orchestrator = LlmOrchestrator(
            providers=_make_llm_providers(self.config),
            policy=self.config.routing,
            retry=self.config.retry,
            dictionary=self.config.dictionary,
            failure_threshold=self.config.breaker.failure_threshold,
            open_cooldown=self.config.breaker.open_cooldown,
        )
        self._chunks: dict[str, Chunk] | None = None
        self._lexical: InvertedIndex | None = None
        self._graph: HnswGraph | None = None
        self._store: ProvenanceStore | None = None
        self._lock = threading.Lock()
        self.queries_served = 0
        self.dry_run_queries = 0

    # --- ingest -------------------------------------------------------------

    def ingest(self, corpus_path: str | Path | None = None) -> IngestReport:
        """Ingest a corpus file into the chunk store; malformed records are reported, not fatal."""
        path = Path(corpus_path or self.config.paths.corpus)
        report = ingest_corpus(path, self.config.chunking, self.config.dictionary)
        store_path = Path(self.config.paths.chunk_store)
        store_path.parent.mkdir(parents=True, exist_ok=True)
        write_chunk_store(report.chunks, store_path)
        self._chunks = None
        return report

    def stage_record(self, record: dict) -> list[str]:
        """Validate and chunk one document record into the pending area.

        Pending chunks join the live indexes only on an explicit re-index;
        serving indexes are immutable.
        """
        doc = parse_structured_document(json.dumps(record))
        chunks = chunk_document(doc, self.config.chunking, self.config.dictionary)
        pending = Path(self.config.paths.pending_ingest)
        pending.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            with pending.open("a", encoding="utf-8") as fh:
                for chunk in chunks:
                    fh.write(json.dumps(chunk_to_dict(chunk), sort_keys=True) + "\n")
        return [c.chunk_id for c in chunks]

    # --- indexing -------------------------------------------------------------

    def build_indexes(self) -> dict:
        """Build and snapshot the enabled indexes over the chunk store.

        Ablation toggles skip the disabled side's snapshot entirely: a
        dense-only config writes no lexical snapshot and vice versa.
        """
        chunks = self.chunks()
        if not chunks:
            raise ReqragError("chunk store is empty; run ingest first")
        stats: dict = {"chunks": len(chunks)}
        if self.config.fusion.sparse_enabled:
            index = build_index(chunks.values(), self.config.dictionary, stopwords=self.config.stopwords)
            save_index(index, self.config.paths.lexical_index)
            self._lexical = index
            stats["lexical_terms"] = len(index.postings)
        if self.config.fusion.dense_enabled:
            vectors = {
                cid: emb.embed(chunk.text, self.embedding_provider)
                for cid, chunk in chunks.items()
            }
            graph = build_graph(vectors, self.config.hnsw, rng_seed=self.config.vector_seed)
            save_graph(graph, self.config.paths.vector_index)
            self._graph = graph
            stats["vectors"] = len(graph)
        return stats

    # --- lazy loading -----------------------------------------------------------

    def chunks(self) -> dict[str, Chunk]:
        if self._chunks is None:
            path = Path(self.config.paths.chunk_store)
            if not path.exists():
                raise ReqragError(f"chunk store not found at {path}; run ingest first")
            self._chunks = {c.chunk_id: c for c in load_chunk_store(path)}
        return self._chunks

    def lexical_index(self) -> InvertedIndex:
        if self._lexical is None:
            path = Path(self.config.paths.lexical_index)
            if not path.exists():
                raise ReqragError(f"lexical index not found at {path}; run index first")
            self._lexical = load_index(path)
        return self._lexical

    def vector_index(self) -> HnswGraph:
        if self._graph is None:
            path = Path(self.config.paths.vector_index)
            if not path.exists():
                raise ReqragError(f"vector index not found at {path}; run index first")
            self._graph = load_graph(path)
        return self._graph

    def provenance_store(self) -> ProvenanceStore:
        if self._store is None:
            path = Path(self.config.paths.provenance_store)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._store = ProvenanceStore(path)
        return self._store

    # --- querying ----------------------------------------------------------------

    def effective_fusion(
        self,
        *,
        rerank: bool | None = None,
        sparse_only: bool = False,
        dense_only: bool = False,
    ) -> FusionConfig:
        """Apply per-call flags over the configured fusion settings (flag > config)."""
        cfg = self.config.fusion
        if sparse_only and dense_only:
            raise ConfigError("sparse_only and dense_only are mutually exclusive")
        dense_enabled = cfg.dense_enabled and not sparse_only
        sparse_enabled = cfg.sparse_enabled and not dense_only
        return FusionConfig(
            alpha_dense=cfg.alpha_dense,
            alpha_sparse=cfg.alpha_sparse,
            k_rrf=cfg.k_rrf,
            candidate_pool=cfg.candidate_pool,
            final_k=cfg.final_k,
            rerank_enabled=cfg.rerank_enabled if rerank is None else rerank,
            dense_enabled=dense_enabled,
            sparse_enabled=sparse_enabled,
            rerank_fallback=cfg.rerank_fallback,
        )

    def retrieve(
        self, query: str, fusion_cfg: FusionConfig | None = None
    ) -> tuple[list[RetrievalCandidate], StageTimings]:
        cfg = fusion_cfg or self.config.fusion
        chunks = self.chunks()
        texts = {cid: c.text for cid, c in chunks.items()}
        lexical = self.lexical_index() if cfg.sparse_enabled else InvertedIndex()
        graph = self.vector_index() if cfg.dense_enabled else HnswGraph(self.config.hnsw)
        return hybrid_search(
            query,
            lexical,
            graph,
            self.embedding_provider,
            cfg,
            dictionary=self.config.dictionary,
            bm25=self.config.bm25,
            texts=texts,
            scorer=TokenOverlapScorer(self.config.dictionary),
        )

    def query(
        self,
        query: str,
        *,
        dry_run: bool = False,
        rerank: bool | None = None,
        sparse_only: bool = False,
        dense_only: bool = False,
        query_id: str = "",
    ) -> QueryOutcome:
        """Retrieve, optionally generate, and persist provenance before returning.

        ``dry_run`` stops after retrieval: no generation call, no ledger entry,
        no provenance record.
        """
        cfg = self.effective_fusion(rerank=rerank, sparse_only=sparse_only, dense_only=dense_only)
        candidates, timings = self.retrieve(query, cfg)
        if dry_run:
            with self._lock:
                self.dry_run_queries += 1
            return QueryOutcome(query=query, candidates=candidates, timings=timings, dry_run=True)

        chunks = self.chunks()
        context = [chunks[c.chunk_id].text for c in candidates]
        result, decision = self.orchestrator.answer(query, context, query_id=query_id)
        record = assemble_provenance(
            query,
            candidates,
            result,
            chunks,
            prompt=build_prompt(query, context),
            store_prompt=self.config.provenance.store_prompt,
            coverage_threshold=self.config.provenance.coverage_threshold,
        )
        self.provenance_store().append(record)
        self._append_ledger_line()
        with self._lock:
            self.queries_served += 1
        return QueryOutcome(
            query=query,
            candidates=candidates,
            timings=timings,
            answer_text=result.text,
            provenance_id=record.record_id,
            tier_id=decision.tier_id,
            provider_id=result.provider_id,
        )

    def _append_ledger_line(self) -> None:
        entries = self.orchestrator.ledger.export_lines()
        if not entries:
            return
        path = Path(self.config.paths.cost_ledger)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            with path.open("a", encoding="utf-8") as fh:
                fh.write(entries[-1] + "\n")

    # --- provenance -------------------------------------------------------------

    def get_provenance(self, record_id: str) -> ProvenanceRecord | None:
        return self.provenance_store().get(record_id)

    def verify_provenance(self, record_id: str):
        record = self.get_provenance(record_id)
        if record is None:
            raise ReqragError(f"provenance record not found: {record_id}")
        return verify_record(record, self.chunks())

    # --- service metrics ----------------------------------------------------------

    def metrics(self) -> dict:
        ledger = self.orchestrator.ledger
        return {
            "queries_served": self.queries_served,
            "dry_run_queries": self.dry_run_queries,
            "per_tier_counts": {str(k): v for k, v in ledger.counts_by_tier().items()},
            "ledger_totals": {str(k): str(v) for k, v in ledger.totals_by_tier().items()},
            "ledger_total": str(ledger.total()),
            "breaker_states": {
                pid: breaker.snapshot() for pid, breaker in self.orchestrator.breakers.items()
            },
        }
