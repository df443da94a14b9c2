"""Answer traceability: assemble, persist, and verify per-answer provenance bundles.

Every generated answer gets a record tying it to the exact chunks that
grounded it, the scores those chunks earned at each retrieval stage, the
generation metadata (provider, tokens, attempts), and confidence measures.
Records round-trip losslessly through JSON and live in an append-only store
so a record referenced once can always be produced again.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import uuid
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ValidationError
from .fusion import RetrievalCandidate
from .ingest import Chunk
from .lexical import tokenize
from .orchestrator import GenerationResult

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class SourceAttribution:
    """Pointer from an answer back to one indexed chunk."""

    doc_id: str
    version_timestamp: str
    section_path: tuple[str, ...]
    chunk_id: str
    block_range: tuple[int, int]


@dataclass(frozen=True)
class ScoreQuadruple:
    """Per-stage retrieval scores for one attribution; absent stages are None."""

    dense_score: float | None = None
    sparse_score: float | None = None
    rrf_score: float | None = None
    rerank_score: float | None = None


@dataclass(frozen=True)
class ConfidenceMetrics:
    """Answer confidence signals; absent metrics are None, present ones in [0, 1]."""

    retrieval_coverage: float = 0.0
    self_assessed_confidence: float | None = None
    multi_attempt_consistency: float | None = None

    def __post_init__(self):
        for name in ("retrieval_coverage", "self_assessed_confidence", "multi_attempt_consistency"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class GenerationSummary:
    """Compact copy of the generation outcome embedded in a provenance record."""

    provider_id: str
    model_id: str
    tokens_in: int
    tokens_out: int
    attempts: int
    started_at: float
    finished_at: float
    prompt_digest: str
    prompt_text: str | None = None


@dataclass(frozen=True)
class ProvenanceRecord:
    """The full traceability bundle attached to one answer."""

    record_id: str
    query: str
    answer_text: str
    attributions: tuple[SourceAttribution, ...]
    retrieval_scores: tuple[ScoreQuadruple, ...]
    generation: GenerationSummary
    confidence: ConfidenceMetrics
    created_at: float
    ungrounded: bool = False

    def __post_init__(self):
        if len(self.attributions) != len(self.retrieval_scores):
            raise ValidationError(
                "retrieval_scores must align one-to-one with attributions "
                f"({len(self.retrieval_scores)} vs {len(self.attributions)})"
            )


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def sentence_overlap(sentence: str, chunk_text: str) -> float:
    """Fraction of the sentence's distinct tokens found in the chunk."""
    sent_tokens = set(tokenize(sentence))
    if not sent_tokens:
        return 0.0
    return len(sent_tokens & set(tokenize(chunk_text))) / len(sent_tokens)


def retrieval_coverage(
    answer_text: str, chunk_texts: Sequence[str], threshold: float = 0.3
) -> float:
    """Fraction of answer sentences whose best chunk overlap exceeds ``threshold``."""
    sentences = [s for s in _SENTENCE_SPLIT.split(answer_text) if s.strip()]
    if not sentences or not chunk_texts:
        return 0.0
    covered = sum(
        1
        for s in sentences
        if max(sentence_overlap(s, c) for c in chunk_texts) > threshold
    )
    return covered / len(sentences)


def multi_attempt_consistency(texts: Sequence[str]) -> float | None:
    """Mean pairwise Jaccard similarity over distinct-token sets; None below 2 texts."""
    if len(texts) < 2:
        return None
    token_sets = [set(tokenize(t)) for t in texts]
    sims = []
    for a, b in combinations(token_sets, 2):
        union = a | b
        sims.append(len(a & b) / len(union) if union else 1.0)
    return sum(sims) / len(sims)


def assemble_provenance(
    query: str,
    candidates: Sequence[RetrievalCandidate],
    generation: GenerationResult,
    chunks: Mapping[str, Chunk],
    *,
    prompt: str = "",
    store_prompt: bool = False,
    coverage_threshold: float = 0.3,
    regeneration_texts: Sequence[str] = (),
    self_assessed_confidence: float | None = None,
    record_id: str | None = None,
    created_at: float | None = None,
) -> ProvenanceRecord:
    """Build the provenance record for one answered query.

    One attribution is emitted per candidate, with its stage scores copied
    verbatim. A query answered with zero candidates yields an empty
    attribution list, zero coverage, and the ``ungrounded`` flag. The prompt
    is stored as a sha256 digest; the full text only when ``store_prompt``.
    """
    attributions: list[SourceAttribution] = []
    scores: list[ScoreQuadruple] = []
    chunk_texts: list[str] = []
    for cand in candidates:
        chunk = chunks[cand.chunk_id]
        attributions.append(
            SourceAttribution(
                doc_id=chunk.doc_id,
                version_timestamp=(
                    chunk.metadata.version_timestamp if chunk.metadata else ""
                ),
                section_path=chunk.section_path,
                chunk_id=chunk.chunk_id,
                block_range=chunk.block_range,
            )
        )
        scores.append(
            ScoreQuadruple(
                dense_score=cand.dense_score,
                sparse_score=cand.sparse_score,
                rrf_score=cand.rrf_score,
                rerank_score=cand.rerank_score,
            )
        )
        chunk_texts.append(chunk.text)

    confidence = ConfidenceMetrics(
        retrieval_coverage=retrieval_coverage(generation.text, chunk_texts, coverage_threshold),
        self_assessed_confidence=self_assessed_confidence,
        multi_attempt_consistency=multi_attempt_consistency(regeneration_texts),
    )
    return ProvenanceRecord(
        record_id=record_id or uuid.uuid4().hex,
        query=query,
        answer_text=generation.text,
        attributions=tuple(attributions),
        retrieval_scores=tuple(scores),
        generation=GenerationSummary(
            provider_id=generation.provider_id,
            model_id=generation.model_id,
            tokens_in=generation.tokens_in,
            tokens_out=generation.tokens_out,
            attempts=generation.attempts,
            started_at=generation.started_at,
            finished_at=generation.finished_at,
            prompt_digest=prompt_digest(prompt),
            prompt_text=prompt if store_prompt else None,
        ),
        confidence=confidence,
        created_at=created_at if created_at is not None else generation.finished_at,
        ungrounded=not attributions,
    )


@dataclass(frozen=True)
class AttributionFailure:
    chunk_id: str
    reason: str  # "missing" or "section_path_mismatch"
    recorded_path: tuple[str, ...] = ()
    current_path: tuple[str, ...] = ()


@dataclass(frozen=True)
class VerificationReport:
    record_id: str
    checked: int
    failures: tuple[AttributionFailure, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def verify_record(record: ProvenanceRecord, corpus: Mapping[str, Chunk]) -> VerificationReport:
    """Check every attribution against the current corpus.

    An attribution fails when its chunk no longer exists or when the stored
    section path disagrees with the chunk's current one; the report carries
    both values so drift is diagnosable.
    """
    failures: list[AttributionFailure] = []
    for attr in record.attributions:
        chunk = corpus.get(attr.chunk_id)
        if chunk is None:
            failures.append(AttributionFailure(chunk_id=attr.chunk_id, reason="missing"))
        elif tuple(chunk.section_path) != tuple(attr.section_path):
            failures.append(
                AttributionFailure(
                    chunk_id=attr.chunk_id,
                    reason="section_path_mismatch",
                    recorded_path=tuple(attr.section_path),
                    current_path=tuple(chunk.section_path),
                )
            )
    return VerificationReport(
        record_id=record.record_id, checked=len(record.attributions), failures=tuple(failures)
    )


# --- serialization ------------------------------------------------------------

def record_to_dict(record: ProvenanceRecord) -> dict:
    return {
        "record_id": record.record_id,
        "query": record.query,
        "answer_text": record.answer_text,
        "attributions": [
            {
                "doc_id": a.doc_id,
                "version_timestamp": a.version_timestamp,
                "section_path": list(a.section_path),
                "chunk_id": a.chunk_id,
                "block_range": list(a.block_range),
            }
            for a in record.attributions
        ],
        "retrieval_scores": [
            {
                "dense_score": s.dense_score,
                "sparse_score": s.sparse_score,
                "rrf_score": s.rrf_score,
                "rerank_score": s.rerank_score,
            }
            for s in record.retrieval_scores
        ],
        "generation": {
            "provider_id": record.generation.provider_id,
            "model_id": record.generation.model_id,
            "tokens_in": record.generation.tokens_in,
            "tokens_out": record.generation.tokens_out,
            "attempts": record.generation.attempts,
            "started_at": record.generation.started_at,
            "finished_at": record.generation.finished_at,
            "prompt_digest": record.generation.prompt_digest,
            "prompt_text": record.generation.prompt_text,
        },
        "confidence": {
            "retrieval_coverage": record.confidence.retrieval_coverage,
            "self_assessed_confidence": record.confidence.self_assessed_confidence,
            "multi_attempt_consistency": record.confidence.multi_attempt_consistency,
        },
        "created_at": record.created_at,
        "ungrounded": record.ungrounded,
    }


def record_from_dict(data: dict) -> ProvenanceRecord:
    gen = data["generation"]
    conf = data["confidence"]
    return ProvenanceRecord(
        record_id=data["record_id"],
        query=data["query"],
        answer_text=data["answer_text"],
        attributions=tuple(
            SourceAttribution(
                doc_id=a["doc_id"],
                version_timestamp=a["version_timestamp"],
                section_path=tuple(a["section_path"]),
                chunk_id=a["chunk_id"],
                block_range=(a["block_range"][0], a["block_range"][1]),
            )
            for a in data["attributions"]
        ),
        retrieval_scores=tuple(
            ScoreQuadruple(
                dense_score=s["dense_score"],
                sparse_score=s["sparse_score"],
                rrf_score=s["rrf_score"],
                rerank_score=s["rerank_score"],
            )
            for s in data["retrieval_scores"]
        ),
        generation=GenerationSummary(
            provider_id=gen["provider_id"],
            model_id=gen["model_id"],
            tokens_in=gen["tokens_in"],
            tokens_out=gen["tokens_out"],
            attempts=gen["attempts"],
            started_at=gen["started_at"],
            finished_at=gen["finished_at"],
            prompt_digest=gen["prompt_digest"],
            prompt_text=gen.get("prompt_text"),
        ),
        confidence=ConfidenceMetrics(
            retrieval_coverage=conf["retrieval_coverage"],
            self_assessed_confidence=conf.get("self_assessed_confidence"),
            multi_attempt_consistency=conf.get("multi_attempt_consistency"),
        ),
        created_at=data["created_at"],
        ungrounded=data.get("ungrounded", False),
    )


class ProvenanceStore:
    """Append-only JSONL store of provenance records, indexed by record_id.

    Record ids are never reused; appending a known id is an error. Appends
    serialize through a lock; reads go through the in-memory index.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._offsets: dict[str, ProvenanceRecord] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        record = record_from_dict(json.loads(line))
                        self._offsets[record.record_id] = record

    def append(self, record: ProvenanceRecord) -> str:
        with self._lock:
            if record.record_id in self._offsets:
                raise ValidationError(f"record_id already stored: {record.record_id}")
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record_to_dict(record), sort_keys=True, ensure_ascii=False) + "\n")
            self._offsets[record.record_id] = record
        return record.record_id

    def get(self, record_id: str) -> ProvenanceRecord | None:
        with self._lock:
            return self._offsets.get(record_id)

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._offsets)

    def __len__(self) -> int:
        with self._lock:
            return len(self._offsets)
