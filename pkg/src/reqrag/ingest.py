"""Corpus ingestion: structured records -> validated, chunked, metadata-rich granules.

Input is one JSON record per line, each describing a document as an ordered
list of already-classified blocks (heading / paragraph / table_row). Binary
format parsing and OCR live upstream; this module owns validation, boundary-
respecting chunking, and metadata enrichment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import UnknownDocumentError, ValidationError
from .lexical import EMPTY_DICTIONARY, DomainDictionary, tokenize

BLOCK_KINDS = ("heading", "paragraph", "table_row")


@dataclass(frozen=True)
class Block:
    """One pre-classified unit of document text."""

    kind: str
    text: str
    level: int | None = None  # headings only, 1..6


@dataclass(frozen=True)
class ChunkMetadata:
    """Provenance and filtering metadata carried by every chunk.

    ``doc_id`` and ``version_timestamp`` are always present; the rest is
    optional and typically inherited from the document-level registry.
    """

    doc_id: str
    version_timestamp: str
    category: str | None = None
    compliance_level: str | None = None
    supplier_tags: frozenset[str] = frozenset()
    year: int | None = None
    section_path: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.doc_id:
            raise ValidationError("metadata requires doc_id", field="doc_id")
        if not self.version_timestamp:
            raise ValidationError("metadata requires version_timestamp", field="version_timestamp")
        if self.year is not None and not 1990 <= self.year <= 2100:
            raise ValidationError(f"year out of range 1990..2100: {self.year}", field="year")
        object.__setattr__(self, "supplier_tags", frozenset(self.supplier_tags))
        object.__setattr__(self, "section_path", tuple(self.section_path))


@dataclass(frozen=True)
class Document:
    """A validated source document: ordered blocks plus doc-level metadata defaults."""

    doc_id: str
    version_timestamp: date
    title: str
    blocks: tuple[Block, ...]
    source_tag: str = ""
    metadata: ChunkMetadata | None = None


@dataclass(frozen=True)
class Chunk:
    """The unit of indexing: a contiguous block span that never crosses a heading."""

    chunk_id: str
    doc_id: str
    section_path: tuple[str, ...]
    block_range: tuple[int, int]  # [start, end) into the parent document's blocks
    token_count: int
    text: str
    metadata: ChunkMetadata | None = None


@dataclass(frozen=True)
class ChunkingConfig:
    """Token-window targets for chunk packing."""

    target_tokens: int = 384
    min_tokens: int = 64
    max_tokens: int = 768

    def __post_init__(self):
        if not 0 < self.min_tokens <= self.target_tokens <= self.max_tokens:
            raise ValidationError(
                "require 0 < min_tokens <= target_tokens <= max_tokens, got "
                f"min={self.min_tokens} target={self.target_tokens} max={self.max_tokens}"
            )


def _require(record: dict, key: str, offset: int | None):
    if key not in record:
        raise ValidationError(f"missing required field {key!r}", field=key, offset=offset)
    return record[key]


def _string_field(record: dict, key: str, offset: int | None, *, required: bool) -> str:
    if required:
        value = _require(record, key, offset)
    else:
        value = record.get(key, "")
    if not isinstance(value, str):
        raise ValidationError(f"field {key!r} must be a string", field=key, offset=offset)
    return value


def _parse_metadata(
    raw: object, doc_id: str, version: date, offset: int | None
) -> ChunkMetadata:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError("metadata must be an object", field="metadata", offset=offset)
    known = {"category", "compliance_level", "supplier_tags", "year"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(
            f"unknown metadata keys: {sorted(unknown)}", field="metadata", offset=offset
        )
    category = raw.get("category")
    if category is not None and not isinstance(category, str):
        raise ValidationError("metadata.category must be a string", field="category", offset=offset)
    compliance = raw.get("compliance_level")
    if compliance is not None and not isinstance(compliance, str):
        raise ValidationError(
            "metadata.compliance_level must be a string", field="compliance_level", offset=offset
        )
    tags = raw.get("supplier_tags", [])
    if not isinstance(tags, (list, tuple)) or not all(isinstance(t, str) for t in tags):
        raise ValidationError(
            "metadata.supplier_tags must be a list of strings", field="supplier_tags", offset=offset
        )
    year = raw.get("year", version.year)
    if not isinstance(year, int) or isinstance(year, bool):
        raise ValidationError("metadata.year must be an integer", field="year", offset=offset)
    try:
        return ChunkMetadata(
            doc_id=doc_id,
            version_timestamp=version.isoformat(),
            category=category,
            compliance_level=compliance,
            supplier_tags=frozenset(tags),
            year=year,
        )
    except ValidationError as exc:
        raise ValidationError(str(exc), field=exc.field, offset=offset) from exc


def parse_structured_document(raw: str, offset: int | None = None) -> Document:
    """Parse and validate one corpus JSONL record.

    ``offset`` is the record's position in its source file and is attached to
    every validation error so malformed corpora produce actionable reports.
    Every block must contain at least one alphanumeric character; records
    failing any check raise :class:`ValidationError`, never crash.
    """
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc.msg}", offset=offset) from exc
    if not isinstance(record, dict):
        raise ValidationError("record must be a JSON object", offset=offset)

    doc_id = _string_field(record, "doc_id", offset, required=True)
    if not doc_id:
        raise ValidationError("doc_id must be non-empty", field="doc_id", offset=offset)

    raw_ts = _string_field(record, "version_timestamp", offset, required=True)
    try:
        version = date.fromisoformat(raw_ts)
    except ValueError as exc:
        raise ValidationError(
            f"version_timestamp is not an ISO date: {raw_ts!r}",
            field="version_timestamp",
            offset=offset,
        ) from exc

    title = _string_field(record, "title", offset, required=False)
    source_tag = _string_field(record, "source_tag", offset, required=False)

    raw_blocks = record.get("blocks", [])
    if not isinstance(raw_blocks, list):
        raise ValidationError("blocks must be an array", field="blocks", offset=offset)
    blocks: list[Block] = []
    for i, rb in enumerate(raw_blocks):
        if not isinstance(rb, dict):
            raise ValidationError(f"block {i} must be an object", field="blocks", offset=offset)
        kind = rb.get("kind")
        if kind not in BLOCK_KINDS:
            raise ValidationError(
                f"block {i} has unknown kind {kind!r}", field="blocks", offset=offset
            )
        text = rb.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ValidationError(
                f"block {i} text must be a non-empty string", field="blocks", offset=offset
            )
        if not any(c.isalnum() for c in text):
            raise ValidationError(
                f"block {i} text contains no indexable characters", field="blocks", offset=offset
            )
        level = rb.get("level")
        if kind == "heading":
            if not isinstance(level, int) or isinstance(level, bool) or not 1 <= level <= 6:
                raise ValidationError(
                    f"block {i} heading level must be an integer in 1..6, got {level!r}",
                    field="blocks",
                    offset=offset,
                )
        elif level is not None:
            raise ValidationError(
                f"block {i} of kind {kind!r} must not carry a level", field="blocks", offset=offset
            )
        blocks.append(Block(kind=kind, text=text, level=level if kind == "heading" else None))

    metadata = _parse_metadata(record.get("metadata"), doc_id, version, offset)
    return Document(
        doc_id=doc_id,
        version_timestamp=version,
        title=title,
        blocks=tuple(blocks),
        source_tag=source_tag,
        metadata=metadata,
    )


@dataclass
class _PendingChunk:
    start: int
    end: int
    section_path: tuple[str, ...]
    texts: list[str]
    token_count: int


def semantic_chunk(
    doc: Document,
    cfg: ChunkingConfig = ChunkingConfig(),
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
) -> list[Chunk]:
    """Partition a document's blocks into chunks that respect heading boundaries.

    Blocks are packed greedily toward ``target_tokens``: once a chunk holds
    ``min_tokens``, it closes when adding the next block would land farther
    from the target than stopping here, and it always closes rather than
    exceed ``max_tokens``. Headings always start a new chunk. A trailing
    fragment below ``min_tokens`` merges back into the previous chunk of the
    same section when the result stays within ``max_tokens``; a single
    oversized block becomes one oversized chunk. The chunk list partitions
    the block sequence exactly: no loss, no overlap.
    """
    pending: list[_PendingChunk] = []
    section_start = 0  # index into `pending` of the current section's first chunk
    heading_stack: list[str] = []
    current: _PendingChunk | None = None

    def flush():
        nonlocal current
        if current is not None:
            pending.append(current)
            current = None

    def close_section():
        nonlocal section_start
        flush()
        if len(pending) - section_start >= 2:
            last, prev = pending[-1], pending[-2]
            if (
                last.token_count < cfg.min_tokens
                and prev.section_path == last.section_path
                and prev.token_count + last.token_count <= cfg.max_tokens
            ):
                prev.end = last.end
                prev.texts.extend(last.texts)
                prev.token_count += last.token_count
                pending.pop()
        section_start = len(pending)

    for idx, block in enumerate(doc.blocks):
        tokens = len(tokenize(block.text, dictionary))
        if block.kind == "heading":
            close_section()
            del heading_stack[block.level - 1 :]
            heading_stack.append(block.text.strip())
            current = _PendingChunk(idx, idx + 1, tuple(heading_stack), [block.text], tokens)
            continue
        if current is None:
            current = _PendingChunk(idx, idx + 1, tuple(heading_stack), [block.text], tokens)
            continue
        overflows_max = current.token_count + tokens > cfg.max_tokens
        # Midpoint rule: |cur + t - target| > |cur - target| iff cur + t/2 > target.
        drifts_past_target = (
            current.token_count >= cfg.min_tokens
            and current.token_count + tokens / 2 > cfg.target_tokens
        )
        if overflows_max or drifts_past_target:
            flush()
            current = _PendingChunk(idx, idx + 1, tuple(heading_stack), [block.text], tokens)
        else:
            current.end = idx + 1
            current.texts.append(block.text)
            current.token_count += tokens
    close_section()

    return [
        Chunk(
            chunk_id=f"{doc.doc_id}#{i:04d}",
            doc_id=doc.doc_id,
            section_path=p.section_path,
            block_range=(p.start, p.end),
            token_count=p.token_count,
            text="\n".join(p.texts),
        )
        for i, p in enumerate(pending)
    ]


def metadata_registry(documents: Iterable[Document]) -> dict[str, ChunkMetadata]:
    """Per-document metadata defaults keyed by doc_id, for :func:`enrich_metadata`."""
    registry: dict[str, ChunkMetadata] = {}
    for doc in documents:
        meta = doc.metadata or ChunkMetadata(
            doc_id=doc.doc_id,
            version_timestamp=doc.version_timestamp.isoformat(),
            year=doc.version_timestamp.year,
        )
        registry[doc.doc_id] = meta
    return registry


def enrich_metadata(chunk: Chunk, registry: Mapping[str, ChunkMetadata]) -> Chunk:
    """Attach merged metadata to a chunk; explicit per-chunk values win over registry defaults."""
    defaults = registry.get(chunk.doc_id)
    if defaults is None:
        raise UnknownDocumentError(chunk.doc_id)
    own = chunk.metadata
    merged = ChunkMetadata(
        doc_id=chunk.doc_id,
        version_timestamp=(own.version_timestamp if own else defaults.version_timestamp),
        category=(own.category if own and own.category is not None else defaults.category),
        compliance_level=(
            own.compliance_level
            if own and own.compliance_level is not None
            else defaults.compliance_level
        ),
        supplier_tags=(own.supplier_tags if own and own.supplier_tags else defaults.supplier_tags),
        year=(own.year if own and own.year is not None else defaults.year),
        section_path=chunk.section_path,
    )
    return replace(chunk, metadata=merged)


def chunk_document(
    doc: Document,
    cfg: ChunkingConfig = ChunkingConfig(),
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
) -> list[Chunk]:
    """Chunk a document and enrich every chunk from its own metadata defaults."""
    registry = metadata_registry([doc])
    return [enrich_metadata(c, registry) for c in semantic_chunk(doc, cfg, dictionary)]


# --- chunk store serialization -------------------------------------------------

def chunk_to_dict(chunk: Chunk) -> dict:
    meta = chunk.metadata
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "section_path": list(chunk.section_path),
        "block_range": list(chunk.block_range),
        "token_count": chunk.token_count,
        "text": chunk.text,
        "metadata": None
        if meta is None
        else {
            "doc_id": meta.doc_id,
            "version_timestamp": meta.version_timestamp,
            "category": meta.category,
            "compliance_level": meta.compliance_level,
            "supplier_tags": sorted(meta.supplier_tags),
            "year": meta.year,
            "section_path": list(meta.section_path),
        },
    }


def chunk_from_dict(data: dict) -> Chunk:
    meta = data.get("metadata")
    metadata = None
    if meta is not None:
        metadata = ChunkMetadata(
            doc_id=meta["doc_id"],
            version_timestamp=meta["version_timestamp"],
            category=meta.get("category"),
            compliance_level=meta.get("compliance_level"),
            supplier_tags=frozenset(meta.get("supplier_tags", [])),
            year=meta.get("year"),
            section_path=tuple(meta.get("section_path", ())),
        )
    return Chunk(
        chunk_id=data["chunk_id"],
        doc_id=data["doc_id"],
        section_path=tuple(data["section_path"]),
        block_range=(data["block_range"][0], data["block_range"][1]),
        token_count=data["token_count"],
        text=data["text"],
        metadata=metadata,
    )


def write_chunk_store(chunks: Iterable[Chunk], path: str | Path) -> int:
    """Write chunks as JSONL; returns the number written."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk_to_dict(chunk), sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


def load_chunk_store(path: str | Path) -> list[Chunk]:
    path = Path(path)
    chunks = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                chunks.append(chunk_from_dict(json.loads(line)))
    return chunks


@dataclass
class IngestReport:
    """Outcome of ingesting one corpus file."""

    documents: int = 0
    chunks: list[Chunk] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)  # (line number, message)

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    def token_count_summary(self) -> dict[str, float]:
        counts = sorted(c.token_count for c in self.chunks)
        if not counts:
            return {"min": 0, "mean": 0.0, "max": 0}
        return {
            "min": counts[0],
            "mean": sum(counts) / len(counts),
            "max": counts[-1],
        }


def ingest_corpus(
    path: str | Path,
    cfg: ChunkingConfig = ChunkingConfig(),
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
) -> IngestReport:
    """Parse, chunk, and enrich every record of a corpus JSONL file.

    Malformed records are collected as (line, message) pairs; good records are
    still ingested. Blank lines are skipped.
    """
    report = IngestReport()
    seen_ids: set[str] = set()
    for line_no, raw in _numbered_lines(path):
        try:
            doc = parse_structured_document(raw, offset=line_no)
            if doc.doc_id in seen_ids:
                raise ValidationError(
                    f"duplicate doc_id {doc.doc_id!r}", field="doc_id", offset=line_no
                )
            seen_ids.add(doc.doc_id)
            report.chunks.extend(chunk_document(doc, cfg, dictionary))
            report.documents += 1
        except ValidationError as exc:
            report.errors.append((line_no, str(exc)))
    return report


def _numbered_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with Path(path).open("r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                yield i, line
