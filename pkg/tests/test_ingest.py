"""Ingestion tests: parsing validation, chunk packing, metadata, robustness."""

from __future__ import annotations

import json
import random
import statistics
from datetime import date

import pytest

from reqrag.errors import UnknownDocumentError, ValidationError
from reqrag.ingest import (
    Block,
    Chunk,
    ChunkMetadata,
    ChunkingConfig,
    Document,
    chunk_document,
    chunk_from_dict,
    chunk_to_dict,
    enrich_metadata,
    ingest_corpus,
    load_chunk_store,
    metadata_registry,
    parse_structured_document,
    semantic_chunk,
    write_chunk_store,
)


def record(**overrides) -> str:
    base = {
        "doc_id": "DOC-1",
        "version_timestamp": "2023-03-01",
        "title": "Spec",
        "source_tag": "native",
        "blocks": [
            {"kind": "heading", "level": 1, "text": "Scope"},
            {"kind": "paragraph", "text": "The system shall stop on request."},
        ],
        "metadata": {"category": "IT Security", "supplier_tags": ["acme"], "year": 2023},
    }
    base.update(overrides)
    return json.dumps(base)


def make_doc(blocks: list[Block], doc_id: str = "D1") -> Document:
    return Document(
        doc_id=doc_id, version_timestamp=date(2023, 1, 1), title="t", blocks=tuple(blocks)
    )


def words(n: int, tag: str = "w") -> str:
    return " ".join(f"{tag}{i}" for i in range(n))


class TestParse:
    def test_minimal_record_preserves_block_order(self):
        doc = parse_structured_document(record())
        assert [b.kind for b in doc.blocks] == ["heading", "paragraph"]
        assert doc.doc_id == "DOC-1"
        assert doc.version_timestamp == date(2023, 3, 1)

    def test_missing_doc_id_is_validation_error(self):
        raw = json.loads(record())
        del raw["doc_id"]
        with pytest.raises(ValidationError, match="doc_id"):
            parse_structured_document(json.dumps(raw))

    def test_unknown_block_kind_carries_offset(self):
        raw = json.loads(record())
        raw["blocks"][1]["kind"] = "sidebar"
        with pytest.raises(ValidationError) as exc_info:
            parse_structured_document(json.dumps(raw), offset=7)
        assert exc_info.value.offset == 7
        assert "sidebar" in str(exc_info.value)

    def test_heading_hierarchy_reconstructible_to_depth_three(self):
        blocks = [
            {"kind": "heading", "level": 1, "text": "A"},
            {"kind": "paragraph", "text": "top level content here"},
            {"kind": "heading", "level": 2, "text": "A.1"},
            {"kind": "paragraph", "text": "nested content here"},
            {"kind": "heading", "level": 3, "text": "A.1.a"},
            {"kind": "paragraph", "text": "deepest content here"},
        ]
        doc = parse_structured_document(record(blocks=blocks))
        chunks = semantic_chunk(doc)
        paths = [c.section_path for c in chunks]
        assert ("A",) in paths
        assert ("A", "A.1") in paths
        assert ("A", "A.1", "A.1.a") in paths


MALFORMED_RECORDS = [
    "",  # handled upstream as blank; here: invalid JSON
    "{not json",
    '"just a string"',
    "[1, 2, 3]",
    json.dumps({"version_timestamp": "2023-01-01"}),  # no doc_id
    record(doc_id=""),
    record(doc_id=42),
    json.dumps({"doc_id": "D", "title": "no timestamp"}),
    record(version_timestamp="not-a-date"),
    record(version_timestamp="2023-13-45"),
    record(version_timestamp=20230301),
    record(title=123),
    record(source_tag=["x"]),
    record(blocks={"kind": "paragraph"}),
    record(blocks=[{"kind": "paragraph"}]),  # block without text
    record(blocks=[{"kind": "paragraph", "text": ""}]),
    record(blocks=[{"kind": "paragraph", "text": "   "}]),
    record(blocks=[{"kind": "paragraph", "text": "!!! ---"}]),  # no indexable characters
    record(blocks=[{"kind": "sidebar", "text": "x1"}]),
    record(blocks=[{"kind": "heading", "text": "no level"}]),
    record(blocks=[{"kind": "heading", "level": 0, "text": "bad"}]),
    record(blocks=[{"kind": "heading", "level": 7, "text": "bad"}]),
    record(blocks=[{"kind": "heading", "level": "two", "text": "bad"}]),
    record(blocks=[{"kind": "paragraph", "level": 2, "text": "levels only on headings"}]),
    record(blocks=["text"]),
    record(metadata="not a dict"),
    record(metadata={"category": 7}),
    record(metadata={"compliance_level": ["a"]}),
    record(metadata={"supplier_tags": "acme"}),
    record(metadata={"supplier_tags": [1, 2]}),
    record(metadata={"year": "2023"}),
    record(metadata={"year": 1889}),
    record(metadata={"year": 3000}),
    record(metadata={"unexpected": True}),
    record()[: len(record()) // 2],  # truncated record
]


class TestRobustness:
    @pytest.mark.parametrize("raw", MALFORMED_RECORDS, ids=range(len(MALFORMED_RECORDS)))
    def test_malformed_record_yields_structured_error(self, raw):
        with pytest.raises(ValidationError):
            parse_structured_document(raw, offset=1)

    def test_fixture_set_is_large_enough(self):
        assert len(MALFORMED_RECORDS) >= 20

    def test_partial_corpus_ingest_collects_errors(self, tmp_path):
        lines = [record(doc_id=f"G-{i}") for i in range(9)] + [record(doc_id="")]
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text("\n".join(lines))
        report = ingest_corpus(corpus)
        assert report.documents == 9
        assert len(report.errors) == 1
        assert report.errors[0][0] == 10  # line number of the bad record

    def test_duplicate_doc_id_reported(self, tmp_path):
        corpus = tmp_path / "corpus.jsonl"
        corpus.write_text(record() + "\n" + record())
        report = ingest_corpus(corpus)
        assert report.documents == 1
        assert "duplicate" in report.errors[0][1]


class TestChunking:
    def test_empty_document_yields_no_chunks(self):
        assert semantic_chunk(make_doc([])) == []

    def test_single_paragraph_single_chunk(self):
        doc = make_doc([Block(kind="paragraph", text=words(100))])
        chunks = semantic_chunk(doc)
        assert len(chunks) == 1
        assert chunks[0].token_count == 100
        assert chunks[0].block_range == (0, 1)

    def test_section_boundaries_never_crossed_and_oversized_section_splits(self):
        # sections of 300 / 500 / 900 tokens with known per-block counts
        blocks = [Block(kind="heading", text="S1", level=1)]
        blocks += [Block(kind="paragraph", text=words(150, f"a{i}")) for i in range(2)]
        blocks += [Block(kind="heading", text="S2", level=1)]
        blocks += [Block(kind="paragraph", text=words(250, f"b{i}")) for i in range(2)]
        blocks += [Block(kind="heading", text="S3", level=1)]
        blocks += [Block(kind="paragraph", text=words(300, f"c{i}")) for i in range(3)]
        doc = make_doc(blocks)
        chunks = semantic_chunk(doc)
        # boundary respect: one section path per chunk, no chunk spans two sections
        heading_starts = {0: ("S1",), 3: ("S2",), 6: ("S3",)}
        for chunk in chunks:
            start, end = chunk.block_range
            crossed = [i for i in heading_starts if start < i < end]
            assert not crossed, f"chunk {chunk.chunk_id} spans a heading at {crossed}"
        # the 900-token section split at block boundaries into chunks <= 768
        s3_chunks = [c for c in chunks if c.section_path == ("S3",)]
        assert len(s3_chunks) >= 2
        assert all(c.token_count <= 768 for c in s3_chunks)

    def test_oversized_single_block_stays_whole(self):
        doc = make_doc([Block(kind="paragraph", text=words(900))])
        chunks = semantic_chunk(doc)
        assert len(chunks) == 1
        assert chunks[0].token_count == 900

    def test_trailing_fragment_merges_into_previous_chunk(self):
        blocks = [Block(kind="paragraph", text=words(380, f"p{i}")) for i in range(2)]
        blocks.append(Block(kind="paragraph", text=words(10, "tail")))
        chunks = semantic_chunk(make_doc(blocks))
        assert len(chunks) == 2
        assert chunks[-1].token_count == 390  # 380 + merged 10-token tail

    def test_lone_small_section_stands_alone(self):
        blocks = [
            Block(kind="heading", text="Tiny", level=1),
            Block(kind="paragraph", text=words(10)),
        ]
        chunks = semantic_chunk(make_doc(blocks))
        assert len(chunks) == 1
        assert chunks[0].token_count < 64

    def test_coverage_partition_on_random_documents(self):
        rng = random.Random(99)
        for trial in range(200):
            blocks = []
            for _ in range(rng.randint(1, 25)):
                if rng.random() < 0.25:
                    blocks.append(
                        Block(kind="heading", text=f"H{rng.randint(0, 9)}", level=rng.randint(1, 3))
                    )
                else:
                    kind = "table_row" if rng.random() < 0.2 else "paragraph"
                    blocks.append(Block(kind=kind, text=words(rng.randint(1, 400), "x")))
            chunks = semantic_chunk(make_doc(blocks))
            spans = [c.block_range for c in chunks]
            # exact partition: starts at 0, contiguous, ends at len(blocks)
            assert spans[0][0] == 0
            for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
                assert e1 == s2
            assert spans[-1][1] == len(blocks)

    def test_determinism(self):
        blocks = [Block(kind="paragraph", text=words(100, f"p{i}")) for i in range(10)]
        doc = make_doc(blocks)
        assert semantic_chunk(doc) == semantic_chunk(doc)

    def test_synthetic_corpus_mean_chunk_size_in_band(self):
        rng = random.Random(2024)
        vocab = [f"term{i}" for i in range(500)]

        def paragraph():
            n = max(20, int(rng.gauss(120, 35)))
            return " ".join(rng.choices(vocab, k=n))

        counts: list[int] = []
        for d in range(200):
            blocks: list[Block] = []
            for s in range(rng.randint(1, 3)):
                blocks.append(Block(kind="heading", text=f"S{d}.{s}", level=1 if s == 0 else 2))
                for _ in range(rng.randint(4, 10)):
                    blocks.append(Block(kind="paragraph", text=paragraph()))
            counts.extend(c.token_count for c in semantic_chunk(make_doc(blocks, f"D{d}")))
        mean = statistics.mean(counts)
        assert 300 <= mean <= 470, f"mean chunk size {mean:.1f} outside [300, 470]"

    def test_config_invariants(self):
        with pytest.raises(ValidationError):
            ChunkingConfig(min_tokens=0)
        with pytest.raises(ValidationError):
            ChunkingConfig(min_tokens=500, target_tokens=400)
        with pytest.raises(ValidationError):
            ChunkingConfig(target_tokens=800, max_tokens=768)

    def test_chunk_ids_are_zero_padded_ordinals(self):
        blocks = [Block(kind="paragraph", text=words(380, f"p{i}")) for i in range(4)]
        chunks = semantic_chunk(make_doc(blocks, doc_id="DOC-9"))
        assert [c.chunk_id for c in chunks] == [f"DOC-9#{i:04d}" for i in range(len(chunks))]


class TestMetadata:
    def test_year_derived_from_version_date(self):
        doc = parse_structured_document(record(metadata={}))
        registry = metadata_registry([doc])
        chunk = semantic_chunk(doc)[0]
        enriched = enrich_metadata(chunk, registry)
        assert enriched.metadata.year == 2023

    def test_registry_category_applied(self):
        doc = parse_structured_document(record())
        chunk = semantic_chunk(doc)[0]
        enriched = enrich_metadata(chunk, metadata_registry([doc]))
        assert enriched.metadata.category == "IT Security"
        assert enriched.metadata.supplier_tags == frozenset({"acme"})

    def test_unknown_doc_id_raises(self):
        chunk = Chunk(
            chunk_id="X#0000",
            doc_id="X",
            section_path=(),
            block_range=(0, 1),
            token_count=3,
            text="a b c",
        )
        with pytest.raises(UnknownDocumentError, match="X"):
            enrich_metadata(chunk, {})

    def test_explicit_chunk_values_override_registry(self):
        doc = parse_structured_document(record())
        chunk = semantic_chunk(doc)[0]
        own = ChunkMetadata(
            doc_id=doc.doc_id, version_timestamp="2023-03-01", category="Robotics"
        )
        chunk = Chunk(**{**chunk.__dict__, "metadata": own})
        enriched = enrich_metadata(chunk, metadata_registry([doc]))
        assert enriched.metadata.category == "Robotics"
        assert enriched.metadata.supplier_tags == frozenset({"acme"})  # inherited

    def test_metadata_year_range_enforced(self):
        with pytest.raises(ValidationError):
            ChunkMetadata(doc_id="d", version_timestamp="2023-01-01", year=1900 - 50)


class TestChunkStore:
    def test_round_trip(self, tmp_path):
        doc = parse_structured_document(record())
        chunks = chunk_document(doc)
        path = tmp_path / "chunks.jsonl"
        write_chunk_store(chunks, path)
        assert load_chunk_store(path) == chunks

    def test_dict_round_trip(self):
        doc = parse_structured_document(record())
        for chunk in chunk_document(doc):
            assert chunk_from_dict(chunk_to_dict(chunk)) == chunk
