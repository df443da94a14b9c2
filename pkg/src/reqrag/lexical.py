"""Domain-aware tokenization and a BM25 inverted index (the sparse retriever).

The tokenizer protects technical vocabulary: multi-word terms ("emergency
stop") and preserved literals (part numbers like "MBN 9666-1", acronyms) are
matched greedily, longest first, and emitted as single tokens before the
remaining text is lowercased and split on non-alphanumeric characters.
No stemming or stop-word removal happens unless explicitly requested.
"""

from __future__ import annotations

import json
import math
import re
from bisect import bisect_left
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import DuplicateIdError, SnapshotFormatError, ValidationError

_WORD_RE = re.compile(r"[0-9a-z]+")

LEXICAL_SNAPSHOT_MAGIC = "RRLEX"
LEXICAL_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class DomainDictionary:
    """Vocabulary that must survive tokenization intact.

    ``multiword_terms`` are emitted in canonical lowercase form; ``preserved
    literals`` keep their stored spelling (case, hyphens, digits). Matching is
    case-insensitive and anchored at word boundaries on both sides.
    """

    multiword_terms: frozenset[str] = frozenset()
    preserved_literals: frozenset[str] = frozenset()

    def __post_init__(self):
        canonical = frozenset(" ".join(t.lower().split()) for t in self.multiword_terms)
        object.__setattr__(self, "multiword_terms", canonical)
        object.__setattr__(self, "preserved_literals", frozenset(self.preserved_literals))
        for term in self.multiword_terms:
            if not term:
                raise ValidationError("empty multiword term", field="multiword_terms")
            if len(term.split()) < 2:
                raise ValidationError(
                    f"multiword term must contain at least 2 words: {term!r}",
                    field="multiword_terms",
                )
        for lit in self.preserved_literals:
            if not lit.strip():
                raise ValidationError("empty preserved literal", field="preserved_literals")

    @property
    def entries(self) -> list[tuple[str, str]]:
        """All (match form, emitted form) pairs, literals first at equal length."""
        pairs = [(lit, lit) for lit in self.preserved_literals]
        pairs += [(term, term) for term in self.multiword_terms]
        return pairs


EMPTY_DICTIONARY = DomainDictionary()


def _compile_dictionary(dictionary: DomainDictionary) -> re.Pattern | None:
    """Build one alternation regex, longest entry first, word-bounded."""
    entries = sorted(dictionary.entries, key=lambda p: (-len(p[0]), p[0]))
    if not entries:
        return None
    alternatives = []
    for match_form, _ in entries:
        parts = [re.escape(w) for w in match_form.split()]
        alternatives.append(r"\s+".join(parts))
    pattern = r"(?<![0-9A-Za-z])(?:%s)(?![0-9A-Za-z])" % "|".join(alternatives)
    return re.compile(pattern, re.IGNORECASE)


_COMPILED_CACHE: dict[int, tuple[DomainDictionary, re.Pattern | None, dict[str, str]]] = {}


def _dictionary_machinery(
    dictionary: DomainDictionary,
) -> tuple[re.Pattern | None, dict[str, str]]:
    """Regex plus a lowercased-match -> emitted-form map, cached per dictionary."""
    cached = _COMPILED_CACHE.get(id(dictionary))
    if cached is not None and cached[0] is dictionary:
        return cached[1], cached[2]
    emit_by_key: dict[str, str] = {}
    # Multiword terms first so preserved literals win the key on collision.
    for term in dictionary.multiword_terms:
        emit_by_key[term] = term
    for lit in dictionary.preserved_literals:
        emit_by_key[" ".join(lit.lower().split())] = lit
    compiled = _compile_dictionary(dictionary)
    _COMPILED_CACHE[id(dictionary)] = (dictionary, compiled, emit_by_key)
    return compiled, emit_by_key


def tokenize(
    text: str,
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
    *,
    stopwords: frozenset[str] = frozenset(),
    stem: Callable[[str], str] | None = None,
) -> list[str]:
    """Tokenize ``text``, keeping dictionary spans as single tokens.

    Dictionary spans are matched greedily (longest first) against the raw
    text; everything in between is lowercased and split on non-alphanumeric
    characters. ``stopwords`` and ``stem`` apply only to those generic tokens,
    never to dictionary matches.
    """
    if not text:
        return []
    compiled, emit_by_key = _dictionary_machinery(dictionary)

    def generic(segment: str) -> Iterable[str]:
        for tok in _WORD_RE.findall(segment.lower()):
            if tok in stopwords:
                continue
            yield stem(tok) if stem else tok

    if compiled is None:
        return list(generic(text))

    tokens: list[str] = []
    pos = 0
    for m in compiled.finditer(text):
        tokens.extend(generic(text[pos : m.start()]))
        key = " ".join(m.group(0).lower().split())
        tokens.append(emit_by_key[key])
        pos = m.end()
    tokens.extend(generic(text[pos:]))
    return tokens


@dataclass(frozen=True)
class Bm25Params:
    """BM25 shape parameters: k1 saturates term frequency, b scales length normalization."""

    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValidationError(f"k1 must be >= 0, got {self.k1}", field="k1")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError(f"b must be in [0, 1], got {self.b}", field="b")


@dataclass
class InvertedIndex:
    """Immutable term -> postings index over chunks.

    ``postings`` maps each term to a list of (chunk_id, term_frequency) sorted
    by chunk_id. Built once via :func:`build_index`; treat as read-only after.
    """

    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)
    avg_doc_length: float = 0.0

    @property
    def size(self) -> int:
        return len(self.doc_lengths)

    def idf(self, term: str) -> float:
        """Smoothed idf, non-negative for any document frequency 0..N."""
        df = len(self.postings.get(term, ()))
        n = self.size
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def term_frequency(self, term: str, chunk_id: str) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        i = bisect_left(plist, (chunk_id,))
        if i < len(plist) and plist[i][0] == chunk_id:
            return plist[i][1]
        return 0


def build_index(
    chunks: Iterable,
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
    *,
    stopwords: frozenset[str] = frozenset(),
) -> InvertedIndex:
    """Build an inverted index from chunk-likes (objects with .chunk_id/.text or (id, text) pairs)."""
    postings: dict[str, dict[str, int]] = defaultdict(dict)
    doc_lengths: dict[str, int] = {}
    for chunk in chunks:
        if isinstance(chunk, tuple):
            chunk_id, text = chunk
        else:
            chunk_id, text = chunk.chunk_id, chunk.text
        if chunk_id in doc_lengths:
            raise DuplicateIdError("chunk", chunk_id)
        tokens = tokenize(text, dictionary, stopwords=stopwords)
        doc_lengths[chunk_id] = len(tokens)
        for tok in tokens:
            bucket = postings[tok]
            bucket[chunk_id] = bucket.get(chunk_id, 0) + 1
    sorted_postings = {
        term: sorted(by_chunk.items()) for term, by_chunk in postings.items()
    }
    avg = sum(doc_lengths.values()) / len(doc_lengths) if doc_lengths else 0.0
    return InvertedIndex(postings=sorted_postings, doc_lengths=doc_lengths, avg_doc_length=avg)


def bm25_score(
    query_tokens: list[str],
    chunk_id: str,
    index: InvertedIndex,
    params: Bm25Params = Bm25Params(),
) -> float:
    """Score one chunk against tokenized query terms.

    Each query token occurrence contributes
    ``idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*dl/avgdl))``; repeated query
    tokens therefore contribute once per occurrence.
    """
    if chunk_id not in index.doc_lengths:
        raise KeyError(f"chunk_id not in index: {chunk_id!r}")
    dl = index.doc_lengths[chunk_id]
    avgdl = index.avg_doc_length
    norm = params.k1 * (1.0 - params.b + (params.b * dl / avgdl if avgdl > 0 else 0.0))
    score = 0.0
    for tok in query_tokens:
        tf = index.term_frequency(tok, chunk_id)
        if tf == 0:
            continue
        score += index.idf(tok) * (tf * (params.k1 + 1.0)) / (tf + norm)
    return score


def search_sparse(
    query: str,
    index: InvertedIndex,
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
    params: Bm25Params = Bm25Params(),
    top_k: int = 20,
) -> list[tuple[str, float]]:
    """Return up to ``top_k`` (chunk_id, score) by descending BM25 score.

    Only chunks sharing at least one query term appear. Ties break by
    ascending chunk_id so runs are exactly reproducible.
    """
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}", field="top_k")
    query_tokens = tokenize(query, dictionary)
    scores: dict[str, float] = {}
    k1, b = params.k1, params.b
    avgdl = index.avg_doc_length
    for tok in query_tokens:
        plist = index.postings.get(tok)
        if not plist:
            continue
        idf = index.idf(tok)
        for cid, tf in plist:
            dl = index.doc_lengths[cid]
            norm = k1 * (1.0 - b + (b * dl / avgdl if avgdl > 0 else 0.0))
            scores[cid] = scores.get(cid, 0.0) + idf * (tf * (k1 + 1.0)) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k]


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Write a line-oriented snapshot: magic header, stats line, one term per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{LEXICAL_SNAPSHOT_MAGIC} {LEXICAL_SNAPSHOT_VERSION}\n")
        stats = {"doc_lengths": dict(sorted(index.doc_lengths.items()))}
        fh.write(json.dumps(stats, sort_keys=True, ensure_ascii=False) + "\n")
        for term in sorted(index.postings):
            row = [term, [[cid, tf] for cid, tf in index.postings[term]]]
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def load_index(path: str | Path) -> InvertedIndex:
    """Load a snapshot written by :func:`save_index`."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip().split()
        if len(header) != 2 or header[0] != LEXICAL_SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"bad lexical snapshot header in {path}")
        if int(header[1]) != LEXICAL_SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"unsupported lexical snapshot version {header[1]}")
        stats = json.loads(fh.readline())
        doc_lengths = {cid: int(n) for cid, n in stats["doc_lengths"].items()}
        postings: dict[str, list[tuple[str, int]]] = {}
        for line in fh:
            if not line.strip():
                continue
            term, plist = json.loads(line)
            postings[term] = [(cid, int(tf)) for cid, tf in plist]
    avg = sum(doc_lengths.values()) / len(doc_lengths) if doc_lengths else 0.0
    return InvertedIndex(postings=postings, doc_lengths=doc_lengths, avg_doc_length=avg)
