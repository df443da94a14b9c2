"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ReqragError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ReqragError):
    """A record or value failed structural validation.

    Attributes:
        field: name of the offending field, when known.
        offset: record offset (line number or index) in the source, when known.
    """

    def __init__(self, message: str, *, field: str | None = None, offset: int | None = None):
        super().__init__(message)
        self.field = field
        self.offset = offset


class ConfigError(ReqragError):
    """Configuration file or config object is invalid."""


class UnknownDocumentError(ReqragError):
    """A doc_id was not found in the metadata registry."""

    def __init__(self, doc_id: str):
        super().__init__(f"unknown doc_id: {doc_id!r}")
        self.doc_id = doc_id


class DuplicateIdError(ReqragError):
    """A chunk or node id was inserted twice."""

    def __init__(self, kind: str, item_id: str):
        super().__init__(f"duplicate {kind} id: {item_id!r}")
        self.item_id = item_id


class EmbeddingError(ReqragError):
    """A text could not be embedded (empty input, no tokens)."""


class ProviderError(ReqragError):
    """A provider call failed; carries the provider identity."""

    def __init__(self, message: str, *, provider_id: str):
        super().__init__(f"[{provider_id}] {message}")
        self.provider_id = provider_id


class BatchEmbeddingError(EmbeddingError):
    """One or more elements of an embedding batch failed."""

    def __init__(self, failing_indices: list[int]):
        super().__init__(f"embedding failed for batch indices {failing_indices}")
        self.failing_indices = list(failing_indices)


class ScorerError(ReqragError):
    """A re-ranking scorer failed on one candidate."""

    def __init__(self, message: str, *, chunk_id: str):
        super().__init__(f"scorer failed on chunk {chunk_id!r}: {message}")
        self.chunk_id = chunk_id


class AllProvidersFailedError(ReqragError):
    """Every provider in a fallback chain was exhausted or skipped.

    ``causes`` maps provider_id -> short description of why it did not answer.
    """

    def __init__(self, causes: dict[str, str]):
        detail = "; ".join(f"{pid}: {why}" for pid, why in causes.items())
        super().__init__(f"all providers failed ({detail})")
        self.causes = dict(causes)


class EvalInputError(ReqragError):
    """An evaluation input file or structure is malformed.

    ``line`` is the 1-based line number in the source file, when known.
    """

    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingJudgmentsError(ReqragError):
    """A run contains a query with no entry in the judgments."""

    def __init__(self, query_id: str):
        super().__init__(f"no relevance judgments for query {query_id!r}")
        self.query_id = query_id


class SnapshotFormatError(ReqragError):
    """An index snapshot file has a bad magic header or version."""
