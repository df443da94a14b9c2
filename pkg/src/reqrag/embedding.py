"""Text-to-vector providers behind one interface, with an offline deterministic default.

Vectors are always 512-dimensional, unit L2 norm, float64. The built-in
provider hashes tokens into signed buckets so the whole retrieval stack is
testable without any model or network; remote encoders plug in behind the
same interface.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import BatchEmbeddingError, EmbeddingError, ProviderError, ValidationError

DIMENSION = 512
NORM_TOLERANCE = 1e-6

_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class ProviderDescriptor:
    """Identity of the encoder that produced a vector."""

    provider_id: str
    model_id: str
    dimension: int = DIMENSION

    def __post_init__(self):
        if not self.provider_id or not self.model_id:
            raise ValidationError("provider_id and model_id must be non-empty")
        if self.dimension != DIMENSION:
            raise ValidationError(f"dimension must be {DIMENSION}, got {self.dimension}")


class EmbeddingProvider(Protocol):
    descriptor: ProviderDescriptor

    def embed_text(self, text: str) -> np.ndarray: ...


def token_bucket(token: str, dimension: int = DIMENSION) -> tuple[int, int]:
    """Deterministic (bucket index, sign) for a token; stable across processes."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    index = value % dimension
    sign = 1 if (value >> 32) & 1 == 0 else -1
    return index, sign


class HashedBagProvider:
    """Deterministic bag-of-tokens embedding: tokens hash into signed buckets.

    The bucket-count vector is L2-normalized, so texts sharing tokens point in
    similar directions and token-disjoint texts with disjoint buckets are
    exactly orthogonal. Pure function of the text: no state, no randomness.
    """

    def __init__(self, provider_id: str = "hashed-bag", model_id: str = "hashed-bag-512"):
        self.descriptor = ProviderDescriptor(provider_id=provider_id, model_id=model_id)

    def tokens(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def embed_text(self, text: str) -> np.ndarray:
        values = np.zeros(DIMENSION, dtype=np.float64)
        for tok in self.tokens(text):
            index, sign = token_bucket(tok)
            values[index] += sign
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            raise EmbeddingError(f"text yields no embeddable tokens: {text[:60]!r}")
        return values / norm


class SynonymHashProvider(HashedBagProvider):
    """Hashed-bag provider that first maps tokens through a synonym table.

    Texts using different surface forms of the same concept embed identically,
    which makes it the standard fixture for exercising the dense path on
    paraphrased queries that share no vocabulary with their target chunk.
    """

    def __init__(self, synonyms: dict[str, str], provider_id: str = "synonym-hash"):
        super().__init__(provider_id=provider_id, model_id="synonym-hash-512")
        self._synonyms = {k.lower(): v.lower() for k, v in synonyms.items()}

    def tokens(self, text: str) -> list[str]:
        return [self._synonyms.get(t, t) for t in super().tokens(text)]


class RemoteEmbeddingProvider:
    """Client for an external encoder speaking ``{model_id, texts[]} -> {vectors[][]}`` JSON.

    ``transport`` posts one request payload and returns the decoded response
    body; the default uses httpx against ``endpoint``. Any transport failure
    surfaces as :class:`ProviderError` carrying this provider's id.
    """

    def __init__(
        self,
        descriptor: ProviderDescriptor,
        endpoint: str = "",
        api_key: str | None = None,
        transport: Callable[[dict], dict] | None = None,
        timeout: float = 30.0,
    ):
        self.descriptor = descriptor
        self.endpoint = endpoint
        self._api_key = api_key
        self._timeout = timeout
        self._transport = transport or self._http_transport

    def _http_transport(self, payload: dict) -> dict:
        import httpx

        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        response = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self._timeout)
        response.raise_for_status()
        return response.json()

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"model_id": self.descriptor.model_id, "texts": list(texts)}
        try:
            body = self._transport(payload)
            vectors = body["vectors"]
        except Exception as exc:
            raise ProviderError(str(exc), provider_id=self.descriptor.provider_id) from exc
        if len(vectors) != len(texts):
            raise ProviderError(
                f"expected {len(texts)} vectors, got {len(vectors)}",
                provider_id=self.descriptor.provider_id,
            )
        return [np.asarray(v, dtype=np.float64) for v in vectors]


def _validate_vector(vector: np.ndarray, provider_id: str) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (DIMENSION,):
        raise ProviderError(
            f"vector has shape {vector.shape}, expected ({DIMENSION},)", provider_id=provider_id
        )
    norm = float(np.linalg.norm(vector))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ProviderError(f"vector norm {norm} outside 1 +/- {NORM_TOLERANCE}", provider_id=provider_id)
    return vector


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embed one non-empty text; the result is checked against the 512-d unit-norm contract."""
    if not text:
        raise EmbeddingError("cannot embed empty text")
    return _validate_vector(provider.embed_text(text), provider.descriptor.provider_id)


def embed_batch(texts: list[str], provider: EmbeddingProvider) -> list[np.ndarray]:
    """Embed texts in order; raises :class:`BatchEmbeddingError` naming every failing index."""
    vectors: list[np.ndarray | None] = []
    failing: list[int] = []
    for i, text in enumerate(texts):
        try:
            vectors.append(embed(text, provider))
        except (EmbeddingError, ProviderError):
            vectors.append(None)
            failing.append(i)
    if failing:
        raise BatchEmbeddingError(failing)
    return vectors  # type: ignore[return-value]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product; inputs are unit vectors by contract."""
    return float(np.dot(a, b))
