"""Declarative system configuration: one YAML document drives every component.

Unknown keys are hard errors at any nesting level so config drift surfaces
immediately instead of silently falling back to defaults. Component-level
invariants are enforced by the component types themselves; this module wires
sections to constructors and reports violations with their section path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError, ValidationError
from .fusion import FusionConfig
from .hnsw import HnswParams
from .ingest import ChunkingConfig
from .lexical import Bm25Params, DomainDictionary
from .orchestrator import ProviderTier, RetryPolicy, RoutingPolicy, default_tiers


@dataclass(frozen=True)
class PathsConfig:
    corpus: str = "reqrag_data/corpus.jsonl"
    chunk_store: str = "reqrag_data/chunks.jsonl"
    lexical_index: str = "reqrag_data/lexical.idx"
    vector_index: str = "reqrag_data/vectors.idx"
    provenance_store: str = "reqrag_data/provenance.jsonl"
    cost_ledger: str = "reqrag_data/ledger.jsonl"
    pending_ingest: str = "reqrag_data/pending.jsonl"


@dataclass(frozen=True)
class EmbeddingConfig:
    provider: str = "hashed-bag"  # "hashed-bag", "synonym-hash", or "remote"
    model_id: str = "hashed-bag-512"
    endpoint: str = ""
    api_key: str = ""
    synonyms: Mapping[str, str] = field(default_factory=dict)  # surface form -> canonical token


@dataclass(frozen=True)
class BreakerConfig:
    failure_threshold: int = 5
    open_cooldown: float = 60.0


@dataclass(frozen=True)
class ProvenanceConfig:
    coverage_threshold: float = 0.3
    store_prompt: bool = False


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"  # "mock" or "remote"
    model_id: str = ""
    endpoint: str = ""
    api_key: str = ""


@dataclass(frozen=True)
class SystemConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    hnsw: HnswParams = field(default_factory=HnswParams)
    vector_seed: int = 42
    fusion: FusionConfig = field(default_factory=FusionConfig)
    dictionary: DomainDictionary = field(default_factory=DomainDictionary)
    stopwords: frozenset[str] = frozenset()
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    routing: RoutingPolicy = field(default_factory=RoutingPolicy)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    breaker: BreakerConfig = field(default_factory=BreakerConfig)
    providers: Mapping[str, ProviderConfig] = field(default_factory=dict)
    provenance: ProvenanceConfig = field(default_factory=ProvenanceConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


def _check_keys(section: Mapping[str, Any], allowed: set[str], path: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")


def _section(data: Mapping[str, Any], name: str) -> dict:
    value = data.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"section {name!r} must be a mapping")
    return dict(value)


def _build(cls, section: dict, path: str, **overrides):
    allowed = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
    _check_keys(section, allowed, path)
    try:
        return cls(**{**section, **overrides})
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path}: {exc}") from exc


def _parse_tier(raw: Mapping[str, Any], index: int) -> ProviderTier:
    allowed = {"tier_id", "provider_id", "model_id", "rate_per_1k_tokens", "fallback_chain"}
    _check_keys(raw, allowed, f"routing.tiers[{index}]")
    try:
        return ProviderTier(
            tier_id=raw["tier_id"],
            provider_id=raw["provider_id"],
            model_id=raw["model_id"],
            rate_per_1k_tokens=Decimal(str(raw["rate_per_1k_tokens"])),
            fallback_chain=tuple(raw.get("fallback_chain", ())),
        )
    except (KeyError, ValidationError, InvalidOperation) as exc:
        raise ConfigError(f"invalid routing.tiers[{index}]: {exc}") from exc


def config_from_dict(data: Mapping[str, Any]) -> SystemConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("configuration root must be a mapping")
    top_allowed = {
        "paths",
        "chunking",
        "bm25",
        "hnsw",
        "vector_seed",
        "fusion",
        "dictionary",
        "embedding",
        "routing",
        "retry",
        "breaker",
        "providers",
        "provenance",
        "service",
    }
    _check_keys(data, top_allowed, "top level")

    dict_section = _section(data, "dictionary")
    _check_keys(dict_section, {"multiword_terms", "preserved_literals", "stopwords"}, "dictionary")
    try:
        dictionary = DomainDictionary(
            multiword_terms=frozenset(dict_section.get("multiword_terms", ())),
            preserved_literals=frozenset(dict_section.get("preserved_literals", ())),
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid dictionary: {exc}") from exc
    stopwords = frozenset(dict_section.get("stopwords", ()))

    routing_section = _section(data, "routing")
    _check_keys(routing_section, {"t_low", "t_high", "tiers"}, "routing")
    raw_tiers = routing_section.get("tiers")
    tiers = (
        tuple(_parse_tier(t, i) for i, t in enumerate(raw_tiers))
        if raw_tiers is not None
        else default_tiers()
    )
    try:
        routing = RoutingPolicy(
            t_low=routing_section.get("t_low", 0.4),
            t_high=routing_section.get("t_high", 0.7),
            tiers=tiers,  # type: ignore[arg-type]
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid routing: {exc}") from exc

    providers_section = _section(data, "providers")
    providers: dict[str, ProviderConfig] = {}
    for provider_id, raw in providers_section.items():
        if not isinstance(raw, Mapping):
            raise ConfigError(f"providers.{provider_id} must be a mapping")
        providers[provider_id] = _build(ProviderConfig, dict(raw), f"providers.{provider_id}")

    vector_seed = data.get("vector_seed", 42)
    if not isinstance(vector_seed, int) or isinstance(vector_seed, bool):
        raise ConfigError("vector_seed must be an integer")

    return SystemConfig(
        paths=_build(PathsConfig, _section(data, "paths"), "paths"),
        chunking=_build(ChunkingConfig, _section(data, "chunking"), "chunking"),
        bm25=_build(Bm25Params, _section(data, "bm25"), "bm25"),
        hnsw=_build(HnswParams, _section(data, "hnsw"), "hnsw"),
        vector_seed=vector_seed,
        fusion=_build(FusionConfig, _section(data, "fusion"), "fusion"),
        dictionary=dictionary,
        stopwords=stopwords,
        embedding=_build(EmbeddingConfig, _section(data, "embedding"), "embedding"),
        routing=routing,
        retry=_build(RetryPolicy, _section(data, "retry"), "retry"),
        breaker=_build(BreakerConfig, _section(data, "breaker"), "breaker"),
        providers=providers,
        provenance=_build(ProvenanceConfig, _section(data, "provenance"), "provenance"),
        service=_build(ServiceConfig, _section(data, "service"), "service"),
    )


def load_config(path: str | Path | None) -> SystemConfig:
    """Load a YAML config file; a missing argument yields the full defaults."""
    if path is None:
        return SystemConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    return config_from_dict(data)
