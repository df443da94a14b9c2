"""Cost-tiered generation routing with retries, fallback, and circuit breaking.

Queries are scored for complexity by a pluggable classifier (the default is a
documented clipped weighted sum), routed to one of three provider tiers, and
executed with exponential backoff under per-provider circuit breakers. Every
generation is priced into an append-only cost ledger using exact decimal
arithmetic. Time is injected through a clock object so the retry and breaker
machinery is fully testable without real sleeps.
"""

from __future__ import annotations

import re
import threading
import time as _time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Mapping, Protocol, Sequence

from .errors import AllProvidersFailedError, ProviderError, ValidationError
from .lexical import EMPTY_DICTIONARY, DomainDictionary, tokenize


# --- time injection -------------------------------------------------------------

class Clock(Protocol):
    def now(self) -> float: ...

    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return _time.time()

    def monotonic(self) -> float:
        return _time.monotonic()

    def sleep(self, seconds: float) -> None:
        _time.sleep(seconds)


class FakeClock:
    """Deterministic clock: sleeping advances time instantly and is recorded."""

    def __init__(self, start: float = 0.0):
        self._t = start
        self.sleeps: list[float] = []

    def now(self) -> float:
        return self._t

    def monotonic(self) -> float:
        return self._t

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self._t += seconds

    def advance(self, seconds: float) -> None:
        self._t += seconds


# --- complexity features and classifier ------------------------------------------

DEFAULT_REFERENCE_PATTERNS = (
    r"§\s*\d+(?:\.\d+)*",                      # section-mark references
    r"\b(?:section|clause|chapter|annex)\s+\d+(?:\.\d+)*",
    r"\b[A-Z]{2,}[ -]?\d{3,}(?:-\d+)?\b",            # standard ids: MBN 9666-1, ISO 26262
)

_HIGH_VERBOSITY = frozenset(
    "explain analyze analyse compare contrast justify discuss evaluate assess why derive trace".split()
)
_MEDIUM_VERBOSITY = frozenset("describe summarize summarise overview how outline".split())
_LOW_VERBOSITY = frozenset("list name what which when who state give show extract find".split())


@dataclass(frozen=True)
class ComplexityFeatures:
    """Routing signals extracted from one query plus its retrieved context."""

    query_token_count: int = 0
    entity_count: int = 0
    cross_reference_count: int = 0
    expected_verbosity: float = 0.0
    context_chunk_count: int = 0

    def __post_init__(self):
        for name in ("query_token_count", "entity_count", "cross_reference_count", "context_chunk_count"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0.0 <= self.expected_verbosity <= 1.0:
            raise ValidationError("expected_verbosity must be in [0, 1]")


def extract_features(
    query: str,
    context: Sequence[object] = (),
    dictionary: DomainDictionary = EMPTY_DICTIONARY,
    reference_patterns: Sequence[str] = DEFAULT_REFERENCE_PATTERNS,
) -> ComplexityFeatures:
    """Deterministic feature extraction.

    Entities are query tokens that are dictionary entries (multi-word terms or
    preserved literals). Cross-references are non-overlapping matches of the
    configured reference patterns. Expected verbosity comes from intent
    keywords: the highest matched level wins (0.9 / 0.5 / 0.1), with a 0.3
    baseline when no keyword appears in a non-empty query.
    """
    tokens = tokenize(query, dictionary)
    entity_count = sum(
        1
        for t in tokens
        if t in dictionary.multiword_terms or t in dictionary.preserved_literals
    )
    xrefs = sum(len(re.findall(p, query)) for p in reference_patterns)
    token_set = {t for t in tokens if " " not in t}
    if token_set & _HIGH_VERBOSITY:
        verbosity = 0.9
    elif token_set & _MEDIUM_VERBOSITY:
        verbosity = 0.5
    elif token_set & _LOW_VERBOSITY:
        verbosity = 0.1
    else:
        verbosity = 0.3 if tokens else 0.0
    return ComplexityFeatures(
        query_token_count=len(tokens),
        entity_count=entity_count,
        cross_reference_count=xrefs,
        expected_verbosity=verbosity,
        context_chunk_count=len(context),
    )


class ComplexityClassifier(Protocol):
    def __call__(self, features: ComplexityFeatures) -> float: ...


@dataclass(frozen=True)
class WeightedSumClassifier:
    """Default rule: clipped weighted sum of saturating feature terms.

    Each count feature is scaled by its saturation cap, weighted, and summed;
    verbosity enters directly. Weights are non-negative so the score is
    monotone in every feature. The published default table:

    ==================  ======  ====
    feature             weight  cap
    ==================  ======  ====
    query tokens        0.15    40
    entities            0.25    5
    cross-references    0.25    3
    expected verbosity  0.25    --
    context chunks      0.10    10
    ==================  ======  ====
    """

    token_weight: float = 0.15
    entity_weight: float = 0.25
    reference_weight: float = 0.25
    verbosity_weight: float = 0.25
    context_weight: float = 0.10
    token_cap: int = 40
    entity_cap: int = 5
    reference_cap: int = 3
    context_cap: int = 10

    def __call__(self, features: ComplexityFeatures) -> float:
        score = (
            self.token_weight * min(features.query_token_count / self.token_cap, 1.0)
            + self.entity_weight * min(features.entity_count / self.entity_cap, 1.0)
            + self.reference_weight * min(features.cross_reference_count / self.reference_cap, 1.0)
            + self.verbosity_weight * features.expected_verbosity
            + self.context_weight * min(features.context_chunk_count / self.context_cap, 1.0)
        )
        return min(max(score, 0.0), 1.0)


DEFAULT_CLASSIFIER = WeightedSumClassifier()


def score_complexity(
    features: ComplexityFeatures, classifier: ComplexityClassifier = DEFAULT_CLASSIFIER
) -> float:
    value = float(classifier(features))
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"classifier returned {value}, expected [0, 1]")
    return value


# --- routing ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProviderTier:
    """One cost tier: the provider that serves it and where to fall back."""

    tier_id: int
    provider_id: str
    model_id: str
    rate_per_1k_tokens: Decimal
    fallback_chain: tuple[str, ...]

    def __post_init__(self):
        if self.tier_id not in (1, 2, 3):
            raise ValidationError(f"tier_id must be 1, 2 or 3, got {self.tier_id}")
        object.__setattr__(self, "rate_per_1k_tokens", Decimal(str(self.rate_per_1k_tokens)))
        if self.rate_per_1k_tokens <= 0:
            raise ValidationError("rate_per_1k_tokens must be positive")
        if not self.fallback_chain:
            raise ValidationError("fallback_chain must be non-empty")
        object.__setattr__(self, "fallback_chain", tuple(self.fallback_chain))


def default_tiers() -> tuple[ProviderTier, ProviderTier, ProviderTier]:
    return (
        ProviderTier(1, "mock-economy", "mock-small", Decimal("0.002"), ("mock-standard",)),
        ProviderTier(2, "mock-standard", "mock-medium", Decimal("0.01"), ("mock-premium",)),
        ProviderTier(3, "mock-premium", "mock-large", Decimal("0.03"), ("mock-standard",)),
    )


@dataclass(frozen=True)
class RoutingPolicy:
    """Complexity thresholds and the tier table, ordered by ascending rate."""

    t_low: float = 0.4
    t_high: float = 0.7
    tiers: tuple[ProviderTier, ProviderTier, ProviderTier] = field(default_factory=default_tiers)

    def __post_init__(self):
        if not 0.0 < self.t_low < self.t_high < 1.0:
            raise ValidationError(f"require 0 < t_low < t_high < 1, got {self.t_low}, {self.t_high}")
        if len(self.tiers) != 3:
            raise ValidationError(f"expected 3 tiers, got {len(self.tiers)}")
        rates = [t.rate_per_1k_tokens for t in self.tiers]
        if sorted(rates) != rates:
            raise ValidationError("tiers must be ordered by ascending rate")


@dataclass(frozen=True)
class RoutingDecision:
    """The tier chosen for one query, with everything execution needs."""

    score: float
    tier_id: int
    provider_id: str
    model_id: str
    rate_per_1k_tokens: Decimal
    fallback_chain: tuple[str, ...]


def route(score: float, policy: RoutingPolicy = RoutingPolicy()) -> RoutingDecision:
    """Map a complexity score to a tier: below t_low -> 1, below t_high -> 2, else 3.

    Boundary scores go up: exactly t_low routes to tier 2 and exactly t_high
    to tier 3.
    """
    if not 0.0 <= score <= 1.0:
        raise ValidationError(f"score must be in [0, 1], got {score}", field="score")
    if score < policy.t_low:
        tier = policy.tiers[0]
    elif score < policy.t_high:
        tier = policy.tiers[1]
    else:
        tier = policy.tiers[2]
    return RoutingDecision(
        score=score,
        tier_id=tier.tier_id,
        provider_id=tier.provider_id,
        model_id=tier.model_id,
        rate_per_1k_tokens=tier.rate_per_1k_tokens,
        fallback_chain=tier.fallback_chain,
    )


# --- retry and circuit breaking ---------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff: delays double from ``initial_delay`` up to ``max_delay``."""

    initial_delay: float = 1.0
    multiplier: float = 2.0
    max_delay: float = 30.0
    max_attempts: int = 4

    def __post_init__(self):
        if self.initial_delay > self.max_delay:
            raise ValidationError("initial_delay must be <= max_delay")
        if self.multiplier <= 1.0:
            raise ValidationError("multiplier must be > 1")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")

    def delay(self, failure_index: int) -> float:
        """Delay after the (failure_index+1)-th consecutive failure: 1, 2, 4, ... capped."""
        return min(self.initial_delay * self.multiplier**failure_index, self.max_delay)


class CircuitBreaker:
    """Per-provider failure gate: closed -> open -> half_open -> closed.

    Opens after ``failure_threshold`` consecutive failures; stays open for
    ``open_cooldown`` seconds; the first permitted call afterwards is the
    single half-open probe, whose outcome either closes the breaker or
    restarts the cooldown. All transitions are lock-protected.
    """

    def __init__(
        self,
        failure_threshold: int = 5,
        open_cooldown: float = 60.0,
        clock: Clock | None = None,
    ):
        if failure_threshold < 1:
            raise ValidationError("failure_threshold must be >= 1")
        if open_cooldown <= 0:
            raise ValidationError("open_cooldown must be positive")
        self.failure_threshold = failure_threshold
        self.open_cooldown = open_cooldown
        self.clock = clock or SystemClock()
        self.state = "closed"
        self.consecutive_failures = 0
        self.opened_at: float | None = None
        self._probe_in_flight = False
        self._lock = threading.Lock()

    def allow(self) -> bool:
        """Whether a call may proceed now; a True in half-open claims the probe slot."""
        with self._lock:
            if self.state == "closed":
                return True
            if self.state == "open":
                if self.clock.monotonic() - self.opened_at >= self.open_cooldown:
                    self.state = "half_open"
                    self._probe_in_flight = True
                    return True
                return False
            # half_open: only the single in-flight probe is allowed
            if not self._probe_in_flight:
                self._probe_in_flight = True
                return True
            return False

    def record_success(self) -> None:
        with self._lock:
            self.state = "closed"
            self.consecutive_failures = 0
            self.opened_at = None
            self._probe_in_flight = False

    def record_failure(self) -> None:
        with self._lock:
            self.consecutive_failures += 1
            if self.state == "half_open" or self.consecutive_failures >= self.failure_threshold:
                self.state = "open"
                self.opened_at = self.clock.monotonic()
                self._probe_in_flight = False

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "state": self.state,
                "consecutive_failures": self.consecutive_failures,
                "failure_threshold": self.failure_threshold,
                "open_cooldown": self.open_cooldown,
            }


# --- providers ---------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    context: tuple[str, ...] = ()
    model_id: str = ""


@dataclass(frozen=True)
class ProviderReply:
    text: str
    tokens_in: int
    tokens_out: int


class LlmProvider(Protocol):
    provider_id: str

    def complete(self, request: GenerationRequest) -> ProviderReply: ...


class MockLlmProvider:
    """Offline deterministic provider: answers from the supplied context only."""

    def __init__(self, provider_id: str, model_id: str):
        self.provider_id = provider_id
        self.model_id = model_id

    def complete(self, request: GenerationRequest) -> ProviderReply:
        lead = request.context[0].replace("\n", " ")[:200] if request.context else ""
        text = (
            f"[{self.model_id}] Grounded answer from {len(request.context)} source(s). {lead}".strip()
        )
        tokens_in = len(request.prompt.split()) + sum(len(c.split()) for c in request.context)
        return ProviderReply(text=text, tokens_in=tokens_in, tokens_out=len(text.split()))


@dataclass(frozen=True)
class Succeed:
    text: str = "ok"
    tokens_in: int = 100
    tokens_out: int = 50
    delay_ms: float = 0.0


@dataclass(frozen=True)
class Fail:
    kind: str = "unavailable"
    delay_ms: float = 0.0


class ScriptedProvider:
    """Test double that follows a per-call script of Succeed/Fail steps."""

    def __init__(self, provider_id: str, script: Sequence[Succeed | Fail], clock: Clock | None = None):
        self.provider_id = provider_id
        self._script = list(script)
        self._cursor = 0
        self.calls = 0
        self.clock = clock or SystemClock()

    def complete(self, request: GenerationRequest) -> ProviderReply:
        self.calls += 1
        if self._cursor >= len(self._script):
            raise ProviderError("script exhausted", provider_id=self.provider_id)
        step = self._script[self._cursor]
        self._cursor += 1
        if step.delay_ms:
            self.clock.sleep(step.delay_ms / 1000.0)
        if isinstance(step, Fail):
            raise ProviderError(step.kind, provider_id=self.provider_id)
        return ProviderReply(text=step.text, tokens_in=step.tokens_in, tokens_out=step.tokens_out)


class RemoteLlmProvider:
    """Client for an external generator speaking
    ``{model_id, prompt, context[]} -> {text, tokens_in, tokens_out}`` JSON."""

    def __init__(
        self,
        provider_id: str,
        model_id: str,
        endpoint: str = "",
        api_key: str | None = None,
        transport: Callable[[dict], dict] | None = None,
        timeout: float = 60.0,
    ):
        self.provider_id = provider_id
        self.model_id = model_id
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

    def complete(self, request: GenerationRequest) -> ProviderReply:
        payload = {
            "model_id": request.model_id or self.model_id,
            "prompt": request.prompt,
            "context": list(request.context),
        }
        try:
            body = self._transport(payload)
            return ProviderReply(
                text=body["text"],
                tokens_in=int(body["tokens_in"]),
                tokens_out=int(body["tokens_out"]),
            )
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(str(exc), provider_id=self.provider_id) from exc


# --- execution ---------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationResult:
    """What actually happened: answering provider, token usage, attempt count."""

    text: str
    provider_id: str
    model_id: str
    tokens_in: int
    tokens_out: int
    attempts: int
    started_at: float
    finished_at: float


def execute_with_fallback(
    request: GenerationRequest,
    decision: RoutingDecision,
    providers: Mapping[str, LlmProvider],
    breakers: Mapping[str, CircuitBreaker],
    retry: RetryPolicy = RetryPolicy(),
    clock: Clock | None = None,
) -> GenerationResult:
    """Call the tier's provider with backoff, walking the fallback chain on exhaustion.

    Each provider gets up to ``retry.max_attempts`` tries with delays 1, 2,
    4, ... seconds (capped). Providers with an open breaker are skipped
    without being invoked; the skip is recorded in the failure causes. When
    the whole chain is exhausted, :class:`AllProvidersFailedError` lists every
    provider's reason. ``attempts`` on the result counts calls across all
    providers tried.
    """
    clock = clock or SystemClock()
    chain: list[str] = []
    for pid in (decision.provider_id, *decision.fallback_chain):
        if pid not in chain:
            chain.append(pid)
    causes: dict[str, str] = {}
    total_attempts = 0
    started = clock.now()

    for provider_id in chain:
        provider = providers.get(provider_id)
        if provider is None:
            causes[provider_id] = "provider not configured"
            continue
        breaker = breakers.get(provider_id)
        last_error = "no attempt made"
        for attempt in range(retry.max_attempts):
            if breaker is not None and not breaker.allow():
                last_error = "circuit open; call skipped"
                break
            try:
                reply = provider.complete(request)
            except ProviderError as exc:
                total_attempts += 1
                if breaker is not None:
                    breaker.record_failure()
                last_error = str(exc)
                if attempt < retry.max_attempts - 1:
                    clock.sleep(retry.delay(attempt))
                continue
            total_attempts += 1
            if breaker is not None:
                breaker.record_success()
            return GenerationResult(
                text=reply.text,
                provider_id=provider_id,
                model_id=request.model_id or decision.model_id,
                tokens_in=reply.tokens_in,
                tokens_out=reply.tokens_out,
                attempts=total_attempts,
                started_at=started,
                finished_at=clock.now(),
            )
        causes[provider_id] = last_error
    raise AllProvidersFailedError(causes)


# --- cost accounting ------------------------------------------------------------------

@dataclass(frozen=True)
class CostEntry:
    query_id: str
    tier_id: int
    provider_id: str
    tokens_in: int
    tokens_out: int
    unit_rate: Decimal
    cost: Decimal


class CostLedger:
    """Append-only, thread-safe token cost accounting with exact decimal math.

    ``cost = (tokens_in + tokens_out) / 1000 * unit_rate`` — token counts over
    1000 always terminate in decimal, so entries and totals are exact.
    """

    def __init__(self):
        self._entries: list[CostEntry] = []
        self._lock = threading.Lock()

    def record(
        self,
        query_id: str,
        tier_id: int,
        provider_id: str,
        tokens_in: int,
        tokens_out: int,
        unit_rate: Decimal,
    ) -> CostEntry:
        if tokens_in < 0 or tokens_out < 0:
            raise ValidationError("token counts must be >= 0")
        unit_rate = Decimal(str(unit_rate))
        cost = Decimal(tokens_in + tokens_out) / Decimal(1000) * unit_rate
        entry = CostEntry(query_id, tier_id, provider_id, tokens_in, tokens_out, unit_rate, cost)
        with self._lock:
            self._entries.append(entry)
        return entry

    @property
    def entries(self) -> list[CostEntry]:
        with self._lock:
            return list(self._entries)

    def total(self) -> Decimal:
        with self._lock:
            return sum((e.cost for e in self._entries), Decimal(0))

    def totals_by_tier(self) -> dict[int, Decimal]:
        with self._lock:
            totals: dict[int, Decimal] = {}
            for e in self._entries:
                totals[e.tier_id] = totals.get(e.tier_id, Decimal(0)) + e.cost
            return totals

    def counts_by_tier(self) -> dict[int, int]:
        with self._lock:
            counts: dict[int, int] = {}
            for e in self._entries:
                counts[e.tier_id] = counts.get(e.tier_id, 0) + 1
            return counts

    def export_lines(self) -> list[str]:
        import json

        return [
            json.dumps(
                {
                    "query_id": e.query_id,
                    "tier_id": e.tier_id,
                    "provider_id": e.provider_id,
                    "tokens_in": e.tokens_in,
                    "tokens_out": e.tokens_out,
                    "unit_rate": str(e.unit_rate),
                    "cost": str(e.cost),
                },
                sort_keys=True,
            )
            for e in self.entries
        ]


def record_cost(result: GenerationResult, decision: RoutingDecision, ledger: CostLedger, query_id: str = "") -> CostEntry:
    """Price one generation into the ledger using the decision's tier rate."""
    return ledger.record(
        query_id=query_id,
        tier_id=decision.tier_id,
        provider_id=result.provider_id,
        tokens_in=result.tokens_in,
        tokens_out=result.tokens_out,
        unit_rate=decision.rate_per_1k_tokens,
    )


# --- orchestrator facade ----------------------------------------------------------------

def build_prompt(query: str, context: Sequence[str]) -> str:
    lines = ["Answer the question using only the numbered sources.", "", f"Question: {query}", ""]
    for i, chunk_text in enumerate(context, start=1):
        lines.append(f"[{i}] {chunk_text}")
    return "\n".join(lines)


class LlmOrchestrator:
    """Feature extraction -> complexity -> routing -> resilient execution -> costing."""

    def __init__(
        self,
        providers: Mapping[str, LlmProvider],
        policy: RoutingPolicy = RoutingPolicy(),
        retry: RetryPolicy = RetryPolicy(),
        classifier: ComplexityClassifier = DEFAULT_CLASSIFIER,
        dictionary: DomainDictionary = EMPTY_DICTIONARY,
        ledger: CostLedger | None = None,
        clock: Clock | None = None,
        failure_threshold: int = 5,
        open_cooldown: float = 60.0,
    ):
        self.providers = dict(providers)
        self.policy = policy
        self.retry = retry
        self.classifier = classifier
        self.dictionary = dictionary
        self.ledger = ledger if ledger is not None else CostLedger()
        self.clock = clock or SystemClock()
        self.breakers: dict[str, CircuitBreaker] = {
            pid: CircuitBreaker(failure_threshold, open_cooldown, self.clock)
            for pid in self.providers
        }

    def answer(
        self, query: str, context: Sequence[str], query_id: str = ""
    ) -> tuple[GenerationResult, RoutingDecision]:
        features = extract_features(query, context, self.dictionary)
        score = score_complexity(features, self.classifier)
        decision = route(score, self.policy)
        request = GenerationRequest(
            prompt=build_prompt(query, context),
            context=tuple(context),
            model_id=decision.model_id,
        )
        result = execute_with_fallback(
            request, decision, self.providers, self.breakers, self.retry, self.clock
        )
        record_cost(result, decision, self.ledger, query_id=query_id)
        return result, decision


def default_mock_providers() -> dict[str, MockLlmProvider]:
    return {
        "mock-economy": MockLlmProvider("mock-economy", "mock-small"),
        "mock-standard": MockLlmProvider("mock-standard", "mock-medium"),
        "mock-premium": MockLlmProvider("mock-premium", "mock-large"),
    }
