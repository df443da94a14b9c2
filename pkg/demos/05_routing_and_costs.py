"""Walkthrough: complexity-tiered routing, retries, circuit breaking, cost ledger.

Cheap models answer simple extractions; frontier models get genuinely complex
reasoning. A documented weighted-sum rule scores each query from five feature
families; scores below 0.4 route to tier 1, below 0.7 to tier 2, the rest to
tier 3. Failures back off exponentially and trip per-provider breakers.
"""

from decimal import Decimal

from reqrag.lexical import DomainDictionary
from reqrag.orchestrator import (
    CostLedger,
    Fail,
    FakeClock,
    GenerationRequest,
    RetryPolicy,
    ScriptedProvider,
    Succeed,
    CircuitBreaker,
    execute_with_fallback,
    extract_features,
    route,
    score_complexity,
)

dictionary = DomainDictionary(
    multiword_terms=frozenset({"emergency stop", "network segmentation"}),
    preserved_literals=frozenset({"MBN 9666-1", "IEC 62443"}),
)

print("=== 1. Three queries, three tiers ===")
queries = [
    "List voltage limit",
    "Describe the emergency stop test procedure in MBN 9666-1",
    "Analyze and compare the emergency stop and network segmentation requirements in "
    "MBN 9666-1 §3.4 and IEC 62443, justify deviations and trace compliance impact",
]
for query in queries:
    features = extract_features(query, context=["ctx"] * 3, dictionary=dictionary)
    score = score_complexity(features)
    decision = route(score)
    print(f"score {score:.3f} -> tier {decision.tier_id} "
          f"({decision.provider_id}, ${decision.rate_per_1k_tokens}/1K)  | {query[:60]}...")

print("\n=== 2. Exponential backoff on a fake clock (no real sleeping) ===")
clock = FakeClock()
flaky = ScriptedProvider("mock-economy", [Fail(), Fail(), Succeed(text="recovered")], clock)
result = execute_with_fallback(
    GenerationRequest(prompt="q"), route(0.1),
    providers={"mock-economy": flaky}, breakers={}, retry=RetryPolicy(), clock=clock,
)
print(f"attempts={result.attempts}, observed delays={clock.sleeps} seconds")

print("\n=== 3. A dead primary falls back down the chain ===")
clock = FakeClock()
dead = ScriptedProvider("mock-economy", [Fail("connection refused")] * 4, clock)
healthy = ScriptedProvider("mock-standard", [Succeed(text="standby answered")], clock)
result = execute_with_fallback(
    GenerationRequest(prompt="q"), route(0.1),
    providers={"mock-economy": dead, "mock-standard": healthy},
    breakers={}, retry=RetryPolicy(), clock=clock,
)
print(f"answered by {result.provider_id!r} after {result.attempts} total attempts")

print("\n=== 4. The breaker opens after 5 consecutive failures ===")
clock = FakeClock()
breaker = CircuitBreaker(failure_threshold=5, open_cooldown=60.0, clock=clock)
for _ in range(5):
    breaker.allow()
    breaker.record_failure()
print(f"state={breaker.state}; calls allowed now: {breaker.allow()}")
clock.advance(60.0)
print(f"after cooldown: probe allowed: {breaker.allow()} (state={breaker.state}); "
      f"a second concurrent probe: {breaker.allow()}")
breaker.record_success()
print(f"probe succeeded -> state={breaker.state}")

print("\n=== 5. Exact decimal cost accounting ===")
ledger = CostLedger()
scores = [0.1] * 35 + [0.5] * 52 + [0.9] * 13  # the production tier mix
for i, s in enumerate(scores):
    decision = route(s)
    ledger.record(f"q{i}", decision.tier_id, decision.provider_id, 1000, 0,
                  decision.rate_per_1k_tokens)
print(f"entries: {len(ledger.entries)}; totals by tier: "
      f"{ {k: str(v) for k, v in ledger.totals_by_tier().items()} }")
print(f"mean cost/query: ${ledger.total() / len(scores)} "
      f"(vs ${Decimal('0.03') * 100 / len(scores)} if everything ran on tier 3)")
