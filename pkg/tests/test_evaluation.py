"""Metric kernel tests: hand-computed oracles, brute-force U statistics, evolution rows."""

from __future__ import annotations

import math
import random

import pytest

from reqrag.errors import EvalInputError, MissingJudgmentsError, ValidationError
from reqrag.evaluation import (
    EvolutionRow,
    Qrels,
    RunFile,
    compare_runs,
    evaluate_run,
    evolution_report,
    format_change,
    format_table,
    latency_stats,
    mann_whitney_u,
    mrr,
    ndcg_at_k,
    parse_qrels,
    parse_run,
    precision_at_k,
)
from reqrag.fusion import StageTimings


def make_run(rankings: dict[str, list[str]]) -> RunFile:
    return RunFile(
        rankings={
            qid: [(cid, 1.0 / (i + 1)) for i, cid in enumerate(ids)]
            for qid, ids in rankings.items()
        }
    )


def make_qrels(judgments: dict[str, dict[str, int]]) -> Qrels:
    return Qrels(judgments=judgments)


class TestMrr:
    def test_first_relevant_at_rank_two(self):
        run = make_run({"q1": ["a", "b", "c"]})
        qrels = make_qrels({"q1": {"b": 3}})
        assert mrr(run, qrels) == pytest.approx(0.5, abs=1e-12)

    def test_no_relevant_results_scores_zero(self):
        run = make_run({"q1": ["a", "b"]})
        qrels = make_qrels({"q1": {"a": 1, "b": 2}})
        assert mrr(run, qrels) == 0.0

    def test_two_query_mean(self):
        run = make_run({"q1": ["a"], "q2": ["w", "x", "y", "z"]})
        qrels = make_qrels({"q1": {"a": 4}, "q2": {"z": 3}})
        assert mrr(run, qrels) == pytest.approx((1.0 + 0.25) / 2, abs=1e-12)

    def test_missing_judgments_error_names_query(self):
        run = make_run({"mystery": ["a"]})
        with pytest.raises(MissingJudgmentsError, match="mystery"):
            mrr(run, make_qrels({}))

    def test_threshold_configurable(self):
        run = make_run({"q1": ["a"]})
        qrels = make_qrels({"q1": {"a": 2}})
        assert mrr(run, qrels) == 0.0
        assert mrr(run, qrels, relevance_threshold=2) == 1.0


class TestPrecisionAtK:
    def test_three_relevant_in_top_five(self):
        run = make_run({"q1": ["a", "b", "c", "d", "e"]})
        qrels = make_qrels({"q1": {"a": 3, "c": 4, "e": 3, "b": 0, "d": 1}})
        assert precision_at_k(run, qrels, k=5) == pytest.approx(0.6, abs=1e-12)

    def test_all_relevant(self):
        run = make_run({"q1": ["a", "b", "c", "d", "e"]})
        qrels = make_qrels({"q1": {cid: 4 for cid in "abcde"}})
        assert precision_at_k(run, qrels, k=5) == 1.0

    def test_short_result_list_still_divides_by_k(self):
        run = make_run({"q1": ["a", "b", "c"]})
        qrels = make_qrels({"q1": {"a": 3, "b": 3, "c": 0}})
        assert precision_at_k(run, qrels, k=5) == pytest.approx(0.4, abs=1e-12)


class TestNdcg:
    def test_ideal_order_scores_one(self):
        run = make_run({"q1": ["best", "good", "meh"]})
        qrels = make_qrels({"q1": {"best": 4, "good": 2, "meh": 0}})
        assert ndcg_at_k(run, qrels, k=10) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_two_item_case(self):
        # run grades [0, 3] vs ideal [3, 0]:
        # DCG = 0/log2(2) + 7/log2(3); IDCG = 7/log2(2) = 7
        run = make_run({"q1": ["zero", "three"]})
        qrels = make_qrels({"q1": {"zero": 0, "three": 3}})
        expected = (7.0 / math.log2(3)) / 7.0
        got = ndcg_at_k(run, qrels, k=10)
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(0.6309, abs=5e-5)

    def test_all_zero_grades_score_zero(self):
        run = make_run({"q1": ["a", "b"]})
        qrels = make_qrels({"q1": {"a": 0, "b": 0}})
        assert ndcg_at_k(run, qrels) == 0.0

    def test_permuting_irrelevant_tail_changes_nothing(self):
        qrels = make_qrels({"q1": {"a": 4, "b": 3} | {f"junk{i}": 0 for i in range(10)}})
        head = ["a", "b"]
        tail = [f"junk{i}" for i in range(10)]
        rng = random.Random(1)
        baseline_ndcg = ndcg_at_k(make_run({"q1": head + tail}), qrels, k=5)
        baseline_p = precision_at_k(make_run({"q1": head + tail}), qrels, k=5)
        for _ in range(10):
            rng.shuffle(tail)
            run = make_run({"q1": head + tail})
            assert ndcg_at_k(run, qrels, k=5) == pytest.approx(baseline_ndcg, abs=1e-12)
            assert precision_at_k(run, qrels, k=5) == pytest.approx(baseline_p, abs=1e-12)

    def test_metrics_stay_in_unit_interval(self):
        rng = random.Random(5)
        for _ in range(50):
            ids = [f"c{i}" for i in range(rng.randint(1, 12))]
            run = make_run({"q": rng.sample(ids, len(ids))})
            qrels = make_qrels({"q": {cid: rng.randint(0, 4) for cid in ids}})
            for value in (
                mrr(run, qrels),
                precision_at_k(run, qrels, k=5),
                ndcg_at_k(run, qrels, k=10),
            ):
                assert 0.0 <= value <= 1.0


def brute_force_u(sample_a, sample_b) -> float:
    """Independent oracle: count pairs where a beats b, ties at half weight."""
    u1 = 0.0
    for a in sample_a:
        for b in sample_b:
            if a > b:
                u1 += 1.0
            elif a == b:
                u1 += 0.5
    return min(u1, len(sample_a) * len(sample_b) - u1)


class TestMannWhitney:
    def test_identical_samples(self):
        u, p = mann_whitney_u([1, 2, 3], [1, 2, 3])
        assert u == pytest.approx(4.5, abs=1e-12)
        assert p == 1.0

    def test_fully_separated_samples(self):
        u, p = mann_whitney_u([1, 2, 3], [10, 11, 12])
        assert u == 0.0
        # exact: of C(6,3)=20 splits only 2 reach min-U 0
        assert p == pytest.approx(0.1, abs=1e-12)

    def test_matches_brute_force_pair_counting(self):
        rng = random.Random(11)
        for _ in range(300):
            n1, n2 = rng.randint(1, 8), rng.randint(1, 8)
            a = [rng.randint(0, 6) / 2.0 for _ in range(n1)]
            b = [rng.randint(0, 6) / 2.0 for _ in range(n2)]
            u, _ = mann_whitney_u(a, b)
            assert u == pytest.approx(brute_force_u(a, b), abs=1e-9)

    def test_symmetry(self):
        rng = random.Random(13)
        for _ in range(50):
            a = [rng.random() for _ in range(rng.randint(1, 6))]
            b = [rng.random() for _ in range(rng.randint(1, 6))]
            assert mann_whitney_u(a, b) == mann_whitney_u(b, a)

    def test_large_sample_normal_approximation(self):
        rng = random.Random(17)
        a = [rng.gauss(0.0, 1.0) for _ in range(40)]
        b = [rng.gauss(1.0, 1.0) for _ in range(40)]
        u, p = mann_whitney_u(a, b)
        assert u == pytest.approx(brute_force_u(a, b), abs=1e-9)
        assert 0.0 <= p <= 1.0
        assert p < 0.05  # strong separation should be significant

    def test_empty_sample_rejected(self):
        with pytest.raises(EvalInputError):
            mann_whitney_u([], [1.0])


class TestLatencyStats:
    def test_single_timing(self):
        t = StageTimings(dense_ms=5, sparse_ms=2, fuse_ms=1, rerank_ms=1, total_ms=9)
        stats = latency_stats([t])
        assert stats["total_ms"].mean == stats["total_ms"].p50 == stats["total_ms"].p95 == 9

    def test_nearest_rank_p95_of_1_to_100(self):
        timings = [
            StageTimings(dense_ms=0, sparse_ms=0, fuse_ms=0, rerank_ms=0, total_ms=float(i))
            for i in range(1, 101)
        ]
        assert latency_stats(timings)["total_ms"].p95 == 95.0

    def test_empty_rejected(self):
        with pytest.raises(EvalInputError):
            latency_stats([])


class FakeMeta:
    def __init__(self, year, category):
        self.year = year
        self.category = category


class TestEvolution:
    def _records(self):
        records = []
        # start year: 1,487 total of which 5 IT Security, 342 Functional Safety
        records += [FakeMeta(2015, "IT Security") for _ in range(5)]
        records += [FakeMeta(2015, "Functional Safety") for _ in range(342)]
        records += [FakeMeta(2015, "Functional (General)") for _ in range(1140)]
        # end year: 669 total of which 95 IT Security, 187 Functional Safety
        records += [FakeMeta(2023, "IT Security") for _ in range(95)]
        records += [FakeMeta(2023, "Functional Safety") for _ in range(187)]
        records += [FakeMeta(2023, "Functional (General)") for _ in range(369)]
        records += [FakeMeta(2023, "Network Segmentation") for _ in range(18)]
        return records

    def test_reproduces_reference_change_columns(self):
        table = evolution_report(self._records(), 2015, 2023)
        rows = {r.category: r for r in table.rows}
        assert rows["Total"].count_start == 1487
        assert rows["Total"].count_end == 669
        assert rows["Total"].change == "-55%"
        assert rows["IT Security"].change == "+1,800%"
        assert rows["Network Segmentation"].count_start == 0
        assert rows["Network Segmentation"].change == "New"

    def test_change_column_recomputes_from_counts(self):
        table = evolution_report(self._records(), 2015, 2023)
        for row in table.rows:
            assert row.change == format_change(row.count_start, row.count_end)

    def test_missing_year_reported(self):
        with pytest.raises(EvalInputError, match="1999"):
            evolution_report(self._records(), 1999, 2023)
        with pytest.raises(EvalInputError, match="2050"):
            evolution_report(self._records(), 2015, 2050)

    def test_format_change_cases(self):
        assert format_change(1487, 669) == "-55%"
        assert format_change(5, 95) == "+1,800%"
        assert format_change(0, 18) == "New"
        assert format_change(10, 0) == "-100%"
        assert format_change(100, 100) == "+0%"

    def test_works_with_chunk_metadata(self):
        from reqrag.ingest import ChunkMetadata

        records = [
            ChunkMetadata(doc_id="a", version_timestamp="2015-01-01", year=2015, category="X"),
            ChunkMetadata(doc_id="b", version_timestamp="2023-01-01", year=2023, category="X"),
        ]
        table = evolution_report(records, 2015, 2023)
        assert table.rows[0] == EvolutionRow("Total", 1, 1, "+0%")


class TestParsers:
    def test_qrels_round_trip(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        path.write_text("q1\tc1\t3\nq1\tc2\t0\nq2\tc1\t4\n")
        qrels = parse_qrels(path)
        assert qrels.judgments == {"q1": {"c1": 3, "c2": 0}, "q2": {"c1": 4}}

    def test_qrels_bad_grade_line_numbered(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        path.write_text("q1\tc1\t3\nq1\tc2\tseven\n")
        with pytest.raises(EvalInputError, match="line 2"):
            parse_qrels(path)

    def test_qrels_grade_out_of_range(self, tmp_path):
        path = tmp_path / "qrels.tsv"
        path.write_text("q1\tc1\t9\n")
        with pytest.raises(EvalInputError, match="line 1"):
            parse_qrels(path)

    def test_run_sorted_by_rank_and_extra_columns_ignored(self, tmp_path):
        path = tmp_path / "run.tsv"
        path.write_text("q1\tc2\t2\t0.5\textra\nq1\tc1\t1\t0.9\n")
        run = parse_run(path)
        assert [cid for cid, _ in run.rankings["q1"]] == ["c1", "c2"]

    def test_run_too_few_columns(self, tmp_path):
        path = tmp_path / "run.tsv"
        path.write_text("q1\tc1\t1\n")
        with pytest.raises(EvalInputError, match="line 1"):
            parse_run(path)

    def test_run_duplicate_chunk_rejected(self, tmp_path):
        path = tmp_path / "run.tsv"
        path.write_text("q1\tc1\t1\t0.9\nq1\tc1\t2\t0.5\n")
        with pytest.raises(EvalInputError, match="line 2"):
            parse_run(path)


class TestReports:
    def test_evaluate_run_bundle(self):
        run = make_run({"q1": ["a", "b"], "q2": ["c"]})
        qrels = make_qrels({"q1": {"a": 4, "b": 0}, "q2": {"c": 0, "d": 3}})
        report = evaluate_run(run, qrels)
        assert report.mrr == pytest.approx(0.5)
        assert report.query_count == 2

    def test_compare_runs_emits_u_and_p(self):
        run_a = make_run({f"q{i}": ["hit", "x"] for i in range(6)})
        run_b = make_run({f"q{i}": ["x", "hit"] for i in range(6)})
        qrels = make_qrels({f"q{i}": {"hit": 4, "x": 0} for i in range(6)})
        result = compare_runs(run_a, run_b, qrels)
        assert result["n_a"] == result["n_b"] == 6
        assert 0.0 <= result["p_value"] <= 1.0

    def test_format_table_alignment(self):
        text = format_table(("name", "value"), [("a", 1), ("longer", 22)])
        lines = text.splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("name")
        assert all(len(line) <= max(len(x) for x in lines) for line in lines)
