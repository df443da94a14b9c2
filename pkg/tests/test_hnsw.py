"""Vector index tests: graph invariants, determinism, the exact oracle, recall."""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from reqrag.errors import DuplicateIdError, SnapshotFormatError, ValidationError
from reqrag.hnsw import (
    HnswGraph,
    HnswParams,
    build_graph,
    exact_knn,
    load_graph,
    save_graph,
)


def unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 512))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def structured_unit(rng: np.random.Generator, n: int, intrinsic: int = 32) -> np.ndarray:
    """Random unit vectors concentrated near a random low-dimensional subspace,
    matching the geometry of real text embeddings."""
    basis = np.linalg.qr(rng.standard_normal((512, intrinsic)))[0]
    pts = rng.standard_normal((n, intrinsic)) @ basis.T + 0.05 * rng.standard_normal((n, 512))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def layer0_reachable(graph: HnswGraph) -> set[str]:
    ids = graph.ids
    if not ids:
        return set()
    entry = ids[graph.entry_point]
    seen = {entry}
    queue = deque([entry])
    while queue:
        node = queue.popleft()
        for neighbor in graph.neighbors(node, 0):
            if neighbor not in seen:
                seen.add(neighbor)
                queue.append(neighbor)
    return seen


class TestInsert:
    def test_first_insert_becomes_entry_point(self):
        rng = np.random.default_rng(0)
        g = HnswGraph(rng_seed=1)
        g.insert("only", unit(rng, 1)[0])
        assert g.ids[g.entry_point] == "only"
        assert g.top_layer == g.node_level("only")

    def test_two_nodes_are_mutual_neighbors(self):
        rng = np.random.default_rng(0)
        g = HnswGraph(rng_seed=1)
        vecs = unit(rng, 2)
        g.insert("a", vecs[0])
        g.insert("b", vecs[1])
        assert g.neighbors("a", 0) == ["b"]
        assert g.neighbors("b", 0) == ["a"]

    def test_duplicate_id_rejected(self):
        rng = np.random.default_rng(0)
        g = HnswGraph(rng_seed=1)
        v = unit(rng, 1)[0]
        g.insert("x", v)
        with pytest.raises(DuplicateIdError):
            g.insert("x", v)

    def test_non_unit_vector_rejected(self):
        g = HnswGraph(rng_seed=1)
        with pytest.raises(ValidationError):
            g.insert("x", np.ones(512))

    def test_wrong_shape_rejected(self):
        g = HnswGraph(rng_seed=1)
        with pytest.raises(ValidationError):
            g.insert("x", np.ones(100))

    def test_frozen_graph_rejects_inserts(self):
        rng = np.random.default_rng(0)
        g = HnswGraph(rng_seed=1)
        vecs = unit(rng, 2)
        g.insert("a", vecs[0])
        g.freeze()
        with pytest.raises(ValidationError):
            g.insert("b", vecs[1])

    def test_degree_caps_and_reachability_at_1000(self):
        rng = np.random.default_rng(42)
        vecs = unit(rng, 1000)
        g = HnswGraph(HnswParams(), rng_seed=7)
        for i in range(1000):
            g.insert(f"n{i:04d}", vecs[i])
        m = g.params.M
        for node_id in g.ids:
            level = g.node_level(node_id)
            for layer in range(level + 1):
                degree = len(g.neighbors(node_id, layer))
                cap = 2 * m if layer == 0 else m
                assert degree <= cap, f"{node_id} layer {layer}: degree {degree} > {cap}"
        assert layer0_reachable(g) == set(g.ids)

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            HnswParams(M=1)
        with pytest.raises(ValidationError):
            HnswParams(M=16, ef_construction=8)
        with pytest.raises(ValidationError):
            HnswParams(ef_search=0)


class TestSearch:
    def test_stored_vector_found_at_rank_one(self):
        rng = np.random.default_rng(3)
        vecs = unit(rng, 50)
        g = build_graph({f"v{i}": vecs[i] for i in range(50)}, rng_seed=5)
        results = g.search(vecs[17], k=3)
        assert results[0][0] == "v17"
        assert results[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_k_at_least_graph_size_returns_everything(self):
        rng = np.random.default_rng(3)
        vecs = unit(rng, 5)
        g = build_graph({f"v{i}": vecs[i] for i in range(5)}, rng_seed=5)
        assert len(g.search(vecs[0], k=10)) == 5

    def test_empty_graph_returns_empty(self):
        g = HnswGraph(rng_seed=1)
        assert g.search(np.zeros(512) + 1 / np.sqrt(512), k=5) == []

    def test_similarities_within_unit_interval(self):
        rng = np.random.default_rng(8)
        vecs = unit(rng, 100)
        g = build_graph({f"v{i}": vecs[i] for i in range(100)}, rng_seed=5)
        for _ in range(10):
            q = unit(rng, 1)[0]
            for _, sim in g.search(q, k=10):
                assert -1.0 - 1e-9 <= sim <= 1.0 + 1e-9

    def test_deterministic_under_fixed_seed(self):
        rng = np.random.default_rng(11)
        vecs = unit(rng, 300)
        mapping = {f"v{i}": vecs[i] for i in range(300)}
        g1 = build_graph(mapping, rng_seed=9)
        g2 = build_graph(mapping, rng_seed=9)
        for node_id in g1.ids:
            for layer in range(g1.node_level(node_id) + 1):
                assert g1.neighbors(node_id, layer) == g2.neighbors(node_id, layer)
        q = unit(rng, 1)[0]
        assert g1.search(q, k=20) == g2.search(q, k=20)

    def test_prefix_property_within_ef_search(self):
        rng = np.random.default_rng(13)
        vecs = unit(rng, 200)
        g = build_graph({f"v{i}": vecs[i] for i in range(200)}, rng_seed=3)
        q = unit(rng, 1)[0]
        for k in range(1, 30):
            assert g.search(q, k + 1)[:k] == g.search(q, k)

    def test_invalid_k(self):
        g = HnswGraph(rng_seed=1)
        with pytest.raises(ValidationError):
            g.search(np.ones(512) / np.sqrt(512), k=0)


class TestExactKnn:
    def test_singleton(self):
        rng = np.random.default_rng(0)
        v = unit(rng, 2)
        assert exact_knn({"only": v[0]}, v[1], k=5)[0][0] == "only"

    def test_orthogonal_basis_query(self):
        basis = {f"e{i}": np.eye(512)[i] for i in range(8)}
        results = exact_knn(basis, np.eye(512)[3], k=3)
        assert results[0] == ("e3", pytest.approx(1.0))

    def test_matches_independent_full_sort(self):
        rng = np.random.default_rng(21)
        vecs = unit(rng, 100)
        mapping = {f"v{i:03d}": vecs[i] for i in range(100)}
        q = unit(rng, 1)[0]
        got = exact_knn(mapping, q, k=100)
        # independent oracle: plain sort by (-similarity, id)
        expected = sorted(
            ((cid, float(vec @ q)) for cid, vec in mapping.items()),
            key=lambda pair: (-pair[1], pair[0]),
        )
        assert [cid for cid, _ in got] == [cid for cid, _ in expected]

    def test_ties_break_by_ascending_id(self):
        v = np.eye(512)[0]
        mapping = {"b": v, "a": v, "c": np.eye(512)[1]}
        results = exact_knn(mapping, v, k=2)
        assert [cid for cid, _ in results] == ["a", "b"]

    def test_empty_mapping(self):
        assert exact_knn({}, np.eye(512)[0], k=3) == []


class TestRecall:
    def test_recall_on_structured_vectors_small_scale(self):
        rng = np.random.default_rng(51)
        n = 2000
        pts = structured_unit(rng, n)
        mapping = {f"v{i:05d}": pts[i] for i in range(n)}
        g = build_graph(mapping, HnswParams(), rng_seed=42)
        queries = structured_unit(rng, 50)
        hits = 0
        for q in queries:
            approx = {cid for cid, _ in g.search(q, 10)}
            exact = {cid for cid, _ in exact_knn(mapping, q, 10)}
            hits += len(approx & exact)
        recall = hits / (10 * len(queries))
        assert recall >= 0.95, f"recall@10 = {recall:.3f}"


class TestSnapshot:
    def test_round_trip_preserves_search_results(self, tmp_path):
        rng = np.random.default_rng(31)
        vecs = unit(rng, 120)
        g = build_graph({f"v{i}": vecs[i] for i in range(120)}, rng_seed=2)
        path = tmp_path / "graph.idx"
        save_graph(g, path)
        loaded = load_graph(path)
        q = unit(rng, 1)[0]
        assert loaded.search(q, k=15) == g.search(q, k=15)
        assert len(loaded) == len(g)

    def test_rebuild_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(33)
        vecs = unit(rng, 60)
        mapping = {f"v{i}": vecs[i] for i in range(60)}
        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        save_graph(build_graph(mapping, rng_seed=4), p1)
        save_graph(build_graph(mapping, rng_seed=4), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b'{"magic": "WRONG"}\n')
        with pytest.raises(SnapshotFormatError):
            load_graph(path)

    def test_loaded_graph_is_frozen(self, tmp_path):
        rng = np.random.default_rng(35)
        vecs = unit(rng, 3)
        g = build_graph({f"v{i}": vecs[i] for i in range(3)}, rng_seed=4)
        path = tmp_path / "g.idx"
        save_graph(g, path)
        loaded = load_graph(path)
        with pytest.raises(ValidationError):
            loaded.insert("new", vecs[0])
