"""Hierarchical navigable small-world graph over unit vectors, plus an exact oracle.

Distance is ``1 - dot(a, b)`` on unit-norm vectors, so similarity reported by
searches is plain cosine. Construction is single-writer and seeded for full
reproducibility; after :meth:`HnswGraph.freeze` the graph is immutable and
safe to share across query threads. Corpus changes mean a rebuild — there is
no deletion.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from heapq import heappop, heappush
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedding import DIMENSION, NORM_TOLERANCE
from .errors import DuplicateIdError, SnapshotFormatError, ValidationError

GRAPH_SNAPSHOT_MAGIC = "RRHNSW"
GRAPH_SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class HnswParams:
    """Graph construction and search knobs.

    ``M`` caps per-node degree (doubled on layer 0), ``ef_construction`` and
    ``ef_search`` set the candidate beam widths, ``max_level_scale`` is the
    geometric level-sampling scale (defaults to 1/ln(M)).
    """

    M: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    max_level_scale: float | None = None

    def __post_init__(self):
        if self.M < 2:
            raise ValidationError(f"M must be >= 2, got {self.M}", field="M")
        if self.ef_construction < self.M:
            raise ValidationError(
                f"ef_construction must be >= M, got {self.ef_construction}",
                field="ef_construction",
            )
        if self.ef_search < 1:
            raise ValidationError(f"ef_search must be >= 1, got {self.ef_search}", field="ef_search")
        if self.max_level_scale is None:
            object.__setattr__(self, "max_level_scale", 1.0 / math.log(self.M))


class HnswGraph:
    """Seeded, append-only HNSW index keyed by external string ids."""

    def __init__(self, params: HnswParams = HnswParams(), rng_seed: int = 0):
        self.params = params
        self.rng_seed = rng_seed
        self._rng = random.Random(rng_seed)
        self._ids: list[str] = []
        self._rows: dict[str, int] = {}
        self._levels: list[int] = []
        self._neighbors: list[list[list[int]]] = []  # row -> layer -> neighbor rows
        self._matrix = np.zeros((256, DIMENSION), dtype=np.float32)
        self._count = 0
        self.entry_point: int | None = None
        self.top_layer = 0
        self._frozen = False

    def __len__(self) -> int:
        return self._count

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._rows

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, node_id: str) -> np.ndarray:
        return self._matrix[self._rows[node_id]].copy()

    def neighbors(self, node_id: str, layer: int) -> list[str]:
        row = self._rows[node_id]
        layers = self._neighbors[row]
        if layer >= len(layers):
            return []
        return [self._ids[r] for r in layers[layer]]

    def node_level(self, node_id: str) -> int:
        return self._levels[self._rows[node_id]]

    def freeze(self) -> "HnswGraph":
        self._frozen = True
        return self

    # --- construction ---------------------------------------------------

    def _sample_level(self) -> int:
        u = 1.0 - self._rng.random()  # in (0, 1], avoids log(0)
        return int(-math.log(u) * self.params.max_level_scale)

    def _grow(self):
        if self._count >= self._matrix.shape[0]:
            bigger = np.zeros((self._matrix.shape[0] * 2, DIMENSION), dtype=np.float32)
            bigger[: self._count] = self._matrix[: self._count]
            self._matrix = bigger

    def _distances(self, query: np.ndarray, rows: list[int]) -> np.ndarray:
        # Internal distance is negated dot product: same ordering as 1 - cos
        # on unit vectors, one array op cheaper. Similarity = -distance.
        return -(self._matrix[rows] @ query)

    def _search_layer(
        self,
        query: np.ndarray,
        entry_rows: list[int],
        layer: int,
        ef: int,
        qdists: np.ndarray | None = None,
    ) -> list[tuple[float, int]]:
        """Beam search one layer; returns (distance, row) ascending, deterministically.

        ``qdists`` optionally supplies precomputed query-to-node distances
        (construction computes them once per insert; serving stays on-demand).
        """
        visited = set(entry_rows)
        dists = qdists[entry_rows] if qdists is not None else self._distances(query, entry_rows)
        candidates: list[tuple[float, int]] = []  # min-heap
        best: list[tuple[float, int]] = []  # max-heap via negated distance
        for row, dist in zip(entry_rows, dists.tolist()):
            heappush(candidates, (dist, row))
            heappush(best, (-dist, row))
        while candidates:
            dist, row = heappop(candidates)
            if len(best) >= ef and dist > -best[0][0]:
                break
            layers = self._neighbors[row]
            if layer >= len(layers):
                continue
            unvisited = [r for r in layers[layer] if r not in visited]
            if not unvisited:
                continue
            visited.update(unvisited)
            ndists = qdists[unvisited] if qdists is not None else self._distances(query, unvisited)
            if len(best) >= ef:
                # Beam already full: only strictly closer neighbors matter, and
                # the bar only rises, so pre-filtering against the current bar
                # discards nothing the exact per-element check would keep.
                bar = -best[0][0]
                if float(ndists.min()) >= bar:
                    continue
                for i in (ndists < bar).nonzero()[0]:
                    ndist = float(ndists[i])
                    if ndist < -best[0][0]:
                        heappush(candidates, (ndist, unvisited[i]))
                        heappush(best, (-ndist, unvisited[i]))
                        heappop(best)
            else:
                for nrow, ndist in zip(unvisited, ndists.tolist()):
                    if len(best) < ef:
                        heappush(candidates, (ndist, nrow))
                        heappush(best, (-ndist, nrow))
                    elif ndist < -best[0][0]:
                        heappush(candidates, (ndist, nrow))
                        heappush(best, (-ndist, nrow))
                        heappop(best)
        return sorted((-negd, row) for negd, row in best)

    def _select_neighbors(self, candidates: list[tuple[float, int]], m: int) -> list[int]:
        """Diversity-preferring selection: keep candidates closer to the query
        than to anything already selected, then backfill with the nearest
        discards so degree stays full."""
        if len(candidates) <= m:
            return [row for _, row in candidates]
        rows = [row for _, row in candidates]  # candidates arrive sorted ascending
        query_dist = [d for d, _ in candidates]
        vecs = self._matrix[rows]
        # Small pools (degree pruning) amortize into one pairwise Gram matmul;
        # large pools (construction beams) stay incremental since selection
        # stops after m picks.
        gram = vecs @ vecs.T if len(rows) <= 64 else None
        min_to_selected = np.full(len(rows), np.inf)
        selected: list[int] = []
        discarded: list[int] = []
        for i, row in enumerate(rows):
            if len(selected) >= m:
                break
            if not selected or query_dist[i] < min_to_selected[i]:
                selected.append(row)
                cross = -gram[i] if gram is not None else -(vecs @ vecs[i])
                np.minimum(min_to_selected, cross, out=min_to_selected)
            else:
                discarded.append(row)
        for row in discarded:
            if len(selected) >= m:
                break
            selected.append(row)
        return selected

    def insert(self, node_id: str, vector: np.ndarray) -> "HnswGraph":
        """Insert one node; degree caps are enforced on both link directions."""
        if self._frozen:
            raise ValidationError("graph is frozen; rebuild to add vectors")
        if node_id in self._rows:
            raise DuplicateIdError("node", node_id)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (DIMENSION,):
            raise ValidationError(f"vector must have shape ({DIMENSION},), got {vector.shape}")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValidationError(f"vector norm {norm} outside 1 +/- {NORM_TOLERANCE}")
        vector = vector.astype(np.float32)

        self._grow()
        row = self._count
        self._matrix[row] = vector
        self._count += 1
        self._ids.append(node_id)
        self._rows[node_id] = row
        level = self._sample_level()
        self._levels.append(level)
        self._neighbors.append([[] for _ in range(level + 1)])

        if self.entry_point is None:
            self.entry_point = row
            self.top_layer = level
            return self

        m = self.params.M
        # One matmul against all existing rows; beam lookups become O(1).
        qdists = -(self._matrix[:row] @ vector)
        entry_rows = [self.entry_point]
        for layer in range(self.top_layer, level, -1):
            nearest = self._search_layer(vector, entry_rows, layer, 1, qdists)
            entry_rows = [nearest[0][1]]

        for layer in range(min(level, self.top_layer), -1, -1):
            candidates = self._search_layer(
                vector, entry_rows, layer, self.params.ef_construction, qdists
            )
            cap = 2 * m if layer == 0 else m
            selected = self._select_neighbors(candidates, m)
            self._neighbors[row][layer] = list(selected)
            for nrow in selected:
                links = self._neighbors[nrow][layer]
                links.append(row)
                if len(links) > cap:
                    ndists = self._distances(self._matrix[nrow], links)
                    ranked = sorted(zip(ndists.tolist(), links))
                    self._neighbors[nrow][layer] = self._select_neighbors(ranked, cap)
            entry_rows = [r for _, r in candidates]

        if level > self.top_layer:
            self.entry_point = row
            self.top_layer = level
        return self

    # --- search -----------------------------------------------------------

    def search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Approximate top-k as (id, cosine similarity), descending.

        The layer-0 beam width is ``max(ef_search, k)``; results for a fixed
        graph and query are fully deterministic, and ``search(q, k)`` is a
        prefix of ``search(q, k+1)`` while k stays within ef_search.
        """
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}", field="k")
        if self._count == 0:
            return []
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (DIMENSION,):
            raise ValidationError(f"query must have shape ({DIMENSION},), got {query.shape}")
        entry_rows = [self.entry_point]
        for layer in range(self.top_layer, 0, -1):
            nearest = self._search_layer(query, entry_rows, layer, 1)
            entry_rows = [nearest[0][1]]
        ef = max(self.params.ef_search, k)
        found = self._search_layer(query, entry_rows, 0, ef)
        return [(self._ids[row], -dist) for dist, row in found[:k]]


def insert(graph: HnswGraph, node_id: str, vector: np.ndarray) -> HnswGraph:
    return graph.insert(node_id, vector)


def search_knn(graph: HnswGraph, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    return graph.search(query, k)


def exact_knn(
    vectors: Mapping[str, np.ndarray], query: np.ndarray, k: int
) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity, ties broken by ascending id."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}", field="k")
    if not vectors:
        return []
    ids = sorted(vectors)
    matrix = np.stack([np.asarray(vectors[i], dtype=np.float64) for i in ids])
    sims = matrix @ np.asarray(query, dtype=np.float64)
    order = np.argsort(-sims, kind="stable")[:k]
    return [(ids[i], float(sims[i])) for i in order]


def build_graph(
    vectors: Mapping[str, np.ndarray],
    params: HnswParams = HnswParams(),
    rng_seed: int = 0,
) -> HnswGraph:
    """Insert all vectors in the mapping's iteration order and freeze the result."""
    graph = HnswGraph(params=params, rng_seed=rng_seed)
    for node_id, vector in vectors.items():
        graph.insert(node_id, vector)
    return graph.freeze()


def save_graph(graph: HnswGraph, path: str | Path) -> None:
    """Snapshot: one JSON header line plus the raw float32 vector matrix.

    Serialization is canonical (sorted keys, no timestamps), so identical
    builds produce byte-identical files.
    """
    path = Path(path)
    header = {
        "magic": GRAPH_SNAPSHOT_MAGIC,
        "version": GRAPH_SNAPSHOT_VERSION,
        "params": {
            "M": graph.params.M,
            "ef_construction": graph.params.ef_construction,
            "ef_search": graph.params.ef_search,
            "max_level_scale": graph.params.max_level_scale,
        },
        "rng_seed": graph.rng_seed,
        "count": graph._count,
        "ids": graph._ids,
        "levels": graph._levels,
        "neighbors": graph._neighbors,
        "entry_point": graph.entry_point,
        "top_layer": graph.top_layer,
    }
    with path.open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(graph._matrix[: graph._count]).tobytes())


def load_graph(path: str | Path) -> HnswGraph:
    path = Path(path)
    with path.open("rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SnapshotFormatError(f"bad graph snapshot header in {path}") from exc
        if header.get("magic") != GRAPH_SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"bad graph snapshot magic in {path}")
        if header.get("version") != GRAPH_SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"unsupported graph snapshot version {header.get('version')}")
        count = header["count"]
        raw = fh.read(count * DIMENSION * 4)
        matrix = np.frombuffer(raw, dtype=np.float32).reshape(count, DIMENSION).copy()
    params = HnswParams(**header["params"])
    graph = HnswGraph(params=params, rng_seed=header["rng_seed"])
    graph._ids = list(header["ids"])
    graph._rows = {node_id: i for i, node_id in enumerate(graph._ids)}
    graph._levels = list(header["levels"])
    graph._neighbors = [[list(layer) for layer in node] for node in header["neighbors"]]
    graph._matrix = matrix if count else np.zeros((256, DIMENSION), dtype=np.float32)
    graph._count = count
    graph.entry_point = header["entry_point"]
    graph.top_layer = header["top_layer"]
    graph.freeze()
    return graph
