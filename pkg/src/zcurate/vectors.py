"""Embedding index, k-NN proximity graph, community detection, dedup.

The index is exact: vectors are unit-normalized at insert and queries run a
full cosine scan, so results are reproducible and testable against a
brute-force oracle (an approximate backend can slot in behind the same
surface later). Deduplication builds a k-NN graph over the index, partitions
it by modularity with a Leiden-style optimizer (local moves, connected
refinement, aggregation, seeded restarts), and keeps one representative per
community.
"""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import VectorError

DEFAULT_K = 100
DEFAULT_TAU_EDGE = 0.0
DEFAULT_GAMMA = 1.0
DEFAULT_RESTARTS = 12

_NORM_TOL = 1e-12


class EmbeddingIndex:
    """Cosine index over unit-normalized vectors, ids kept in sorted order."""

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.metric = "cosine"
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def add(self, item_id: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != self.dimension:
            raise VectorError(
                "dim_mismatch", f"vector for {item_id} has dim {vec.shape}, index dim {self.dimension}"
            )
        norm = float(np.linalg.norm(vec))
        if norm < _NORM_TOL:
            raise VectorError("zero_vector", f"cannot normalize vector for {item_id}")
        self._ids.append(item_id)
        self._rows.append(vec / norm)
        self._matrix = None

    def _materialize(self) -> tuple[list[str], np.ndarray]:
        if self._matrix is None or len(self._ids) != self._matrix.shape[0]:
            order = sorted(range(len(self._ids)), key=lambda i: self._ids[i])
            self._ids = [self._ids[i] for i in order]
            self._rows = [self._rows[i] for i in order]
            self._matrix = (
                np.vstack(self._rows) if self._rows else np.zeros((0, self.dimension))
            )
        return self._ids, self._matrix

    def vector(self, item_id: str) -> np.ndarray:
        ids, matrix = self._materialize()
        import bisect

        i = bisect.bisect_left(ids, item_id)
        if i == len(ids) or ids[i] != item_id:
            raise VectorError("not_found", item_id)
        return matrix[i]


def build_index(records: Iterable, modality: str = "image") -> EmbeddingIndex:
    """Index the given modality's embedding of every record."""
    records = list(records)
    index: EmbeddingIndex | None = None
    for rec in records:
        emb = rec.embeddings.get(modality)
        if emb is None:
            raise VectorError("missing_embedding", f"record {rec.id} has no {modality} embedding")
        if index is None:
            index = EmbeddingIndex(len(emb))
        index.add(rec.id, emb)
    return index if index is not None else EmbeddingIndex(0)


def index_from_vectors(vectors: Mapping[str, Iterable[float]]) -> EmbeddingIndex:
    index: EmbeddingIndex | None = None
    for item_id in sorted(vectors):
        vec = list(vectors[item_id])
        if index is None:
            index = EmbeddingIndex(len(vec))
        index.add(item_id, vec)
    return index if index is not None else EmbeddingIndex(0)


def _normalize_query(index: EmbeddingIndex, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dimension:
        raise VectorError("dim_mismatch", f"query dim {q.shape}, index dim {index.dimension}")
    norm = float(np.linalg.norm(q))
    if norm < _NORM_TOL:
        raise VectorError("zero_vector", "cannot normalize query")
    return q / norm


def knn(index: EmbeddingIndex, query, k: int) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity, ties broken by ascending id."""
    if k < 1:
        raise VectorError("bad_k", f"k must be >= 1, got {k}")
    if len(index) == 0:
        return []
    ids, matrix = index._materialize()
    q = _normalize_query(index, query)
    sims = matrix @ q
    # rows are in ascending-id order, so a stable sort on -sim breaks ties by id
    order = np.argsort(-sims, kind="stable")[: min(k, len(ids))]
    return [(ids[i], float(sims[i])) for i in order]


def search(
    index: EmbeddingIndex, query, top_m: int, exclude: set[str] | frozenset = frozenset()
) -> list[tuple[str, float]]:
    """knn with an exclusion set applied before truncation."""
    if len(index) == 0:
        return []
    full = knn(index, query, len(index))
    return [(i, s) for i, s in full if i not in exclude][:top_m]


@dataclass
class ProximityGraph:
    """Undirected weighted k-NN graph; edges keyed (a, b) with a < b."""

    nodes: list[str]
    edges: dict[tuple[str, str], float]
    k: int

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for (a, b), w in self.edges.items():
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def total_weight(self) -> float:
        return sum(self.edges.values())


def build_knn_graph(
    index: EmbeddingIndex, k: int = DEFAULT_K, tau_edge: float = DEFAULT_TAU_EDGE
) -> ProximityGraph:
    """Connect each node to its k nearest (self excluded); drop edges below tau."""
    if len(index) == 0:
        raise VectorError("empty_index")
    ids, matrix = index._materialize()
    n = len(ids)
    sims = matrix @ matrix.T
    edges: dict[tuple[str, str], float] = {}
    kk = min(k, n - 1)
    for i in range(n):
        row = sims[i].copy()
        row[i] = -np.inf
        order = np.argsort(-row, kind="stable")[:kk]
        for j in order:
            w = float(sims[i, j])
            if w < tau_edge:
                continue
            key = (ids[i], ids[j]) if ids[i] < ids[j] else (ids[j], ids[i])
            edges[key] = w
    return ProximityGraph(nodes=list(ids), edges=edges, k=k)


@dataclass
class Partition:
    assignment: dict[str, int]
    count: int

    def communities(self) -> list[list[str]]:
        groups: dict[int, list[str]] = {}
        for node in sorted(self.assignment):
            groups.setdefault(self.assignment[node], []).append(node)
        return [groups[c] for c in sorted(groups)]


def modularity(graph: ProximityGraph, partition: Partition, gamma: float = DEFAULT_GAMMA) -> float:
    """Weighted modularity; zero-weight graphs score 0 by definition."""
    missing = set(graph.nodes) - set(partition.assignment)
    if missing:
        raise VectorError("partial_partition", f"{len(missing)} nodes unassigned")
    m = graph.total_weight()
    if m <= 0:
        return 0.0
    degree: dict[str, float] = {n: 0.0 for n in graph.nodes}
    sigma_in: dict[int, float] = {}
    for (a, b), w in graph.edges.items():
        degree[a] += w
        degree[b] += w
        if partition.assignment[a] == partition.assignment[b]:
            sigma_in[partition.assignment[a]] = sigma_in.get(partition.assignment[a], 0.0) + 2 * w
    sigma_tot: dict[int, float] = {}
    for node, deg in degree.items():
        c = partition.assignment[node]
        sigma_tot[c] = sigma_tot.get(c, 0.0) + deg
    q = 0.0
    for c in sigma_tot:
        q += sigma_in.get(c, 0.0) / (2 * m) - gamma * (sigma_tot[c] / (2 * m)) ** 2
    return q


# -- Leiden-style optimizer --------------------------------------------------


class _LevelGraph:
    """One aggregation level: integer nodes, adjacency dicts, self weights."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[dict[int, float]] = [dict() for _ in range(n)]
        self.self_w = [0.0] * n

    def add_edge(self, a: int, b: int, w: float) -> None:
        if a == b:
            self.self_w[a] += w
        else:
            self.adj[a][b] = self.adj[a].get(b, 0.0) + w
            self.adj[b][a] = self.adj[b].get(a, 0.0) + w

    def degrees(self) -> list[float]:
        return [sum(nbrs.values()) + 2 * self.self_w[v] for v, nbrs in enumerate(self.adj)]

    def total_weight(self) -> float:
        return sum(sum(nbrs.values()) for nbrs in self.adj) / 2 + sum(self.self_w)


def _local_moves(g: _LevelGraph, comm: list[int], gamma: float, rng: random.Random) -> bool:
    """Greedy single-node moves until no move improves; True if anything moved.

    A fast queue pass does the bulk of the work; full sweeps afterwards close
    the gap the queue heuristic leaves (community totals shift globally, but
    the queue only revisits neighbors).
    """
    m = g.total_weight()
    if m <= 0:
        return False
    k = g.degrees()
    tot: dict[int, float] = {}
    for v in range(g.n):
        tot[comm[v]] = tot.get(comm[v], 0.0) + k[v]
    state = {"next_comm": max(comm, default=-1) + 1, "moved": False}

    def try_move(v: int) -> bool:
        a = comm[v]
        links: dict[int, float] = {}
        for u, w in g.adj[v].items():
            links[comm[u]] = links.get(comm[u], 0.0) + w
        k_va = links.get(a, 0.0)
        tot_a_rest = tot[a] - k[v]
        best_c, best_gain = a, 0.0
        candidates = sorted(links)
        candidates.append(state["next_comm"])  # splitting off stays available
        for c in candidates:
            if c == a:
                continue
            k_vc = links.get(c, 0.0)
            tot_c = tot.get(c, 0.0)
            gain = (k_vc - k_va) / m - gamma * k[v] * (tot_c - tot_a_rest) / (2 * m * m)
            if gain > best_gain + 1e-12:
                best_gain, best_c = gain, c
        if best_c == a:
            return False
        comm[v] = best_c
        tot[a] -= k[v]
        tot[best_c] = tot.get(best_c, 0.0) + k[v]
        if best_c == state["next_comm"]:
            state["next_comm"] += 1
        state["moved"] = True
        return True

    order = list(range(g.n))
    rng.shuffle(order)
    queue = deque(order)
    queued = [True] * g.n
    while queue:
        v = queue.popleft()
        queued[v] = False
        if try_move(v):
            for u in g.adj[v]:
                if comm[u] != comm[v] and not queued[u]:
                    queue.append(u)
                    queued[u] = True
    # full sweeps until a complete pass makes no move
    while True:
        swept = False
        for v in order:
            if try_move(v):
                swept = True
        if not swept:
            break
    return state["moved"]


def _connected_refinement(g: _LevelGraph, comm: list[int]) -> list[int]:
    """Split every community into its connected components."""
    refined = [-1] * g.n
    next_id = 0
    for v in range(g.n):
        if refined[v] != -1:
            continue
        stack = [v]
        refined[v] = next_id
        while stack:
            x = stack.pop()
            for u in g.adj[x]:
                if refined[u] == -1 and comm[u] == comm[x]:
                    refined[u] = next_id
                    stack.append(u)
        next_id += 1
    return refined


def _randomized_refinement(
    g: _LevelGraph, comm: list[int], gamma: float, rng: random.Random, theta: float = 0.05
) -> list[int]:
    """Merge singletons within their community, randomly among uphill targets.

    The randomness (gain-weighted, temperature theta) varies how communities
    break into sub-pieces before aggregation, which is what lets different
    restarts explore genuinely different coarse moves.
    """
    m = g.total_weight()
    if m <= 0:
        return list(range(g.n))
    k = g.degrees()
    refined = list(range(g.n))
    rtot = {v: k[v] for v in range(g.n)}
    rsize = {v: 1 for v in range(g.n)}
    order = list(range(g.n))
    rng.shuffle(order)
    for v in order:
        if rsize[refined[v]] != 1:
            continue
        links: dict[int, float] = {}
        for u, w in g.adj[v].items():
            if comm[u] == comm[v] and refined[u] != refined[v]:
                links[refined[u]] = links.get(refined[u], 0.0) + w
        options: list[tuple[int, float]] = []
        for c in sorted(links):
            gain = links[c] / m - gamma * k[v] * rtot[c] / (2 * m * m)
            if gain > -1e-12:
                options.append((c, gain))
        if not options:
            continue
        weights = [math.exp(min(gain / theta, 50.0)) for _, gain in options]
        pick = rng.random() * sum(weights)
        acc = 0.0
        target = options[-1][0]
        for (c, _), w in zip(options, weights):
            acc += w
            if pick <= acc:
                target = c
                break
        old = refined[v]
        refined[v] = target
        rtot[target] += k[v]
        rsize[target] += 1
        rsize[old] = 0
    # densify ids
    remap: dict[int, int] = {}
    out = []
    for r in refined:
        if r not in remap:
            remap[r] = len(remap)
        out.append(remap[r])
    return out


def _aggregate(g: _LevelGraph, refined: list[int], comm: list[int]) -> tuple[_LevelGraph, list[int]]:
    n_new = max(refined) + 1
    agg = _LevelGraph(n_new)
    for v in range(g.n):
        agg.self_w[refined[v]] += g.self_w[v]
        for u, w in g.adj[v].items():
            if v < u:
                agg.add_edge(refined[v], refined[u], w)
    init = [0] * n_new
    for v in range(g.n):
        init[refined[v]] = comm[v]
    return agg, init


def _leiden_once(
    n: int,
    edges: list[tuple[int, int, float]],
    gamma: float,
    rng: random.Random,
    init: list[int] | None = None,
) -> list[int]:
    g = _LevelGraph(n)
    for a, b, w in edges:
        g.add_edge(a, b, w)
    comm = list(init) if init is not None else list(range(n))
    # membership[v] = original nodes inside current super-node v
    membership: list[list[int]] = [[v] for v in range(n)]
    while True:
        if not _local_moves(g, comm, gamma, rng):
            break
        refined = _randomized_refinement(g, comm, gamma, rng)
        if max(refined) + 1 == g.n:
            break
        g, new_comm = _aggregate(g, refined, comm)
        new_membership: list[list[int]] = [[] for _ in range(g.n)]
        for v, r in enumerate(refined):
            new_membership[r].extend(membership[v])
        membership, comm = new_membership, new_comm
    assignment = [0] * sum(len(ms) for ms in membership)
    for v, ms in enumerate(membership):
        for orig in ms:
            assignment[orig] = comm[v]
    return assignment


def _canonical(nodes: list[str], raw: list[int]) -> Partition:
    remap: dict[int, int] = {}
    assignment: dict[str, int] = {}
    for node, label in zip(nodes, raw):
        if label not in remap:
            remap[label] = len(remap)
        assignment[node] = remap[label]
    return Partition(assignment=assignment, count=len(remap))


def detect_communities(
    graph: ProximityGraph,
    gamma: float = DEFAULT_GAMMA,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> Partition:
    """Seeded multi-restart optimization; best modularity wins, ties by labeling."""
    if not graph.nodes:
        raise VectorError("empty_graph")
    nodes = sorted(graph.nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    edges = [(idx[a], idx[b], w) for (a, b), w in sorted(graph.edges.items())]
    best: tuple[float, list[int]] | None = None
    n = len(nodes)
    for r in range(max(1, restarts)):
        rng = random.Random(seed * 1_000_003 + r)
        if r == 0:
            init = None  # canonical singleton start
        else:
            groups = rng.randint(1, n)
            init = [rng.randrange(groups) for _ in range(n)]
        raw = _leiden_once(n, edges, gamma, rng, init)
        raw = _split_disconnected(n, edges, raw)
        part = _canonical(nodes, raw)
        q = modularity(graph, part, gamma)
        key = [part.assignment[n] for n in nodes]
        if best is None or q > best[0] + 1e-12 or (abs(q - best[0]) <= 1e-12 and key < best[1]):
            best = (q, key)
    return _canonical(nodes, best[1])


def _split_disconnected(n: int, edges: list[tuple[int, int, float]], comm: list[int]) -> list[int]:
    """Final guarantee: every community is internally connected."""
    g = _LevelGraph(n)
    for a, b, w in edges:
        g.add_edge(a, b, w)
    return _connected_refinement(g, comm)


# -- dedup -------------------------------------------------------------------


def deduplicate(
    partition: Partition,
    records: Mapping[str, object],
    strategy: str = "quality",
    score_key: str = "aesthetic",
) -> tuple[set[str], dict[str, str]]:
    """Pick one representative per community; everyone else maps onto it.

    strategy "quality" keeps the member with the highest external score under
    score_key (missing scores count as 0); "lowest_id" keeps the smallest id.
    Ties always resolve to the lowest id.
    """
    if strategy not in ("quality", "lowest_id"):
        raise VectorError("bad_strategy", strategy)

    def quality(node: str) -> float:
        rec = records.get(node)
        profile = getattr(rec, "profile", None) if rec is not None else None
        if isinstance(profile, dict):
            return float((profile.get("external_scores") or {}).get(score_key, 0.0))
        return 0.0

    representatives: set[str] = set()
    dropped: dict[str, str] = {}
    groups: dict[int, list[str]] = {}
    for node, c in partition.assignment.items():
        groups.setdefault(c, []).append(node)
    for members in groups.values():
        members.sort()
        if strategy == "quality":
            rep = min(members, key=lambda node: (-quality(node), node))
        else:
            rep = members[0]
        representatives.add(rep)
        for node in members:
            if node != rep:
                dropped[node] = rep
    return representatives, dropped


# -- export ------------------------------------------------------------------


def export_edge_list(graph: ProximityGraph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for (a, b), w in sorted(graph.edges.items()):
            f.write(f"{a} {b} {w:.6f}\n")


def export_partition(partition: Partition, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(partition.assignment, sort_keys=True, separators=(",", ":"))
    )


def community_size_histogram(partition: Partition) -> dict[int, int]:
    sizes: dict[int, int] = {}
    for members in partition.communities():
        sizes[len(members)] = sizes.get(len(members), 0) + 1
    return dict(sorted(sizes.items()))
