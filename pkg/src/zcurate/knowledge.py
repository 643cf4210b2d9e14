"""Concept graph: centrality pruning, taxonomy, tag scoring, balanced sampling.

Concepts carry manual priority weights, hyperlink edges (for PageRank), a
taxonomy forest (parent-child), and per-concept occurrence counts over a
record corpus. Rarity of a tag combines its BM25 idf with the inverse of the
hierarchically propagated concept count, so records touching under-counted
concepts sample more often. Sampling is without replacement, stratified by
record source with largest-remainder quotas.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import GraphError

DEFAULT_DAMPING = 0.85
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_DECAY = 0.5
DEFAULT_EPSILON = 1.0
DEFAULT_WEIGHT = 1.0


@dataclass
class Concept:
    id: str
    name: str
    manual_weight: float = 1.0


class ConceptGraph:
    def __init__(self):
        self.concepts: dict[str, Concept] = {}
        self.hyperlinks: list[tuple[str, str]] = []
        self.parent: dict[str, str] = {}  # child -> parent
        self.pagerank: dict[str, float] | None = None
        self.counts: dict[str, int] = {}

    def add_concept(self, concept_id: str, name: str | None = None, manual_weight: float = 1.0) -> Concept:
        if manual_weight < 0:
            raise GraphError("bad_weight", f"manual_weight must be >= 0 for {concept_id}")
        c = Concept(concept_id, name if name is not None else concept_id, manual_weight)
        self.concepts[concept_id] = c
        return c

    def add_hyperlink(self, src: str, dst: str) -> None:
        if src not in self.concepts or dst not in self.concepts:
            raise GraphError("not_found", f"hyperlink {src}->{dst} references unknown concept")
        self.hyperlinks.append((src, dst))

    def set_parent(self, parent: str, child: str) -> None:
        if parent not in self.concepts or child not in self.concepts:
            raise GraphError("not_found", f"taxonomy {parent}->{child} references unknown concept")
        if child in self.parent:
            raise GraphError("multi_parent", f"{child} already has a parent")
        # walk up from the proposed parent to reject cycles
        cur: str | None = parent
        while cur is not None:
            if cur == child:
                raise GraphError("cycle", f"{parent}->{child} would create a cycle")
            cur = self.parent.get(cur)
        self.parent[child] = parent

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for child in sorted(self.parent):
            out.setdefault(self.parent[child], []).append(child)
        return out

    def roots(self) -> list[str]:
        return sorted(c for c in self.concepts if c not in self.parent)

    def name_index(self) -> dict[str, str]:
        """Lowercased concept name -> concept id (lowest id wins duplicates)."""
        out: dict[str, str] = {}
        for cid in sorted(self.concepts):
            key = self.concepts[cid].name.lower()
            out.setdefault(key, cid)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "concepts": [
                {"id": c.id, "name": c.name, "weight": c.manual_weight}
                for c in (self.concepts[k] for k in sorted(self.concepts))
            ],
            "hyperlinks": [list(e) for e in self.hyperlinks],
            "taxonomy": sorted([p, c] for c, p in self.parent.items()),
            "counts": dict(sorted(self.counts.items())),
            "pagerank": dict(sorted(self.pagerank.items())) if self.pagerank else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConceptGraph":
        g = cls()
        for c in d.get("concepts", []):
            g.add_concept(c["id"], c.get("name"), c.get("weight", 1.0))
        for src, dst in d.get("hyperlinks", []):
            g.add_hyperlink(src, dst)
        for p, c in d.get("taxonomy", []):
            g.set_parent(p, c)
        g.counts = {k: int(v) for k, v in (d.get("counts") or {}).items()}
        pr = d.get("pagerank")
        g.pagerank = {k: float(v) for k, v in pr.items()} if pr else None
        return g

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ConceptGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def count_concepts(graph: ConceptGraph, records: Iterable) -> dict[str, int]:
    """Occurrences of each concept over the records' tag lists (exact match)."""
    names = graph.name_index()
    counts = {cid: 0 for cid in graph.concepts}
    for rec in records:
        for tag in rec.tags:
            cid = names.get(tag.lower())
            if cid is not None:
                counts[cid] += 1
    graph.counts = counts
    return counts


# -- PageRank -----------------------------------------------------------------


class PageRankDiverged(GraphError):
    def __init__(self, last: dict[str, float], iterations: int):
        super().__init__("max_iter", f"pagerank did not converge in {iterations} iterations")
        self.last = last


def pagerank(
    graph: ConceptGraph,
    damping: float = DEFAULT_DAMPING,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> dict[str, float]:
    """Power iteration over hyperlink edges with uniform teleport.

    Dangling mass is redistributed uniformly; iteration stops when the L1
    delta drops below tol. Raises PageRankDiverged (carrying the last
    iterate) if max_iter is hit first.
    """
    nodes = sorted(graph.concepts)
    if not nodes:
        raise GraphError("empty_graph")
    n = len(nodes)
    idx = {c: i for i, c in enumerate(nodes)}
    out_edges: list[list[int]] = [[] for _ in range(n)]
    seen: set[tuple[str, str]] = set()
    for src, dst in graph.hyperlinks:
        if src == dst or (src, dst) in seen:
            continue
        seen.add((src, dst))
        out_edges[idx[src]].append(idx[dst])
    rank = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new = np.full(n, (1.0 - damping) / n)
        dangling = 0.0
        for i in range(n):
            if out_edges[i]:
                share = damping * rank[i] / len(out_edges[i])
                for j in out_edges[i]:
                    new[j] += share
            else:
                dangling += rank[i]
        new += damping * dangling / n
        delta = float(np.abs(new - rank).sum())
        rank = new
        if delta < tol:
            scores = {c: float(rank[idx[c]]) for c in nodes}
            graph.pagerank = scores
            return scores
    raise PageRankDiverged({c: float(rank[idx[c]]) for c in nodes}, max_iter)


def prune_by_centrality(graph: ConceptGraph, quantile: float) -> ConceptGraph:
    """Drop concepts scoring strictly below the score quantile; ties survive.

    Children of removed parents are promoted to roots. The pruned graph's
    pagerank is cleared (it no longer sums to 1) and must be recomputed.
    """
    if graph.pagerank is None:
        raise GraphError("no_pagerank", "run pagerank before pruning")
    if not 0 < quantile < 1:
        raise GraphError("bad_quantile", f"need 0 < q < 1, got {quantile}")
    scores = [graph.pagerank[c] for c in sorted(graph.concepts)]
    threshold = float(np.quantile(scores, quantile))
    keep = {c for c in graph.concepts if graph.pagerank[c] >= threshold}
    out = ConceptGraph()
    for cid in sorted(keep):
        c = graph.concepts[cid]
        out.add_concept(c.id, c.name, c.manual_weight)
    for src, dst in graph.hyperlinks:
        if src in keep and dst in keep:
            out.add_hyperlink(src, dst)
    for child, parent in graph.parent.items():
        if child in keep and parent in keep:
            out.set_parent(parent, child)
    out.counts = {c: n for c, n in graph.counts.items() if c in keep}
    return out


# -- taxonomy construction ----------------------------------------------------


def _kmeans(vectors: np.ndarray, k: int, rng: random.Random, iters: int = 50) -> list[int]:
    n = vectors.shape[0]
    if k >= n:
        return list(range(n))
    # farthest-first seeding from the first point keeps this deterministic
    centers = [0]
    dists = np.linalg.norm(vectors - vectors[0], axis=1)
    while len(centers) < k:
        nxt = int(np.argmax(dists))
        centers.append(nxt)
        dists = np.minimum(dists, np.linalg.norm(vectors - vectors[nxt], axis=1))
    cents = vectors[centers].copy()
    assign = np.full(n, -1, dtype=int)
    for _round in range(iters):
        d = np.linalg.norm(vectors[:, None, :] - cents[None, :, :], axis=2)
        new_assign = np.argmin(d, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = vectors[assign == c]
            if len(members):
                cents[c] = members.mean(axis=0)
    return [int(a) for a in assign]


def build_taxonomy(
    tag_embeddings: Mapping[str, Iterable[float]],
    branching: int = 8,
    depth_cap: int = 6,
    seed: int = 0,
) -> list[tuple[str, str]]:
    """Top-down recursive clustering; returns (parent, child) edges.

    Internal nodes get synthetic ids "cluster/<path>"; leaves are the tags.
    A single tag stays a root leaf with no edges.
    """
    if not tag_embeddings:
        raise GraphError("empty_taxonomy", "need at least one tag")
    if branching < 2:
        raise GraphError("bad_branching", "branching must be >= 2")
    tags = sorted(tag_embeddings)
    if len(tags) == 1:
        return []
    vectors = np.asarray([list(tag_embeddings[t]) for t in tags], dtype=np.float64)
    rng = random.Random(seed)
    edges: list[tuple[str, str]] = []

    def split(indices: list[int], path: str, depth: int) -> str:
        node_id = f"cluster/{path}"
        if len(indices) <= branching or depth >= depth_cap:
            edges.extend((node_id, tags[i]) for i in indices)
            return node_id
        assign = _kmeans(vectors[indices], branching, rng)
        groups: dict[int, list[int]] = {}
        for local, a in enumerate(assign):
            groups.setdefault(a, []).append(indices[local])
        if len(groups) <= 1:  # degenerate split: identical embeddings
            edges.extend((node_id, tags[i]) for i in indices)
            return node_id
        for out_pos, key in enumerate(sorted(groups)):
            child = split(groups[key], f"{path}.{out_pos}", depth + 1)
            edges.append((node_id, child))
        return node_id

    split(list(range(len(tags))), "0", 0)
    return edges


def merge_taxonomy(graph: ConceptGraph, edges: list[tuple[str, str]]) -> None:
    """Add taxonomy edges to the graph, creating missing cluster concepts."""
    for parent, child in edges:
        if parent not in graph.concepts:
            graph.add_concept(parent, parent)
        if child not in graph.concepts:
            graph.add_concept(child, child)
    for parent, child in edges:
        graph.set_parent(parent, child)


# -- BM25 ---------------------------------------------------------------------


@dataclass
class TagCorpusStats:
    doc_count: int
    doc_freq: dict[str, int]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    tag_counts: dict[str, Counter] = field(default_factory=dict)


def build_stats(records: Iterable) -> TagCorpusStats:
    doc_freq: dict[str, int] = {}
    doc_lengths: dict[str, int] = {}
    tag_counts: dict[str, Counter] = {}
    n = 0
    for rec in records:
        n += 1
        counts = Counter(t.lower() for t in rec.tags)
        tag_counts[rec.id] = counts
        doc_lengths[rec.id] = sum(counts.values())
        for tag in counts:
            doc_freq[tag] = doc_freq.get(tag, 0) + 1
    avg = (sum(doc_lengths.values()) / n) if n else 0.0
    return TagCorpusStats(n, doc_freq, doc_lengths, avg, tag_counts)


def idf(stats: TagCorpusStats, tag: str) -> float:
    df = stats.doc_freq.get(tag.lower(), 0)
    return math.log(1.0 + (stats.doc_count - df + 0.5) / (df + 0.5))


def bm25(
    stats: TagCorpusStats,
    tag: str,
    record_id: str,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    if record_id not in stats.doc_lengths:
        raise GraphError("not_found", f"record {record_id} not in corpus stats")
    tf = stats.tag_counts[record_id].get(tag.lower(), 0)
    if tf == 0:
        return 0.0
    dl = stats.doc_lengths[record_id]
    avgdl = stats.avg_doc_length or 1.0
    return idf(stats, tag) * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * dl / avgdl))


# -- count propagation and weights ---------------------------------------------


def propagate_counts(graph: ConceptGraph, decay: float = DEFAULT_DECAY) -> dict[str, float]:
    """effective(c) = counts(c) + decay * sum(effective(child)), leaves up."""
    if not 0 < decay <= 1:
        raise GraphError("bad_decay", f"need 0 < decay <= 1, got {decay}")
    children = graph.children()
    effective: dict[str, float] = {}
    state: dict[str, int] = {}  # 0 unseen, 1 on stack, 2 done

    def visit(node: str) -> float:
        if state.get(node) == 1:
            raise GraphError("cycle", f"taxonomy cycle through {node}")
        if state.get(node) == 2:
            return effective[node]
        state[node] = 1
        total = float(graph.counts.get(node, 0))
        for child in children.get(node, []):
            total += decay * visit(child)
        state[node] = 2
        effective[node] = total
        return total

    for node in sorted(graph.concepts):
        visit(node)
    return effective


def sampling_weight(
    record,
    graph: ConceptGraph,
    stats: TagCorpusStats,
    effective_counts: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
    default_weight: float = DEFAULT_WEIGHT,
) -> float:
    """Mean tag rarity: manual_weight * idf / (effective_count + epsilon).

    Records whose tags match no concept fall back to default_weight. Always
    positive.
    """
    names = graph.name_index()
    rarities: list[float] = []
    for tag in record.tags:
        cid = names.get(tag.lower())
        if cid is None:
            continue
        concept = graph.concepts[cid]
        rarity = concept.manual_weight * idf(stats, tag) / (effective_counts.get(cid, 0.0) + epsilon)
        rarities.append(rarity)
    if not rarities:
        return default_weight
    return sum(rarities) / len(rarities)


# -- stratified weighted sampling ----------------------------------------------


@dataclass
class SampleResult:
    ids: list[str]
    stratum_counts: dict[str, int]
    backfilled: int = 0

    def __iter__(self):
        return iter(self.ids)

    def __len__(self):
        return len(self.ids)


def _largest_remainder(n: int, fractions: dict[str, float]) -> dict[str, int]:
    quotas = {s: n * f for s, f in fractions.items()}
    base = {s: int(math.floor(q)) for s, q in quotas.items()}
    remaining = n - sum(base.values())
    order = sorted(fractions, key=lambda s: (-(quotas[s] - base[s]), s))
    for s in order[:remaining]:
        base[s] += 1
    return base


def weighted_sample(
    records: Iterable,
    weights: Mapping[str, float],
    n: int,
    seed: int = 0,
    mix: Mapping[str, float] | None = None,
) -> SampleResult:
    """Weight-proportional sampling without replacement, stratified by source.

    Each record draws one exponential key scaled by 1/weight (so scaling all
    weights by a positive constant cannot change the outcome); each stratum
    takes its quota of smallest keys, and any deficit backfills from the
    leftover pool in key order.
    """
    recs = sorted(records, key=lambda r: r.id)
    if n > len(recs):
        raise GraphError("sample_too_large", f"n={n} exceeds pool of {len(recs)}")
    if mix is not None:
        total = sum(mix.values())
        if abs(total - 1.0) > 1e-9:
            raise GraphError("bad_mix", f"mix fractions sum to {total}, expected 1")
    rng = random.Random(seed)
    keys: dict[str, float] = {}
    for rec in recs:
        w = float(weights[rec.id])
        if w <= 0:
            raise GraphError("bad_weight", f"weight for {rec.id} must be > 0")
        keys[rec.id] = rng.expovariate(1.0) / w

    strata: dict[str, list] = {}
    if mix is None:
        strata[""] = recs
        quotas = {"": n}
    else:
        for source in mix:
            strata[source] = []
        other: list = []
        for rec in recs:
            if rec.source in strata:
                strata[rec.source].append(rec)
            else:
                other.append(rec)
        if other:
            strata.setdefault("__other__", []).extend(other)
        quotas = _largest_remainder(n, dict(mix))
        quotas.setdefault("__other__", 0)

    chosen: list[str] = []
    counts: dict[str, int] = {}
    leftovers: list[tuple[float, str]] = []
    deficit = 0
    for source in sorted(strata):
        members = sorted(strata[source], key=lambda r: keys[r.id])
        quota = quotas.get(source, 0)
        take = members[:quota]
        if len(take) < quota:
            deficit += quota - len(take)
        chosen.extend(r.id for r in take)
        counts[source] = len(take)
        leftovers.extend((keys[r.id], r.id) for r in members[quota:])
    backfilled = 0
    if deficit:
        leftovers.sort()
        for _, rid in leftovers[:deficit]:
            chosen.append(rid)
            backfilled += 1
    chosen.sort(key=lambda rid: keys[rid])
    return SampleResult(ids=chosen, stratum_counts=counts, backfilled=backfilled)
