"""Per-site narrative distributions, JS-divergence site graph and Louvain communities."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .store import NarrativeStore

logger = logging.getLogger(__name__)

RANK_BUCKETS = (1_000, 5_000, 10_000, 50_000, 100_000, 500_000, 1_000_000, 5_000_000, 10_000_000, 50_000_000)
UNRANKED = "unranked"
DEFAULT_EPSILON = 0.1


class EmptyNarrativeSpace(ValueError):
    pass


def rank_bucket(rank: int | float | None) -> int | str:
    """Smallest popularity bucket containing ``rank``; None or beyond the last bucket is unranked."""
    if rank is None:
        return UNRANKED
    for b in RANK_BUCKETS:
        if rank <= b:
            return b
    return UNRANKED


@dataclass
class SiteProfile:
    domain: str
    rank_bucket: int | str
    narrative_counts: dict[int, int]
    smoothed_distribution: np.ndarray = field(repr=False)

    @property
    def total_articles(self) -> int:
        return sum(self.narrative_counts.values())


def narrative_distribution(counts: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Add ``epsilon`` to every count and normalize."""
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0:
        raise EmptyNarrativeSpace("no retained narratives")
    c = c + epsilon
    total = c.sum()
    if total <= 0:
        raise ValueError("counts sum to zero and epsilon is zero")
    return c / total


def _kl2(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def js_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen-Shannon divergence in bits, so the value lies in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution lengths differ: {p.shape} vs {q.shape}")
    m = (p + q) / 2.0
    val = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return min(1.0, max(0.0, val))


def site_article_counts(store: NarrativeStore, retained: Sequence[int]) -> dict[str, dict[int, int]]:
    """domain -> {cluster_id: distinct articles} over the retained clusters."""
    out: dict[str, dict[int, int]] = defaultdict(dict)
    for k in retained:
        for domain, arts in store.per_domain_articles[k].items():
            out[domain][k] = len(arts)
    return dict(out)


def build_profiles(
    store: NarrativeStore,
    retained: Sequence[int],
    ranks: Mapping[str, int | str] | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> list[SiteProfile]:
    """One profile per domain with at least one article in a retained narrative."""
    if not retained:
        raise EmptyNarrativeSpace("no retained narratives")
    ranks = ranks or {}
    counts = site_article_counts(store, retained)
    profiles = []
    for domain in sorted(counts):
        vec = [counts[domain].get(k, 0) for k in retained]
        profiles.append(
            SiteProfile(
                domain=domain,
                rank_bucket=ranks.get(domain, UNRANKED),
                narrative_counts=dict(counts[domain]),
                smoothed_distribution=narrative_distribution(vec, epsilon),
            )
        )
    return profiles


@dataclass
class SiteGraph:
    nodes: list[str]
    edges: list[tuple[str, str, float]]

    def weight(self, a: str, b: str) -> float | None:
        for u, v, w in self.edges:
            if {u, v} == {a, b}:
                return w
        return None


def build_site_graph(profiles: Sequence[SiteProfile], prune_below: float = 0.0) -> SiteGraph:
    """Complete graph with edge weight ``1 - JSD``; edges below ``prune_below`` are dropped."""
    nodes = [p.domain for p in profiles]
    edges = []
    for i in range(len(profiles)):
        for j in range(i + 1, len(profiles)):
            w = 1.0 - js_divergence(profiles[i].smoothed_distribution, profiles[j].smoothed_distribution)
            if w >= prune_below:
                edges.append((nodes[i], nodes[j], w))
    return SiteGraph(nodes, edges)


@dataclass
class CommunityPartition:
    membership: dict[str, int]
    modularity: float
    sweep_modularity: list[float] = field(default_factory=list)

    def communities(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for node, c in sorted(self.membership.items()):
            out[c].append(node)
        return dict(out)


def modularity(nodes: Sequence[str], edges: Iterable[tuple[str, str, float]], membership: Mapping[str, int], resolution: float = 1.0) -> float:
    edges = list(edges)
    m = sum(w for _, _, w in edges)
    if m <= 0:
        return 0.0
    deg = defaultdict(float)
    internal = defaultdict(float)
    for u, v, w in edges:
        deg[u] += w
        deg[v] += w
        if membership[u] == membership[v]:
            internal[membership[u]] += w
    tot = defaultdict(float)
    for n in nodes:
        tot[membership[n]] += deg[n]
    return sum(internal[c] / m - resolution * (tot[c] / (2 * m)) ** 2 for c in tot)


class _Level:
    """Weighted graph on integer nodes; self-loops carry aggregated internal weight."""

    def __init__(self, n: int, adj: list[dict[int, float]], loops: list[float]):
        self.n = n
        self.adj = adj
        self.loops = loops
        self.degree = [sum(adj[i].values()) + 2 * loops[i] for i in range(n)]
        self.m = (sum(self.degree)) / 2.0

    def modularity(self, comm: list[int], resolution: float) -> float:
        if self.m <= 0:
            return 0.0
        internal = defaultdict(float)
        tot = defaultdict(float)
        for i in range(self.n):
            tot[comm[i]] += self.degree[i]
            internal[comm[i]] += self.loops[i]
            for j, w in self.adj[i].items():
                if j > i and comm[j] == comm[i]:
                    internal[comm[i]] += w
        return sum(internal[c] / self.m - resolution * (tot[c] / (2 * self.m)) ** 2 for c in tot)


def _one_level(g: _Level, resolution: float, rng: np.random.Generator, trace: list[float]) -> tuple[list[int], bool]:
    comm = list(range(g.n))
    tot = list(g.degree)
    order = list(rng.permutation(g.n))
    m2 = 2.0 * g.m
    improved = False
    q = g.modularity(comm, resolution)
    while True:
        moves = 0
        for i in order:
            ci = comm[i]
            ki = g.degree[i]
            links: dict[int, float] = defaultdict(float)
            for j, w in g.adj[i].items():
                links[comm[j]] += w
            tot[ci] -= ki
            best_c = ci
            best_gain = links.get(ci, 0.0) - resolution * tot[ci] * ki / m2
            for c in sorted(links):
                gain = links[c] - resolution * tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] += ki
            if best_c != ci:
                comm[i] = best_c
                moves += 1
        if moves == 0:
            break
        improved = True
        new_q = g.modularity(comm, resolution)
        assert new_q >= q - 1e-10, f"modularity decreased in a local-move sweep: {q} -> {new_q}"
        q = new_q
        trace.append(q)
    return comm, improved


def _aggregate(g: _Level, comm: list[int]) -> tuple[_Level, list[int]]:
    labels = {c: i for i, c in enumerate(sorted(set(comm)))}
    dense = [labels[c] for c in comm]
    n = len(labels)
    adj: list[dict[int, float]] = [defaultdict(float) for _ in range(n)]
    loops = [0.0] * n
    for i in range(g.n):
        ci = dense[i]
        loops[ci] += g.loops[i]
        for j, w in g.adj[i].items():
            if j < i:
                continue
            cj = dense[j]
            if ci == cj:
                loops[ci] += w
            else:
                adj[ci][cj] += w
                adj[cj][ci] += w
    return _Level(n, [dict(a) for a in adj], loops), dense


def louvain_communities(graph: SiteGraph, resolution: float = 1.0, seed: int = 0) -> CommunityPartition:
    """Two-phase Louvain modularity optimization.

    The node visit order at each level is a permutation drawn from a
    generator seeded with ``seed``, so the result is reproducible.
    Community ids are numbered by first appearance in sorted node order.
    """
    nodes = sorted(graph.nodes)
    if not nodes:
        return CommunityPartition({}, 0.0)
    index = {n: i for i, n in enumerate(nodes)}
    adj: list[dict[int, float]] = [dict() for _ in nodes]
    loops = [0.0] * len(nodes)
    for u, v, w in graph.edges:
        i, j = index[u], index[v]
        if i == j:
            loops[i] += w
            continue
        adj[i][j] = adj[i].get(j, 0.0) + w
        adj[j][i] = adj[j].get(i, 0.0) + w
    level = _Level(len(nodes), adj, loops)
    rng = np.random.default_rng(seed)
    trace: list[float] = [level.modularity(list(range(level.n)), resolution)]
    assignment = list(range(len(nodes)))
    while True:
        comm, improved = _one_level(level, resolution, rng, trace)
        if not improved:
            break
        level, dense = _aggregate(level, comm)
        assignment = [dense[a] for a in assignment]
        if level.n == 1:
            break

    relabel: dict[int, int] = {}
    membership = {}
    for i, n in enumerate(nodes):
        membership[n] = relabel.setdefault(assignment[i], len(relabel))
    q = modularity(nodes, graph.edges, membership, resolution)
    return CommunityPartition(membership, q, trace)


def community_top_narratives(
    profiles: Sequence[SiteProfile], partition: CommunityPartition, n: int = 5
) -> dict[int, list[tuple[int, int]]]:
    """Per community, the ``n`` narratives with the most articles: [(cluster_id, articles)]."""
    totals: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for p in profiles:
        c = partition.membership.get(p.domain)
        if c is None:
            continue
        for k, cnt in p.narrative_counts.items():
            totals[c][k] += cnt
    return {
        c: sorted(t.items(), key=lambda kv: (-kv[1], kv[0]))[:n] for c, t in sorted(totals.items())
    }


def aggregate_counts(profiles: Sequence[SiteProfile], retained: Sequence[int]) -> np.ndarray:
    return np.array([sum(p.narrative_counts.get(k, 0) for p in profiles) for k in retained], dtype=np.float64)


def corpus_similarity(
    external_counts: Sequence[float], aggregate: Sequence[float], epsilon: float = DEFAULT_EPSILON
) -> float:
    """JSD between an external corpus's narrative counts and the pooled site counts."""
    return js_divergence(narrative_distribution(external_counts, epsilon), narrative_distribution(aggregate, epsilon))
