"""Per-person mobility graphs and the node-layer descriptors.

The graph is a directed multigraph over trip purposes; edge multiplicities
are OD-pair trip counts over the whole observation period. Clustering
coefficients are taken on the undirected simple projection (directions and
multiplicities collapsed, self-loops dropped).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


class EmptyPersonError(ValueError):
    def __init__(self):
        super().__init__("empty_person")


@dataclass(frozen=True)
class MobilityGraph:
    nodes: frozenset
    edge_counts: dict

    @property
    def N(self):
        """Number of distinct OD purpose pairs."""
        return len(self.edge_counts)

    @property
    def T(self):
        """Total trip count."""
        return sum(self.edge_counts.values())

    def counts(self):
        """Edge counts in a deterministic (sorted-key) order."""
        return np.array([self.edge_counts[k] for k in sorted(self.edge_counts)], dtype=float)


@dataclass
class UndirectedProjection:
    nodes: list
    adjacency: dict = field(default_factory=dict)

    def degree(self, v):
        return len(self.adjacency[v])

    def triangles_at(self, v):
        nb = sorted(self.adjacency[v])
        return sum(1 for a, b in combinations(nb, 2) if b in self.adjacency[a])

    @property
    def n_triangles(self):
        return sum(self.triangles_at(v) for v in self.nodes) // 3

    @property
    def n_wedges(self):
        """Connected triplets, counted once per centre node and leaf pair."""
        return sum(math.comb(self.degree(v), 2) for v in self.nodes)


def build_graph(trips):
    """Count trips per (origin purpose, destination purpose)."""
    if not trips:
        raise EmptyPersonError()
    counts = Counter((t.origin_purpose, t.dest_purpose) for t in trips)
    nodes = frozenset(p for pair in counts for p in pair)
    return MobilityGraph(nodes, dict(counts))


def graph_from_counts(edge_counts):
    edge_counts = {k: int(v) for k, v in edge_counts.items() if v > 0}
    nodes = frozenset(p for pair in edge_counts for p in pair)
    return MobilityGraph(nodes, edge_counts)


def project(graph_or_edges, nodes=None):
    """Undirected simple projection of a mobility graph (or an edge iterable)."""
    if isinstance(graph_or_edges, MobilityGraph):
        edges = graph_or_edges.edge_counts.keys()
        nodes = graph_or_edges.nodes
    else:
        edges = list(graph_or_edges)
        if nodes is None:
            nodes = {p for e in edges for p in e}
    adj = {v: set() for v in nodes}
    for a, b in edges:
        if a == b:
            continue
        adj[a].add(b)
        adj[b].add(a)
    return UndirectedProjection(sorted(adj), adj)


def _entropy_bits(counts):
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    h = -float(np.sum(p * np.log2(p)))
    return h if h > 0 else 0.0


def trip_entropy(graph):
    """Shannon entropy (bits) of the OD-pair trip distribution."""
    counts = graph.counts() if isinstance(graph, MobilityGraph) else graph
    return _entropy_bits(counts)


def trip_gini(graph):
    """Gini coefficient of OD-pair usage, from cumulative sorted counts."""
    x = graph.counts() if isinstance(graph, MobilityGraph) else np.asarray(graph, float)
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    total = x.sum()
    if n == 0 or total <= 0:
        return 0.0
    cum = np.cumsum(x)
    return float(1.0 + 1.0 / n - 2.0 * cum.sum() / (n * total))


def global_clustering(proj):
    """3 * triangles / wedges; 0 when there are no wedges."""
    if isinstance(proj, MobilityGraph):
        proj = project(proj)
    wedges = proj.n_wedges
    if wedges == 0:
        return 0.0
    return 3.0 * proj.n_triangles / wedges


def mean_local_clustering(proj):
    """Average of 2 t_v / (k_v (k_v - 1)) over all nodes (0 when k_v < 2)."""
    if isinstance(proj, MobilityGraph):
        proj = project(proj)
    if not proj.nodes:
        return 0.0
    total = 0.0
    for v in proj.nodes:
        k = proj.degree(v)
        if k >= 2:
            total += 2.0 * proj.triangles_at(v) / (k * (k - 1))
    return total / len(proj.nodes)


def node_descriptors(trips):
    g = build_graph(trips)
    p = project(g)
    return {
        "trip_entropy": trip_entropy(g),
        "trip_gini": trip_gini(g),
        "global_clustering": global_clustering(p),
        "mean_local_clustering": mean_local_clustering(p),
    }
