"""Node and network descriptors, persistence over days, and user polarization."""

from __future__ import annotations

import datetime as dt
import io
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .bigraph import BipartiteGraph, MonoGraph, degrees
from .mesoscale import Partition

__all__ = [
    "MetricsReport",
    "PersistenceTable",
    "PolarizationAssignment",
    "annd",
    "clustering_coefficient",
    "betweenness",
    "summarize",
    "day_range",
    "hashtag_persistence",
    "triadic_persistence",
    "polarization",
]


def annd(g: MonoGraph) -> list[float | None]:
    """Average degree of each node's neighbours; None for isolated nodes."""
    k = g.degree()
    s = g.adjacency.astype(np.int64) @ k
    return [None if k[i] == 0 else float(s[i] / k[i]) for i in range(g.n_nodes)]


def clustering_coefficient(g: MonoGraph) -> list[float | None]:
    """Local clustering: links among neighbours over k(k-1)/2; None when k < 2.

    Equal to counting ordered neighbour pairs that are linked over k(k-1).
    """
    a = g.adjacency.astype(np.int64)
    k = g.degree()
    # diagonal of A^3 counts each triangle through i twice
    tri2 = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel()
    return [None if k[i] < 2 else float(tri2[i] / (k[i] * (k[i] - 1))) for i in range(g.n_nodes)]


def betweenness(g: MonoGraph) -> np.ndarray:
    """Shortest-path betweenness summed over ordered source/target pairs.

    Brandes' accumulation: one BFS per source, dependencies back-propagated
    in order of decreasing distance. No 1/2 factor and no normalisation.
    """
    n = g.n_nodes
    nbrs = g.neighbors()
    bc = np.zeros(n)
    for s in range(n):
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        preds: list[list[int]] = [[] for _ in range(n)]
        order = []
        q = deque([s])
        while q:
            v = q.popleft()
            order.append(v)
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


@dataclass
class MetricsReport:
    labels: tuple[str, ...]
    degree: list[int]
    annd: list[float | None]
    clustering: list[float | None]
    betweenness: list[float]
    node_count: int
    edge_count: int
    mean_degree: float

    def to_json(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "mean_degree": self.mean_degree,
            "nodes": {
                lab: {
                    "degree": self.degree[i],
                    "annd": self.annd[i],
                    "clustering": self.clustering[i],
                    "betweenness": self.betweenness[i],
                }
                for i, lab in enumerate(self.labels)
            },
        }


def summarize(g: MonoGraph) -> MetricsReport:
    n, L = g.n_nodes, g.n_edges
    return MetricsReport(
        labels=g.labels,
        degree=g.degree().tolist(),
        annd=annd(g),
        clustering=clustering_coefficient(g),
        betweenness=betweenness(g).tolist(),
        node_count=n,
        edge_count=L,
        mean_degree=2.0 * L / n if n else 0.0,
    )


# --- persistence ---------------------------------------------------------------


@dataclass
class PersistenceTable:
    """Fraction of days on which each item (hashtag or triangle) is present."""

    values: dict
    n_days: int

    def sorted_items(self):
        def key(item):
            name = item[0]
            return (-item[1], name if isinstance(name, str) else "\t".join(name))

        return sorted(self.values.items(), key=key)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        for name, frac in self.sorted_items():
            label = name if isinstance(name, str) else "\t".join(name)
            buf.write(f"{label}\t{frac!r}\n")
        return buf.getvalue()


def day_range(days) -> list[dt.date]:
    """Every calendar day between the first and last of ``days``, inclusive."""
    days = sorted(days)
    if not days:
        return []
    n = (days[-1] - days[0]).days + 1
    return [days[0] + dt.timedelta(d) for d in range(n)]


def _n_days(keys, corpus_days):
    if corpus_days is not None:
        n = len(day_range(corpus_days))
    else:
        n = len(day_range(keys))
    if n < 1:
        raise ValueError("persistence needs at least one day")
    return n


def hashtag_persistence(
    daily_graphs: Mapping[dt.date, BipartiteGraph],
    corpus_days: Sequence[dt.date] | None = None,
) -> PersistenceTable:
    """Share of corpus days on which a hashtag is used at least once.

    The denominator spans the whole corpus date range (``corpus_days``, or
    the span of ``daily_graphs`` keys), days without graphs included.
    """
    n = _n_days(daily_graphs.keys(), corpus_days)
    counts: dict[str, int] = {}
    for g in daily_graphs.values():
        k = degrees(g, "bottom")
        for lab, d in zip(g.bottom_labels, k):
            if d >= 1:
                counts[lab] = counts.get(lab, 0) + 1
    return PersistenceTable({h: c / n for h, c in counts.items()}, n)


def _triangles(g: MonoGraph):
    lab = g.labels
    nbr_sets = [set(nb.tolist()) for nb in g.neighbors()]
    out = set()
    for i in range(g.n_nodes):
        higher = sorted(j for j in nbr_sets[i] if j > i)
        for j, k in combinations(higher, 2):
            if k in nbr_sets[j]:
                out.add(tuple(sorted((lab[i], lab[j], lab[k]))))
    return out


def triadic_persistence(
    daily_graphs: Mapping[dt.date, MonoGraph],
    corpus_days: Sequence[dt.date] | None = None,
) -> PersistenceTable:
    """Share of corpus days on which each closed triangle of labels exists."""
    n = _n_days(daily_graphs.keys(), corpus_days)
    counts: dict[tuple[str, str, str], int] = {}
    for g in daily_graphs.values():
        for tri in _triangles(g):
            counts[tri] = counts.get(tri, 0) + 1
    return PersistenceTable({t: c / n for t, c in counts.items()}, n)


# --- polarization ------------------------------------------------------------------


@dataclass
class PolarizationAssignment:
    """Non-verified user -> (community or None, polarization)."""

    assignments: dict[str, tuple[int | None, float | None]] = field(default_factory=dict)

    def assigned(self) -> dict[str, int]:
        return {u: c for u, (c, _) in self.assignments.items() if c is not None}

    def to_json(self) -> dict:
        return {u: {"community": c, "rho": rho} for u, (c, rho) in sorted(self.assignments.items())}


def polarization(
    retweet_graph: BipartiteGraph,
    verified_partition: Partition | Mapping[str, int],
    threshold: float = 0.5,
) -> PolarizationAssignment:
    """Assign each non-verified user to the community most of its verified neighbours share.

    ``rho`` is the largest fraction of the user's verified neighbours that fall
    into one community. The user is assigned only if that community is a
    strict maximum and ``rho >= threshold``. Neighbours outside the partition
    still count in the denominator.
    """
    if isinstance(verified_partition, Partition):
        if len(verified_partition.labels) != retweet_graph.shape[0]:
            raise ValueError("partition must label every verified (top-layer) user")
        comm = dict(zip(retweet_graph.top_labels, verified_partition.labels))
    else:
        comm = dict(verified_partition)
    col = retweet_graph.biadjacency.tocsc()
    out = PolarizationAssignment()
    for a, user in enumerate(retweet_graph.bottom_labels):
        nb = col.indices[col.indptr[a]:col.indptr[a + 1]]
        if nb.size == 0:
            out.assignments[user] = (None, None)
            continue
        counts: dict[int, int] = {}
        for i in nb:
            c = comm.get(retweet_graph.top_labels[i])
            if c is not None:
                counts[c] = counts.get(c, 0) + 1
        if not counts:
            out.assignments[user] = (None, 0.0)
            continue
        top = max(counts.values())
        rho = top / nb.size
        winners = [c for c, v in counts.items() if v == top]
        if len(winners) == 1 and rho >= threshold:
            out.assignments[user] = (winners[0], rho)
        else:
            out.assignments[user] = (None, rho)
    return out
