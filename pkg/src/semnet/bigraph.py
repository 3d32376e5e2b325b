"""Bipartite and monopartite graph containers, V-motif counts and the naive projection."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BipartiteGraph",
    "MonoGraph",
    "degrees",
    "vmotif_count",
    "cooccurrence",
    "naive_projection",
]

_LAYERS = ("top", "bottom")


def _check_layer(layer: str) -> None:
    if layer not in _LAYERS:
        raise ValueError(f"layer must be 'top' or 'bottom', got {layer!r}")


@dataclass(frozen=True)
class BipartiteGraph:
    """Binary biadjacency between a top layer (rows) and a bottom layer (columns)."""

    top_labels: tuple[str, ...]
    bottom_labels: tuple[str, ...]
    biadjacency: sp.csr_matrix

    def __post_init__(self):
        m = sp.csr_matrix(self.biadjacency, dtype=np.int8)
        if m.shape != (len(self.top_labels), len(self.bottom_labels)):
            raise ValueError(
                f"biadjacency shape {m.shape} does not match labels "
                f"({len(self.top_labels)}, {len(self.bottom_labels)})"
            )
        if len(set(self.top_labels)) != len(self.top_labels):
            raise ValueError("duplicate top-layer labels")
        if len(set(self.bottom_labels)) != len(self.bottom_labels):
            raise ValueError("duplicate bottom-layer labels")
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.nnz and (m.data != 1).any():
            raise ValueError("biadjacency entries must be 0/1")
        m.sort_indices()
        object.__setattr__(self, "top_labels", tuple(self.top_labels))
        object.__setattr__(self, "bottom_labels", tuple(self.bottom_labels))
        object.__setattr__(self, "biadjacency", m)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[str, str]],
        top_labels: Sequence[str] | None = None,
        bottom_labels: Sequence[str] | None = None,
    ) -> "BipartiteGraph":
        """Build from (top, bottom) label pairs; repeated pairs collapse to one edge.

        Labels are sorted unless explicit layer orderings are given.
        """
        edges = list(edges)
        if top_labels is None:
            top_labels = sorted({t for t, _ in edges})
        if bottom_labels is None:
            bottom_labels = sorted({b for _, b in edges})
        ti = {lab: i for i, lab in enumerate(top_labels)}
        bi = {lab: j for j, lab in enumerate(bottom_labels)}
        pairs = {(ti[t], bi[b]) for t, b in edges}
        rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        m = sp.csr_matrix(
            (np.ones(len(pairs), dtype=np.int8), (rows, cols)),
            shape=(len(top_labels), len(bottom_labels)),
        )
        return cls(tuple(top_labels), tuple(bottom_labels), m)

    @classmethod
    def from_dense(cls, matrix, top_labels=None, bottom_labels=None) -> "BipartiteGraph":
        a = np.asarray(matrix)
        if top_labels is None:
            top_labels = [f"u{i}" for i in range(a.shape[0])]
        if bottom_labels is None:
            bottom_labels = [f"h{j}" for j in range(a.shape[1])]
        return cls(tuple(top_labels), tuple(bottom_labels), sp.csr_matrix(a))

    @property
    def shape(self) -> tuple[int, int]:
        return self.biadjacency.shape

    @property
    def n_edges(self) -> int:
        return int(self.biadjacency.nnz)

    def edges(self) -> list[tuple[str, str]]:
        coo = self.biadjacency.tocoo()
        out = [(self.top_labels[i], self.bottom_labels[j]) for i, j in zip(coo.row, coo.col)]
        out.sort()
        return out

    def dense(self) -> np.ndarray:
        return self.biadjacency.toarray().astype(np.int64)

    def transpose(self) -> "BipartiteGraph":
        return BipartiteGraph(self.bottom_labels, self.top_labels, self.biadjacency.T.tocsr())

    def to_tsv(self) -> str:
        return "".join(f"{t}\t{b}\n" for t, b in self.edges())

    @classmethod
    def from_tsv(cls, text: str) -> "BipartiteGraph":
        edges = []
        for line in io.StringIO(text):
            line = line.rstrip("\n")
            if line:
                t, b = line.split("\t")
                edges.append((t, b))
        return cls.from_edges(edges)


@dataclass(frozen=True)
class MonoGraph:
    """Undirected simple graph on one layer.

    ``adjacency`` is symmetric with a zero diagonal; ``weights`` (same
    sparsity) optionally carries V-motif counts, ``pvalues`` validation p-values.
    """

    labels: tuple[str, ...]
    adjacency: sp.csr_matrix
    weights: sp.csr_matrix | None = None
    pvalues: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        a = sp.csr_matrix(self.adjacency, dtype=np.int8)
        n = len(self.labels)
        if a.shape != (n, n):
            raise ValueError(f"adjacency shape {a.shape} does not match {n} labels")
        a.sum_duplicates()
        a.eliminate_zeros()
        if a.nnz:
            if (a.data != 1).any():
                raise ValueError("adjacency entries must be 0/1")
            if a.diagonal().any():
                raise ValueError("adjacency must have a zero diagonal")
            if (a != a.T).nnz:
                raise ValueError("adjacency must be symmetric")
        a.sort_indices()
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "adjacency", a)

    @classmethod
    def from_edges(cls, labels: Sequence[str], edges: Iterable[tuple[int, int]]) -> "MonoGraph":
        n = len(labels)
        pairs = {(min(i, j), max(i, j)) for i, j in edges if i != j}
        rows = [i for i, j in pairs] + [j for i, j in pairs]
        cols = [j for i, j in pairs] + [i for i, j in pairs]
        a = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
        return cls(tuple(labels), a)

    @classmethod
    def from_dense(cls, matrix, labels: Sequence[str] | None = None) -> "MonoGraph":
        a = np.asarray(matrix)
        if labels is None:
            labels = [str(i) for i in range(a.shape[0])]
        return cls(tuple(labels), sp.csr_matrix(a))

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n_nodes)]

    def edge_list(self) -> list[tuple[int, int]]:
        """Index pairs (i < j), ordered lexicographically by label."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        pairs = []
        for i, j in zip(coo.row.tolist(), coo.col.tolist()):
            if self.labels[j] < self.labels[i]:
                i, j = j, i
            pairs.append((i, j))
        pairs.sort(key=lambda p: (self.labels[p[0]], self.labels[p[1]]))
        return pairs

    def weight(self, i: int, j: int) -> int | None:
        if self.weights is None:
            return None
        return int(self.weights[i, j])

    def dense(self) -> np.ndarray:
        return self.adjacency.toarray().astype(np.int64)

    def subgraph(self, nodes: Sequence[int]) -> "MonoGraph":
        idx = np.asarray(nodes, dtype=np.int64)
        sub = self.adjacency[idx][:, idx]
        return MonoGraph(tuple(self.labels[i] for i in idx), sub)

    def to_tsv(self) -> str:
        """Edge list ``label_a<TAB>label_b<TAB>weight`` (weight 1 when unweighted)."""
        buf = io.StringIO()
        for i, j in self.edge_list():
            w = self.weight(i, j)
            buf.write(f"{self.labels[i]}\t{self.labels[j]}\t{1 if w is None else w}\n")
        return buf.getvalue()

    @classmethod
    def from_tsv(cls, text: str, labels: Sequence[str] | None = None) -> "MonoGraph":
        rows = []
        for line in io.StringIO(text):
            line = line.rstrip("\n")
            if line:
                a, b, *rest = line.split("\t")
                rows.append((a, b, int(rest[0]) if rest else 1))
        if labels is None:
            labels = sorted({x for a, b, _ in rows for x in (a, b)})
        index = {lab: i for i, lab in enumerate(labels)}
        n = len(labels)
        r = [index[a] for a, b, _ in rows] + [index[b] for a, b, _ in rows]
        c = [index[b] for a, b, _ in rows] + [index[a] for a, b, _ in rows]
        w = [x for _, _, x in rows] * 2
        adj = sp.csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n))
        weights = sp.csr_matrix((np.asarray(w, dtype=np.int64), (r, c)), shape=(n, n))
        return cls(tuple(labels), adj, weights)


def degrees(g: BipartiteGraph, layer: str) -> np.ndarray:
    """Row sums (``top``) or column sums (``bottom``) of the biadjacency."""
    _check_layer(layer)
    axis = 1 if layer == "top" else 0
    return np.asarray(g.biadjacency.sum(axis=axis), dtype=np.int64).ravel()


def _layer_matrix(g: BipartiteGraph, layer: str) -> sp.csr_matrix:
    # rows = nodes of the projected layer, columns = their neighbours
    _check_layer(layer)
    m = g.biadjacency if layer == "top" else g.biadjacency.T
    return sp.csr_matrix(m, dtype=np.int64)


def vmotif_count(g: BipartiteGraph, a: int, b: int, layer: str = "bottom") -> int:
    """Number of common neighbours of nodes ``a`` and ``b`` on ``layer``."""
    m = _layer_matrix(g, layer)
    n = m.shape[0]
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"node index out of range for {layer} layer of size {n}")
    if a == b:
        raise ValueError("V-motifs are defined for distinct nodes only")
    ra = m.indices[m.indptr[a]:m.indptr[a + 1]]
    rb = m.indices[m.indptr[b]:m.indptr[b + 1]]
    return int(np.intersect1d(ra, rb, assume_unique=True).size)


def cooccurrence(g: BipartiteGraph, layer: str = "bottom") -> sp.csr_matrix:
    """Sparse matrix of V-motif counts for all pairs on ``layer``, diagonal removed.

    Built as M M^T over sparse storage, so only pairs with a common neighbour
    are materialised.
    """
    m = _layer_matrix(g, layer)
    v = (m @ m.T).tocsr()
    v.setdiag(0)
    v.eliminate_zeros()
    v.sort_indices()
    return v


def naive_projection(g: BipartiteGraph, layer: str = "bottom") -> MonoGraph:
    """Link every pair sharing at least one neighbour; weights hold V-motif counts."""
    v = cooccurrence(g, layer)
    labels = g.top_labels if layer == "top" else g.bottom_labels
    adj = v.copy()
    adj.data = np.ones_like(adj.data, dtype=np.int8)
    return MonoGraph(labels, adj.astype(np.int8), v)
