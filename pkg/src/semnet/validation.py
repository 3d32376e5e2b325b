"""Statistical validation of bipartite projections.

Each pair of nodes on the projected layer is tested on its number of common
neighbours (V-motifs). Under a null model the count is a sum of independent
Bernoulli trials, so its upper tail is Poisson-Binomial (BiCM) or Binomial
(BiPCM, BiRGM). The resulting p-values go through a Benjamini-Hochberg
selection whose number of hypotheses is every pair on the layer.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import betainc, gammaln, logsumexp

from .bigraph import BipartiteGraph, MonoGraph, cooccurrence
from .nullmodels import BICM, BIPCM, BIRGM, NullModel

__all__ = [
    "PairPValue",
    "FdrResult",
    "poisson_binomial_sf",
    "poisson_binomial_sf_batch",
    "binomial_sf",
    "binomial_sf_batch",
    "pair_pvalue",
    "pair_pvalues",
    "fdr_select",
    "validated_projection",
    "transpose_model",
    "projection_tsv",
]


@dataclass(frozen=True)
class PairPValue:
    a: int
    b: int
    observed: int
    pvalue: float


@dataclass(frozen=True)
class FdrResult:
    threshold_index: int
    threshold_pvalue: float | None
    kept: frozenset
    t: float
    m: int

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "t": self.t,
            "threshold_index": self.threshold_index,
            "threshold_pvalue": self.threshold_pvalue,
            "kept_count": len(self.kept),
        }


# --- tail probabilities --------------------------------------------------------


def _check_probs(probs: np.ndarray) -> None:
    if probs.size and (np.isnan(probs).any() or probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")


def poisson_binomial_sf(probs: Sequence[float], n_star: int) -> float:
    """P(X >= n_star) for X a sum of independent Bernoulli(probs[j]).

    The PMF is convolved one trial at a time over the states 0..n_star-1,
    with state n_star absorbing all outcomes at or above the threshold, so
    the tail is accumulated from nonnegative terms only.
    """
    probs = np.asarray(probs, dtype=float).ravel()
    _check_probs(probs)
    if not 0 <= n_star <= probs.size:
        raise ValueError(f"n_star={n_star} outside [0, {probs.size}]")
    return float(poisson_binomial_sf_batch(probs[None, :], np.array([n_star]))[0])


def poisson_binomial_sf_batch(probs: np.ndarray, n_star: np.ndarray) -> np.ndarray:
    """Row-wise :func:`poisson_binomial_sf` for a (rows x trials) matrix."""
    probs = np.asarray(probs, dtype=float)
    n_star = np.asarray(n_star, dtype=np.int64)
    _check_probs(probs)
    rows = probs.shape[0]
    out = np.ones(rows)
    if rows == 0:
        return out
    if (n_star < 0).any() or (n_star > probs.shape[1]).any():
        raise ValueError("n_star outside [0, number of trials]")
    # process rows with similar thresholds together to keep the state vector short
    order = np.argsort(n_star, kind="stable")
    chunk = 256
    for start in range(0, rows, chunk):
        idx = order[start:start + chunk]
        ns = n_star[idx]
        width = int(ns.max())
        if width == 0:
            continue
        p = probs[idx]
        # state[:, s] = P(partial sum == s) for s < width; state[:, width] = P(sum >= width)
        state = np.zeros((idx.size, width + 1))
        state[:, 0] = 1.0
        for j in range(p.shape[1]):
            q = p[:, j:j + 1]
            if not q.any():
                continue
            moved = state[:, :width] * q
            state[:, :width] -= moved
            state[:, 1:width + 1] += moved
        # renormalisation guard against drift
        state /= state.sum(axis=1, keepdims=True)
        cols = np.arange(width + 1)[None, :]
        tail = np.where(cols >= ns[:, None], state, 0.0).sum(axis=1)
        out[idx] = np.where(ns == 0, 1.0, np.clip(tail, 0.0, 1.0))
    return out


def binomial_sf(n: int, p: float, n_star: int) -> float:
    """P(X >= n_star) for X ~ Binomial(n, p), summed term by term in log space."""
    if not 0 <= n_star <= n:
        raise ValueError(f"n_star={n_star} outside [0, {n}]")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if n_star == 0:
        return 1.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    ks = np.arange(n_star, n + 1)
    log_terms = (gammaln(n + 1) - gammaln(ks + 1) - gammaln(n - ks + 1)
                 + ks * math.log(p) + (n - ks) * math.log1p(-p))
    return float(min(1.0, math.exp(logsumexp(log_terms))))


def binomial_sf_batch(n: int, p: np.ndarray, n_star: np.ndarray) -> np.ndarray:
    """Vectorised binomial upper tail via the regularised incomplete beta function.

    Uses P(X >= k) = I_p(k, n - k + 1) for k >= 1.
    """
    p = np.asarray(p, dtype=float)
    n_star = np.asarray(n_star, dtype=np.int64)
    out = np.ones(p.shape)
    pos = n_star > 0
    if pos.any():
        k = n_star[pos].astype(float)
        out[pos] = betainc(k, n - k + 1.0, p[pos])
    return np.clip(out, 0.0, 1.0)


# --- pair p-values ------------------------------------------------------------------


def transpose_model(m: NullModel) -> NullModel:
    """The same model with the two layers swapped."""
    shape = (m.shape[1], m.shape[0])
    if m.kind == BICM:
        return NullModel(BICM, shape, top_multipliers=m.bottom_multipliers,
                         bottom_multipliers=m.top_multipliers, report=m.report,
                         pinned_top=m.pinned_bottom, pinned_bottom=m.pinned_top,
                         fixed_links=tuple(sorted((a, i) for i, a in m.fixed_links)))
    if m.kind == BIPCM:
        flipped = "top" if m.constrained_layer == "bottom" else "bottom"
        return NullModel(BIPCM, shape, rates=m.rates, constrained_layer=flipped)
    return NullModel(BIRGM, shape, uniform_p=m.uniform_p)


def _oriented(g: BipartiteGraph, model: NullModel, layer: str):
    if model.shape != g.shape:
        raise ValueError(f"model shape {model.shape} does not match graph shape {g.shape}")
    if layer == "bottom":
        return g, model
    if layer == "top":
        return g.transpose(), transpose_model(model)
    raise ValueError(f"layer must be 'top' or 'bottom', got {layer!r}")


def _pvalues_for_pairs(g: BipartiteGraph, model: NullModel, a: np.ndarray, b: np.ndarray,
                       observed: np.ndarray) -> np.ndarray:
    # g and model are oriented so the projected layer is the bottom one
    n_top = g.shape[0]
    if model.kind == BIRGM:
        q = np.full(a.shape, model.uniform_p ** 2)
        return binomial_sf_batch(n_top, q, observed)
    if model.kind == BIPCM and model.constrained_layer == "bottom":
        q = model.rates[a] * model.rates[b]
        return binomial_sf_batch(n_top, q, observed)
    p = model.probability_matrix()
    out = np.empty(a.shape)
    step = 4096
    for s in range(0, a.size, step):
        sl = slice(s, s + step)
        trials = p[:, a[sl]].T * p[:, b[sl]].T
        out[sl] = poisson_binomial_sf_batch(trials, observed[sl])
    return out


def pair_pvalue(g: BipartiteGraph, model: NullModel, a: int, b: int, layer: str = "bottom") -> PairPValue:
    """p-value of the observed V-motif count of pair (a, b) on ``layer``."""
    go, mo = _oriented(g, model, layer)
    n = go.shape[1]
    if not (0 <= a < n and 0 <= b < n):
        raise IndexError(f"pair ({a}, {b}) outside layer of size {n}")
    if a == b:
        raise ValueError("pair p-values need two distinct nodes")
    col = go.biadjacency.tocsc()
    observed = int(np.intersect1d(col[:, a].indices, col[:, b].indices).size)
    if observed == 0:
        return PairPValue(a, b, 0, 1.0)
    if mo.kind == BIRGM:
        pv = binomial_sf(go.shape[0], mo.uniform_p ** 2, observed)
    elif mo.kind == BIPCM and mo.constrained_layer == "bottom":
        pv = binomial_sf(go.shape[0], float(mo.rates[a] * mo.rates[b]), observed)
    else:
        p = mo.probability_matrix()
        pv = poisson_binomial_sf(p[:, a] * p[:, b], observed)
    return PairPValue(a, b, observed, pv)


def pair_pvalues(g: BipartiteGraph, model: NullModel, layer: str = "bottom") -> list[PairPValue]:
    """p-values of every pair sharing at least one neighbour, ordered by (a, b)."""
    go, mo = _oriented(g, model, layer)
    v = sp.triu(cooccurrence(go, "bottom"), k=1).tocoo()
    order = np.lexsort((v.col, v.row))
    a, b = v.row[order].astype(np.int64), v.col[order].astype(np.int64)
    obs = v.data[order].astype(np.int64)
    pv = _pvalues_for_pairs(go, mo, a, b, obs)
    return [PairPValue(int(i), int(j), int(o), float(x)) for i, j, o, x in zip(a, b, obs, pv)]


# --- multiple testing -------------------------------------------------------------


def fdr_select(pvalues: Iterable[PairPValue], t: float = 0.05, m: int | None = None) -> FdrResult:
    """Benjamini-Hochberg selection.

    ``m`` is the total number of hypotheses; hypotheses missing from
    ``pvalues`` count as p-value 1. Every pair whose p-value does not exceed
    the p-value at the largest rank i with p_(i) <= i t / m is kept.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    items = list(pvalues)
    if m is None:
        m = len(items)
    if m < len(items):
        raise ValueError(f"m={m} is smaller than the number of tested pairs {len(items)}")
    if not items:
        return FdrResult(0, None, frozenset(), t, m)
    ps = np.sort(np.array([x.pvalue for x in items], dtype=float), kind="stable")
    ranks = np.arange(1, ps.size + 1)
    ok = np.flatnonzero(ps <= ranks * t / m)
    if ok.size == 0:
        return FdrResult(0, None, frozenset(), t, m)
    i_hat = int(ok[-1]) + 1
    thr = float(ps[i_hat - 1])
    kept = frozenset((x.a, x.b) for x in items if x.pvalue <= thr)
    return FdrResult(i_hat, thr, kept, t, m)


def validated_projection(
    g: BipartiteGraph,
    model: NullModel,
    t: float = 0.05,
    layer: str = "bottom",
    return_details: bool = False,
):
    """Monopartite projection keeping only FDR-validated pairs.

    Edge weights are V-motif counts and ``pvalues`` holds each kept pair's
    p-value. With ``return_details`` the tested pairs and the FDR summary are
    returned as well.
    """
    labels = g.bottom_labels if layer == "bottom" else g.top_labels
    n = len(labels)
    tested = pair_pvalues(g, model, layer) if n > 1 else []
    fdr = fdr_select(tested, t, m=n * (n - 1) // 2) if n > 1 else FdrResult(0, None, frozenset(), t, 0)
    kept = [x for x in tested if (x.a, x.b) in fdr.kept]
    rows = [x.a for x in kept] + [x.b for x in kept]
    cols = [x.b for x in kept] + [x.a for x in kept]
    adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    w = sp.csr_matrix(([x.observed for x in kept] * 2, (rows, cols)), shape=(n, n), dtype=np.int64)
    mono = MonoGraph(labels, adj, w, {(x.a, x.b): x.pvalue for x in kept})
    if return_details:
        return mono, tested, fdr
    return mono


def projection_tsv(g: MonoGraph) -> str:
    """``label_a<TAB>label_b<TAB>V_star<TAB>pvalue`` for each validated edge."""
    buf = io.StringIO()
    for i, j in g.edge_list():
        key = (min(i, j), max(i, j))
        pv = g.pvalues.get(key)
        w = g.weight(i, j)
        buf.write(f"{g.labels[i]}\t{g.labels[j]}\t{w}\t{'' if pv is None else repr(pv)}\n")
    return buf.getvalue()
