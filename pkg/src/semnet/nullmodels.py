"""Maximum-entropy null models for binary bipartite graphs.

Three benchmarks are provided, from the loosest to the strictest:

* ``BiRGM`` fixes the expected total number of links (uniform probability);
* ``BiPCM`` fixes the expected degrees of one layer;
* ``BiCM`` fixes the expected degrees of both layers, with
  ``p[i, a] = x[i] y[a] / (1 + x[i] y[a])``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .bigraph import BipartiteGraph, degrees

logger = logging.getLogger(__name__)

__all__ = [
    "BICM",
    "BIPCM",
    "BIRGM",
    "MODEL_KINDS",
    "DegenerateDegree",
    "NullModel",
    "SolverReport",
    "fit_bicm",
    "fit_bipcm",
    "fit_birgm",
    "fit_model",
    "link_probability",
    "sample_graph",
]

BIRGM, BIPCM, BICM = "BiRGM", "BiPCM", "BiCM"
MODEL_KINDS = (BIRGM, BIPCM, BICM)


class DegenerateDegree(ValueError):
    """A node is linked to every node of the opposite layer."""

    def __init__(self, layer: str, index: int, label: str | None = None):
        name = label if label is not None else str(index)
        super().__init__(f"{layer} node {name!r} has saturated degree; BiCM multipliers diverge")
        self.layer = layer
        self.index = index
        self.label = label


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    max_residual: float
    converged: bool
    method: str = "fixed-point"

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "max_residual": self.max_residual,
            "converged": self.converged,
            "method": self.method,
        }


@dataclass(frozen=True)
class NullModel:
    kind: str
    shape: tuple[int, int]
    top_multipliers: np.ndarray | None = None
    bottom_multipliers: np.ndarray | None = None
    rates: np.ndarray | None = None
    constrained_layer: str | None = None
    uniform_p: float | None = None
    report: SolverReport | None = field(default=None, compare=False)
    # BiCM with pinned saturated nodes: links of pinned rows/columns are certain
    pinned_top: tuple[int, ...] = ()
    pinned_bottom: tuple[int, ...] = ()
    fixed_links: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    def probability_matrix(self) -> np.ndarray:
        """Dense N_top x N_bot matrix of link probabilities."""
        n_top, n_bot = self.shape
        if self.kind == BIRGM:
            return np.full(self.shape, self.uniform_p, dtype=float)
        if self.kind == BIPCM:
            if self.constrained_layer == "bottom":
                return np.broadcast_to(self.rates[None, :], self.shape).copy()
            return np.broadcast_to(self.rates[:, None], self.shape).copy()
        xy = np.outer(self.top_multipliers, self.bottom_multipliers)
        p = xy / (1.0 + xy)
        if self.pinned_top or self.pinned_bottom:
            p[list(self.pinned_top), :] = 0.0
            p[:, list(self.pinned_bottom)] = 0.0
            for i, a in self.fixed_links:
                p[i, a] = 1.0
        return p

    def to_json(self) -> dict:
        out = {"kind": self.kind, "shape": list(self.shape)}
        if self.kind == BICM:
            out["top_multipliers"] = self.top_multipliers.tolist()
            out["bottom_multipliers"] = self.bottom_multipliers.tolist()
            if self.pinned_top or self.pinned_bottom:
                out["pinned_top"] = list(self.pinned_top)
                out["pinned_bottom"] = list(self.pinned_bottom)
                out["fixed_links"] = [list(x) for x in self.fixed_links]
        elif self.kind == BIPCM:
            out["constrained_layer"] = self.constrained_layer
            out["rates"] = self.rates.tolist()
        else:
            out["uniform_p"] = self.uniform_p
        if self.report is not None:
            out["solver"] = self.report.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "NullModel":
        kind = obj["kind"]
        shape = tuple(obj["shape"])
        report = SolverReport(**obj["solver"]) if "solver" in obj else None
        if kind == BICM:
            return cls(kind, shape,
                       top_multipliers=np.asarray(obj["top_multipliers"], dtype=float),
                       bottom_multipliers=np.asarray(obj["bottom_multipliers"], dtype=float),
                       report=report,
                       pinned_top=tuple(obj.get("pinned_top", ())),
                       pinned_bottom=tuple(obj.get("pinned_bottom", ())),
                       fixed_links=tuple(tuple(x) for x in obj.get("fixed_links", ())))
        if kind == BIPCM:
            return cls(kind, shape, rates=np.asarray(obj["rates"], dtype=float),
                       constrained_layer=obj["constrained_layer"], report=report)
        return cls(kind, shape, uniform_p=float(obj["uniform_p"]), report=report)


def link_probability(m: NullModel, i: int, a: int) -> float:
    n_top, n_bot = m.shape
    if not (0 <= i < n_top and 0 <= a < n_bot):
        raise IndexError(f"pair ({i}, {a}) outside model shape {m.shape}")
    if m.kind == BIRGM:
        return float(m.uniform_p)
    if m.kind == BIPCM:
        return float(m.rates[a] if m.constrained_layer == "bottom" else m.rates[i])
    if i in m.pinned_top or a in m.pinned_bottom:
        return 1.0 if (i, a) in m.fixed_links else 0.0
    xy = m.top_multipliers[i] * m.bottom_multipliers[a]
    return float(xy / (1.0 + xy))


def fit_birgm(g: BipartiteGraph) -> NullModel:
    n_top, n_bot = g.shape
    if n_top == 0 or n_bot == 0:
        raise ValueError("BiRGM needs two nonempty layers")
    return NullModel(BIRGM, g.shape, uniform_p=g.n_edges / (n_top * n_bot))


def fit_bipcm(g: BipartiteGraph, constrained_layer: str = "bottom") -> NullModel:
    """Closed-form partial configuration model.

    With the bottom layer constrained every user links to hashtag ``a`` with
    probability ``k[a] / N_top``; constraining the top layer is the mirror image.
    """
    n_top, n_bot = g.shape
    if constrained_layer == "bottom":
        rates = degrees(g, "bottom") / n_top if n_top else np.zeros(n_bot)
    elif constrained_layer == "top":
        rates = degrees(g, "top") / n_bot if n_bot else np.zeros(n_top)
    else:
        raise ValueError(f"constrained_layer must be 'top' or 'bottom', got {constrained_layer!r}")
    return NullModel(BIPCM, g.shape, rates=np.asarray(rates, dtype=float),
                     constrained_layer=constrained_layer)


# --- BiCM solver -------------------------------------------------------------


def _expected(x, y, nx_, ny_):
    xy = np.outer(x, y)
    p = xy / (1.0 + xy)
    return p @ ny_, nx_ @ p


def _residual(x, y, hx, ky, nx_, ny_):
    eh, ek = _expected(x, y, nx_, ny_)
    return max(np.max(np.abs(eh - hx), initial=0.0), np.max(np.abs(ek - ky), initial=0.0))


def _newton(theta, eta, hx, ky, nx_, ny_, tol, max_iter):
    """Newton iterations on the convex negative log-likelihood in log-multipliers.

    Variables are ``x = exp(theta)``, ``y = exp(eta)``; the objective
    ``sum p-terms log(1 + x y) - sum n h theta - sum n k eta`` has gradient
    equal to (expected - observed) degrees weighted by class sizes.
    """
    def objective(t, e):
        s = t[:, None] + e[None, :]
        return (nx_ @ np.logaddexp(0.0, s) @ ny_) - nx_ @ (hx * t) - ny_ @ (ky * e)

    def residual(t, e):
        p = 1.0 / (1.0 + np.exp(-(t[:, None] + e[None, :])))
        return max(np.abs(p @ ny_ - hx).max(initial=0.0), np.abs(nx_ @ p - ky).max(initial=0.0))

    f = objective(theta, eta)
    nt = theta.size
    it = 0
    for it in range(1, max_iter + 1):
        s = theta[:, None] + eta[None, :]
        p = 1.0 / (1.0 + np.exp(-s))
        w = p * (1.0 - p)
        gh = p @ ny_ - hx
        gk = nx_ @ p - ky
        if max(np.abs(gh).max(initial=0.0), np.abs(gk).max(initial=0.0)) <= tol:
            return theta, eta, it - 1, True
        grad = np.concatenate([nx_ * gh, ny_ * gk])
        hess = np.zeros((grad.size, grad.size))
        hess[:nt, :nt] = np.diag(nx_ * (w @ ny_))
        hess[nt:, nt:] = np.diag(ny_ * (nx_ @ w))
        cross = (nx_[:, None] * w) * ny_[None, :]
        hess[:nt, nt:] = cross
        hess[nt:, :nt] = cross.T
        # the (theta + c, eta - c) direction is flat; a tiny ridge fixes the gauge
        hess[np.diag_indices_from(hess)] += 1e-12 * (1.0 + np.abs(np.diag(hess)))
        try:
            step = scipy.linalg.solve(hess, -grad, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            step = -grad / np.maximum(np.diag(hess), 1e-12)
        step_t, step_e = step[:nt], step[nt:]
        lam = 1.0
        slope = grad @ step
        res = max(np.abs(gh).max(initial=0.0), np.abs(gk).max(initial=0.0))
        while lam > 1e-12:
            t_new, e_new = theta + lam * step_t, eta + lam * step_e
            f_new = objective(t_new, e_new)
            if f_new <= f + 1e-4 * lam * slope:
                break
            # near the optimum the decrease drowns in the rounding of f;
            # fall back to asking for a smaller degree residual
            if -lam * slope < 1e3 * np.finfo(float).eps * abs(f) and residual(t_new, e_new) < res:
                break
            lam *= 0.5
        else:
            return theta, eta, it, False
        theta, eta, f = t_new, e_new, f_new
    s = theta[:, None] + eta[None, :]
    p = 1.0 / (1.0 + np.exp(-s))
    ok = max(np.abs(p @ ny_ - hx).max(initial=0.0), np.abs(nx_ @ p - ky).max(initial=0.0)) <= tol
    return theta, eta, it, ok


def _solve_classes(h, k, target, max_iter, newton_after):
    """Multipliers for positive degrees ``h`` (top) and ``k`` (bottom)."""
    hx, inv_h, nx_ = np.unique(h, return_inverse=True, return_counts=True)
    ky, inv_k, ny_ = np.unique(k, return_inverse=True, return_counts=True)
    hx, ky = hx.astype(float), ky.astype(float)
    nx_, ny_ = nx_.astype(float), ny_.astype(float)

    L = float(h.sum())
    x = hx / np.sqrt(L)
    y = ky / np.sqrt(L)
    res = _residual(x, y, hx, ky, nx_, ny_)
    it = 0
    method = "fixed-point"
    best = res
    stall = 0
    while res > target and it < min(max_iter, newton_after):
        it += 1
        denom_x = (y[None, :] / (1.0 + np.outer(x, y))) @ ny_
        x = 0.5 * x + 0.5 * hx / denom_x
        denom_y = nx_ @ (x[:, None] / (1.0 + np.outer(x, y)))
        y = 0.5 * y + 0.5 * ky / denom_y
        res = _residual(x, y, hx, ky, nx_, ny_)
        if res < best * (1 - 1e-3):
            best, stall = res, 0
        else:
            stall += 1
            if stall >= 20:
                break

    if res > target and it < max_iter:
        method = "fixed-point+newton"
        theta, eta, n_it, _ = _newton(np.log(x), np.log(y), hx, ky, nx_, ny_,
                                      target, max_iter - it)
        it += n_it
        x, y = np.exp(theta), np.exp(eta)
    return x[inv_h], y[inv_k], it, method


def _saturated(m, free_t, free_b):
    """Saturated free nodes of the subgraph spanned by free nodes."""
    sub = m[free_t][:, free_b]
    h = np.asarray(sub.sum(axis=1)).ravel()
    k = np.asarray(sub.sum(axis=0)).ravel()
    n_active_b = int((k > 0).sum())
    n_active_t = int((h > 0).sum())
    sat_t = np.flatnonzero(free_t)[(h > 0) & (h >= n_active_b)]
    sat_b = np.flatnonzero(free_b)[(k > 0) & (k >= n_active_t)]
    return sat_t, sat_b


def fit_bicm(
    g: BipartiteGraph,
    tolerance: float = 1e-8,
    max_iter: int = 10000,
    newton_after: int = 200,
    saturated: str = "raise",
) -> tuple[NullModel, SolverReport]:
    """Fit the bipartite configuration model to both degree sequences.

    Nodes of equal degree share a multiplier, so the equations are solved on
    degree classes. A damped fixed-point iteration runs first; if it has not
    converged after ``newton_after`` sweeps or stops improving, Newton steps
    with backtracking take over. Zero-degree nodes get multiplier 0.

    A node linked to every active node of the other layer has no finite
    multiplier. ``saturated="raise"`` rejects it with :class:`DegenerateDegree`;
    ``saturated="pin"`` takes the limit instead: the node's links become
    certain, it is removed, and the check repeats on what is left.
    """
    if saturated not in ("raise", "pin"):
        raise ValueError(f"saturated must be 'raise' or 'pin', got {saturated!r}")
    n_top, n_bot = g.shape
    m = g.biadjacency
    free_t = np.ones(n_top, dtype=bool)
    free_b = np.ones(n_bot, dtype=bool)
    while True:
        sat_t, sat_b = _saturated(m, free_t, free_b)
        if sat_t.size == 0 and sat_b.size == 0:
            break
        if saturated == "raise":
            if sat_t.size:
                raise DegenerateDegree("top", int(sat_t[0]), g.top_labels[sat_t[0]])
            raise DegenerateDegree("bottom", int(sat_b[0]), g.bottom_labels[sat_b[0]])
        # pin one layer at a time; pinning changes the other layer's residual degrees
        if sat_t.size:
            free_t[sat_t] = False
        else:
            free_b[sat_b] = False

    sub = m[free_t][:, free_b]
    h = np.asarray(sub.sum(axis=1)).ravel()
    k = np.asarray(sub.sum(axis=0)).ravel()
    x_free = np.zeros(h.size)
    y_free = np.zeros(k.size)
    it, method = 0, "fixed-point"
    if sub.nnz:
        # aim below the requested tolerance so the residual re-summed over the
        # full matrix (different rounding) still honours it
        x, y, it, method = _solve_classes(h[h > 0], k[k > 0], 0.5 * tolerance, max_iter, newton_after)
        x_free[h > 0] = x
        y_free[k > 0] = y
    x_full = np.zeros(n_top)
    y_full = np.zeros(n_bot)
    x_full[free_t] = x_free
    y_full[free_b] = y_free

    pinned_top = tuple(np.flatnonzero(~free_t).tolist())
    pinned_bottom = tuple(np.flatnonzero(~free_b).tolist())
    fixed = ()
    if pinned_top or pinned_bottom:
        coo = m.tocoo()
        mask = ~free_t[coo.row] | ~free_b[coo.col]
        fixed = tuple(sorted(zip(coo.row[mask].tolist(), coo.col[mask].tolist())))
    model = NullModel(BICM, g.shape, top_multipliers=x_full, bottom_multipliers=y_full,
                      pinned_top=pinned_top, pinned_bottom=pinned_bottom, fixed_links=fixed)
    p = model.probability_matrix()
    res = 0.0
    if p.size:
        res = float(max(np.abs(p.sum(axis=1) - degrees(g, "top")).max(),
                        np.abs(p.sum(axis=0) - degrees(g, "bottom")).max()))
    converged = res <= tolerance
    if not converged:
        logger.warning("BiCM did not converge: residual %.3g after %d iterations", res, it)
    report = SolverReport(it, res, converged, method)
    return replace(model, report=report), report


def fit_model(g: BipartiteGraph, kind: str, constrained_layer: str = "bottom", **kwargs) -> NullModel:
    """Dispatch by model name (case-insensitive)."""
    name = {m.lower(): m for m in MODEL_KINDS}.get(kind.lower())
    if name == BIRGM:
        return fit_birgm(g)
    if name == BIPCM:
        return fit_bipcm(g, constrained_layer)
    if name == BICM:
        return fit_bicm(g, **kwargs)[0]
    raise ValueError(f"unknown model {kind!r}")


def sample_graph(m: NullModel, rng: np.random.Generator, labels_from: BipartiteGraph | None = None) -> BipartiteGraph:
    """Draw one graph with independent links from the model's probabilities."""
    draw = (rng.random(m.shape) < m.probability_matrix()).astype(np.int8)
    if labels_from is not None:
        return BipartiteGraph.from_dense(draw, labels_from.top_labels, labels_from.bottom_labels)
    return BipartiteGraph.from_dense(draw)
