import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import binomial_tail_exact, exact_pb_sf, exhaustive_vmotif_tail
from semnet.bigraph import BipartiteGraph, naive_projection, vmotif_count
from semnet.nullmodels import fit_bicm, fit_bipcm, fit_birgm, fit_model
from semnet.validation import (
    PairPValue,
    binomial_sf,
    binomial_sf_batch,
    fdr_select,
    pair_pvalue,
    pair_pvalues,
    poisson_binomial_sf,
    poisson_binomial_sf_batch,
    projection_tsv,
    validated_projection,
)


# --- tails ------------------------------------------------------------------------


def test_pb_examples():
    assert poisson_binomial_sf([0.5, 0.5], 1) == pytest.approx(0.75, abs=1e-15)
    assert poisson_binomial_sf([0.3, 0.9, 0.1], 0) == 1.0
    assert poisson_binomial_sf([1.0], 1) == 1.0
    assert poisson_binomial_sf([0.0, 0.0], 1) == 0.0
    with pytest.raises(ValueError):
        poisson_binomial_sf([1.2], 1)
    with pytest.raises(ValueError):
        poisson_binomial_sf([0.2], 2)


def test_binomial_examples():
    assert binomial_sf(2, 0.5, 2) == pytest.approx(0.25, abs=1e-15)
    assert binomial_sf(5, 0.0, 1) == 0.0
    assert binomial_sf(5, 0.3, 0) == 1.0
    assert binomial_sf(5, 1.0, 5) == 1.0


def test_tails_deep():
    # tail far below double epsilon relative to 1 must not be lost
    v = poisson_binomial_sf([0.01] * 200, 60)
    assert 0 < v < 1e-60
    assert v == pytest.approx(binomial_sf(200, 0.01, 60), rel=1e-9)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.data())
@settings(max_examples=200, deadline=None)
def test_pb_against_enumeration(probs, data):
    n_star = data.draw(st.integers(0, len(probs)))
    assert abs(poisson_binomial_sf(probs, n_star) - exact_pb_sf(probs, n_star)) <= 1e-12


@given(st.integers(1, 40), st.floats(0, 1), st.data())
@settings(max_examples=200, deadline=None)
def test_binomial_against_exact(n, p, data):
    k = data.draw(st.integers(0, n))
    assert abs(binomial_sf(n, p, k) - binomial_tail_exact(n, p, k)) <= 1e-12
    assert abs(binomial_sf_batch(n, np.array([p]), np.array([k]))[0] - binomial_tail_exact(n, p, k)) <= 1e-12


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
@settings(max_examples=100, deadline=None)
def test_pb_monotone_in_threshold(probs):
    vals = [poisson_binomial_sf(probs, k) for k in range(len(probs) + 1)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    P = rng.random((300, 25)) ** 3
    ks = rng.integers(0, 26, size=300)
    batch = poisson_binomial_sf_batch(P, ks)
    single = np.array([poisson_binomial_sf(P[i], ks[i]) for i in range(300)])
    np.testing.assert_allclose(batch, single, rtol=1e-13, atol=1e-15)


# --- pair p-values -------------------------------------------------------------------


def test_zero_vmotifs_pvalue_one():
    g = BipartiteGraph.from_dense([[1, 0, 1], [0, 1, 1], [1, 0, 0]])
    for model in (fit_birgm(g), fit_bipcm(g), fit_bicm(g)[0]):
        assert pair_pvalue(g, model, 0, 1).pvalue == 1.0


def test_birgm_closed_form():
    g = BipartiteGraph.from_dense([[1, 1], [1, 1], [0, 0]])
    m = fit_birgm(g)  # 4 links on 3 x 2 -> p = 2/3
    # N_top = 3, p = 0.5, V* = 3 -> 0.25^3
    g3 = BipartiteGraph.from_dense([[1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 0, 0]])
    m3 = fit_birgm(g3)
    assert m3.uniform_p == 0.5
    r = pair_pvalue(g3, m3, 0, 1)
    assert r.observed == 3 and r.pvalue == pytest.approx(0.015625, abs=1e-15)
    assert pair_pvalue(g, m, 0, 1).pvalue == pytest.approx(binomial_tail_exact(3, 4 / 9, 2), abs=1e-14)


def test_bipcm_formula():
    g = BipartiteGraph.from_dense([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 0]])
    m = fit_bipcm(g)
    r = pair_pvalue(g, m, 0, 1)
    k = [3, 3, 2]
    assert r.observed == 2
    assert r.pvalue == pytest.approx(binomial_tail_exact(4, k[0] * k[1] / 16, 2), abs=1e-14)


def test_bicm_4x3_exhaustive():
    g = BipartiteGraph.from_dense([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 0, 0]])
    m, rep = fit_bicm(g)
    assert rep.converged
    P = m.probability_matrix()
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        r = pair_pvalue(g, m, a, b)
        assert r.observed == vmotif_count(g, a, b)
        assert abs(r.pvalue - exhaustive_vmotif_tail(P, a, b, r.observed)) <= 1e-12


def test_pair_pvalue_checks():
    g = BipartiteGraph.from_dense([[1, 1], [1, 0]])
    with pytest.raises(ValueError):
        pair_pvalue(g, fit_birgm(g), 0, 0)
    other = BipartiteGraph.from_dense([[1, 1, 0], [1, 0, 1]])
    with pytest.raises(ValueError):
        pair_pvalue(g, fit_birgm(other), 0, 1)


def test_top_layer_pvalues_match_transpose():
    rng = np.random.default_rng(1)
    g = BipartiteGraph.from_dense((rng.random((8, 6)) < 0.5).astype(int))
    m, _ = fit_bicm(g, saturated="pin")
    gt = g.transpose()
    mt, _ = fit_bicm(gt, saturated="pin")
    a = {(x.a, x.b): x.pvalue for x in pair_pvalues(g, m, "top")}
    b = {(x.a, x.b): x.pvalue for x in pair_pvalues(gt, mt, "bottom")}
    assert a.keys() == b.keys()
    assert all(abs(a[k] - b[k]) < 1e-9 for k in a)


# --- FDR ------------------------------------------------------------------------------


def pv(values):
    return [PairPValue(i, i + 1000, 1, p) for i, p in enumerate(values)]


def test_fdr_examples():
    r = fdr_select(pv([0.01, 0.02, 0.5]), t=0.05, m=3)
    assert r.threshold_index == 2 and r.kept == {(0, 1000), (1, 1001)}
    assert fdr_select(pv([1.0, 1.0]), 0.05).kept == frozenset()
    assert fdr_select(pv([0.04]), 0.05, m=1).kept == {(0, 1000)}


def test_fdr_untested_pairs_count_in_m():
    assert fdr_select(pv([0.04]), 0.05, m=2).kept == frozenset()
    with pytest.raises(ValueError):
        fdr_select(pv([0.1, 0.2]), 0.05, m=1)
    with pytest.raises(ValueError):
        fdr_select(pv([0.1]), 1.0)


def test_fdr_ties_kept():
    r = fdr_select(pv([0.01, 0.01, 0.01, 0.9]), 0.05, m=4)
    assert len(r.kept) == 3 and r.threshold_pvalue == 0.01


def test_fdr_json():
    r = fdr_select(pv([0.01, 0.02, 0.5]), 0.05, m=3)
    assert r.to_json() == {"m": 3, "t": 0.05, "threshold_index": 2, "threshold_pvalue": 0.02, "kept_count": 2}


# --- validated projection ------------------------------------------------------------


def test_edgeless_projection_empty():
    g = BipartiteGraph.from_dense(np.zeros((3, 4), dtype=int))
    assert validated_projection(g, fit_birgm(g)).n_edges == 0


def test_signal_pair_validated_under_bicm():
    rng = np.random.default_rng(2)
    n_users, n_tags = 1000, 40
    m = np.zeros((n_users, n_tags), dtype=int)
    for u in range(n_users):
        m[u, rng.choice(np.arange(2, n_tags), size=rng.integers(1, 4), replace=False)] = 1
    m[:30, 0] = m[:30, 1] = 1
    g = BipartiteGraph.from_dense(m)
    model, _ = fit_bicm(g)
    proj, tested, fdr = validated_projection(g, model, return_details=True)
    p01 = next(x.pvalue for x in tested if (x.a, x.b) == (0, 1))
    assert p01 <= fdr.threshold_pvalue
    assert proj.adjacency[0, 1] == 1


def test_planted_blocks_within_only():
    rng = np.random.default_rng(3)
    m = np.zeros((400, 12), dtype=int)
    for u in range(400):
        block = u % 2
        m[u, block * 6:(block + 1) * 6] = rng.random(6) < 0.5
        m[u, (1 - block) * 6:(2 - block) * 6] = rng.random(6) < 0.03
    g = BipartiteGraph.from_dense(m)
    for kind in ("bicm", "bipcm", "birgm"):
        proj = validated_projection(g, fit_model(g, kind, saturated="pin") if kind == "bicm" else fit_model(g, kind))
        edges = set(proj.edge_list())
        assert all((a < 6) == (b < 6) for a, b in edges)
        assert len(edges) >= 25


@given(st.integers(3, 12), st.integers(3, 10), st.floats(0.1, 0.7), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_validated_subset_of_naive(n_top, n_bot, dens, seed):
    g = BipartiteGraph.from_dense((np.random.default_rng(seed).random((n_top, n_bot)) < dens).astype(int))
    naive = set(naive_projection(g).edge_list())
    for kind in ("birgm", "bipcm", "bicm"):
        kw = {"saturated": "pin"} if kind == "bicm" else {}
        proj = validated_projection(g, fit_model(g, kind, **kw))
        assert set(proj.edge_list()) <= naive
        for (a, b), p in proj.pvalues.items():
            assert 0 < p <= 1


def test_projection_tsv_format():
    g = BipartiteGraph.from_dense([[1, 1, 0]] * 12 + [[0, 0, 1]] * 12, bottom_labels=["x", "y", "z"])
    proj = validated_projection(g, fit_birgm(g))
    lines = projection_tsv(proj).splitlines()
    assert lines and lines[0].split("\t")[:3] == ["x", "y", "12"]
    assert float(lines[0].split("\t")[3]) == proj.pvalues[(0, 1)]
