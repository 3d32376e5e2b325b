import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (
    cp_counts,
    exhaustive_best_partition,
    kcore_by_pruning,
    log_surprise_exact,
    modularity_direct,
    random_graph,
)
from semnet.bigraph import MonoGraph
from semnet.mesoscale import (
    bimodular_surprise,
    canonical_labels,
    core_jaccard,
    detect_core_periphery,
    innermost_shell,
    kcore_decomposition,
    log_surprise_from_counts,
    louvain,
    modularity,
)


def clique(n):
    return np.ones((n, n), dtype=int) - np.eye(n, dtype=int)


def clique_plus_leaves(c, leaves):
    n = c + leaves
    a = np.zeros((n, n), dtype=int)
    a[:c, :c] = clique(c)
    for j in range(leaves):
        a[c + j, j % c] = a[j % c, c + j] = 1
    return a


def two_cliques():
    a = np.zeros((8, 8), dtype=int)
    a[:4, :4] = clique(4)
    a[4:, 4:] = clique(4)
    a[3, 4] = a[4, 3] = 1
    return a


# --- modularity ---------------------------------------------------------------------


def test_modularity_complete_single_community():
    assert modularity(MonoGraph.from_dense(clique(5)), [0] * 5) == pytest.approx(0.0, abs=1e-15)


def test_modularity_two_triangles_hand_value():
    a = np.zeros((6, 6), dtype=int)
    a[:3, :3] = clique(3)
    a[3:, 3:] = clique(3)
    g = MonoGraph.from_dense(a)
    # each community: 3 internal links of 6, degree sum 6 of 12 -> 2 * (3/6 - 1/4)
    assert modularity(g, [0, 0, 0, 1, 1, 1]) == pytest.approx(0.5, abs=1e-15)
    assert modularity(g, [7, 7, 7, 2, 2, 2]) == modularity(g, [0, 0, 0, 1, 1, 1])
    assert modularity(g, [0, 0, 0, 1, 1, 1]) == pytest.approx(modularity_direct(a, [0, 0, 0, 1, 1, 1]), abs=1e-15)


def test_modularity_edgeless_raises():
    with pytest.raises(ValueError):
        modularity(MonoGraph.from_dense(np.zeros((3, 3), dtype=int)), [0, 0, 1])


@given(st.integers(2, 9), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_modularity_matches_direct(n, seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, n, 0.5)
    if a.sum() == 0:
        return
    labels = rng.integers(0, 3, size=n).tolist()
    assert abs(modularity(MonoGraph.from_dense(a), labels) - modularity_direct(a, labels)) <= 1e-12


# --- louvain --------------------------------------------------------------------------


def test_louvain_two_cliques():
    a = two_cliques()
    p = louvain(MonoGraph.from_dense(a), seed=0)
    assert canonical_labels(p.labels) == (0, 0, 0, 0, 1, 1, 1, 1)
    optima, best = exhaustive_best_partition(a, "modularity")
    assert optima == [(0, 0, 0, 0, 1, 1, 1, 1)]
    assert p.modularity == pytest.approx(best, abs=1e-12)


def test_louvain_single_clique():
    p = louvain(MonoGraph.from_dense(clique(6)), seed=3)
    assert p.num_communities == 1


def test_louvain_deterministic():
    g = MonoGraph.from_dense(random_graph(np.random.default_rng(5), 40, 0.1))
    assert louvain(g, seed=9) == louvain(g, seed=9)


def test_louvain_stored_q_recomputes():
    g = MonoGraph.from_dense(random_graph(np.random.default_rng(6), 30, 0.15))
    p = louvain(g, seed=1)
    assert abs(modularity(g, p.labels) - p.modularity) <= 1e-12
    assert -0.25 <= p.modularity <= 1.0


@given(st.integers(2, 14), st.floats(0.1, 0.8), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_louvain_not_worse_than_singletons(n, p, seed):
    a = random_graph(np.random.default_rng(seed), n, p)
    if a.sum() == 0:
        return
    g = MonoGraph.from_dense(a)
    part = louvain(g, seed=seed % 1000, restarts=2)
    assert part.modularity >= modularity(g, range(n)) - 1e-12


def test_partition_json():
    g = MonoGraph.from_dense(two_cliques(), labels=list("abcdefgh"))
    d = louvain(g).to_json(g.labels)
    assert d["num_communities"] == 2 and d["labels"]["a"] == d["labels"]["d"] != d["labels"]["e"]
    json.dumps(d)


# --- k-core ---------------------------------------------------------------------------


def test_kcore_examples():
    assert kcore_decomposition(MonoGraph.from_dense(clique(4))).tolist() == [3, 3, 3, 3]
    star = np.zeros((5, 5), dtype=int)
    star[0, 1:] = star[1:, 0] = 1
    assert kcore_decomposition(MonoGraph.from_dense(star)).tolist() == [1] * 5
    tri = np.zeros((4, 4), dtype=int)
    tri[:3, :3] = clique(3)
    tri[2, 3] = tri[3, 2] = 1
    assert kcore_decomposition(MonoGraph.from_dense(tri)).tolist() == [2, 2, 2, 1]
    assert innermost_shell(np.array([2, 2, 2, 1])) == {0, 1, 2}


@given(st.integers(1, 20), st.floats(0.05, 0.7), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_kcore_matches_pruning(n, p, seed):
    a = random_graph(np.random.default_rng(seed), n, p)
    g = MonoGraph.from_dense(a)
    core = kcore_decomposition(g)
    assert core.tolist() == kcore_by_pruning(a).tolist()
    assert (core <= g.degree()).all()
    for k in set(core.tolist()):
        keep = np.flatnonzero(core >= k)
        assert a[np.ix_(keep, keep)].sum(axis=1).min() >= k


# --- bimodular surprise ----------------------------------------------------------------


def test_all_core_is_zero():
    g = MonoGraph.from_dense(random_graph(np.random.default_rng(0), 8, 0.4))
    assert bimodular_surprise(g, ["core"] * 8) == 0.0


def test_four_node_exact():
    a = np.zeros((4, 4), dtype=int)
    for i, j in [(0, 1), (1, 2), (0, 2)]:
        a[i, j] = a[j, i] = 1
    g = MonoGraph.from_dense(a)
    labels = ["core", "core", "core", "periphery"]
    # V=6, L=3, V_core=3, V_per=0, l_core=3, l_per=0 -> C(3,3) C(3,0) / C(6,3)
    assert bimodular_surprise(g, labels) == pytest.approx(math.log(Fraction(1, 20)), abs=1e-12)
    assert bimodular_surprise(g, labels) == pytest.approx(log_surprise_exact(*cp_counts(a, [1, 1, 1, 0])), abs=1e-12)


def test_single_edge_matches_direct():
    a = np.zeros((3, 3), dtype=int)
    a[0, 1] = a[1, 0] = 1
    g = MonoGraph.from_dense(a)
    labels = ["core", "core", "periphery"]
    # V=3, L=1, V_core=1, V_per=0, l_core=1: C(1,1) C(2,0)/C(3,1)
    assert bimodular_surprise(g, labels) == pytest.approx(math.log(1 / 3), abs=1e-15)


def test_role_swap_symmetry():
    # counts symmetric under exchanging the core and periphery blocks
    for V, L, vc, vp, lc, lp in [(15, 6, 3, 3, 2, 1), (28, 10, 6, 6, 3, 3), (45, 12, 10, 10, 4, 2)]:
        assert log_surprise_from_counts(V, L, vc, vp, lc, lp) == pytest.approx(
            log_surprise_from_counts(V, L, vp, vc, lp, lc), abs=1e-12)


@given(st.integers(2, 12), st.floats(0.1, 0.9), st.integers(0, 2**31))
@settings(max_examples=150, deadline=None)
def test_surprise_matches_exact(n, p, seed):
    rng = np.random.default_rng(seed)
    a = random_graph(rng, n, p)
    bits = rng.random(n) < 0.5
    c = cp_counts(a, bits)
    got = log_surprise_from_counts(*c)
    want = log_surprise_exact(*c)
    assert got <= 0.0
    if math.isinf(want):
        assert math.isinf(got)
    else:
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_surprise_counts_invariants():
    g = MonoGraph.from_dense(clique_plus_leaves(4, 4))
    cp = detect_core_periphery(g, seed=0)
    c = cp.counts
    assert c["V"] == 8 * 7 // 2
    assert c["l_core"] <= c["V_core"] and c["l_per"] <= c["V_per"]
    assert cp.log_surprise <= 0


# --- core-periphery --------------------------------------------------------------------


def test_clique5_plus_5_leaves():
    a = clique_plus_leaves(5, 5)
    cp = detect_core_periphery(MonoGraph.from_dense(a), seed=0)
    assert cp.core == [0, 1, 2, 3, 4]
    optima, best = exhaustive_best_partition(a, "neg_log_surprise_bimodular")
    assert cp.log_surprise == pytest.approx(best, abs=1e-9)
    assert tuple(x == "core" for x in cp.labels) in optima


def test_cycle_not_worse_than_all_core():
    n = 9
    a = np.zeros((n, n), dtype=int)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    cp = detect_core_periphery(MonoGraph.from_dense(a), seed=2)
    assert cp.log_surprise <= 0.0


def test_core_periphery_reproducible():
    g = MonoGraph.from_dense(random_graph(np.random.default_rng(8), 25, 0.2))
    assert detect_core_periphery(g, seed=4) == detect_core_periphery(g, seed=4)


def test_core_jaccard():
    assert core_jaccard({1, 2}, {1, 2}) == 1.0
    assert core_jaccard({1}, {2}) == 0.0
    assert core_jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert core_jaccard(set(), set()) == 1.0
