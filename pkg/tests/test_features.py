from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netlen.features import edge_block, edge_lists, featurize, measure_diff, standardize
from netlen.graph import build_graph
from netlen.partition import PartitionResult, PartitionSuite

from conftest import FIG3_M, FIG3_P, fig3_suite, labeled_graph, random_netlist


def _edge(g, src, dst):
    return next(i for i in range(g.n_edges) if g.src[i] == src and g.dst[i] == dst)


def test_fig3_edge_lists_exact(fig3):
    g = build_graph(fig3)
    F0, F1, F2, f3 = edge_lists(g, _edge(g, 4, 2), FIG3_P, FIG3_M, exact=True)
    assert F0 == [1, 1, 0]
    assert F1 == [Fraction(2), Fraction(1), Fraction(1, 3)]
    assert F2 == [1, 0, 0]
    assert f3 == 1


def test_fig3_measure_diff_exact(fig3):
    nets = {n.id: n for n in fig3.nets}
    assert measure_diff("G", nets["n5"], "H", nets["n4"], FIG3_P, FIG3_M, exact=True) == (0, Fraction(1, 3), 0)


def test_fig3_vectorized_block(fig3):
    g = featurize(build_graph(fig3), fig3_suite(fig3))
    row = g.edge_features[_edge(g, 4, 2)]
    expect = [2, 2 / 3, 10 / 3, 10 / 9, 1, 1 / 3, 1]
    assert np.max(np.abs(row - expect)) <= 1e-12


def test_fig3_node_features(fig3):
    g = featurize(build_graph(fig3), None)
    assert g.node_features.shape == (5, 12)
    assert np.allclose(g.node_features[2], [2, 2, 1, 3, 2, 3, 0, 6, 0, 0.5, 0, 2], atol=1e-12)


def _node_reference(g):
    """Direct per-net evaluation of the 12 node features."""
    nl = g.netlist
    fin = [len(x) for x in g.fanin]
    fout = [len(n.sinks) for n in nl.nets]
    rows = []
    for k, net in enumerate(nl.nets):
        area = nl.driver_area(net)
        outs, ins = g.fanout[k], g.fanin[k]

        def stats(idx, vals):
            v = np.array([vals[i] for i in idx], dtype=float)
            return (v.sum(), v.std()) if v.size > 1 else (v.sum(), 0.0)
        s_oi, d_oi = stats(outs, fin)
        s_oo, d_oo = stats(outs, fout)
        s_ii, d_ii = stats(ins, fin)
        s_io, d_io = stats(ins, fout)
        rows.append([fin[k], fout[k], area, area + sum(nl.driver_area(nl.nets[o]) for o in outs),
                     s_oi, s_oo, s_ii, s_io, d_oi, d_oo, d_ii, d_io])
    return np.array(rows)


def _random_suite(nl, g, rng, p_k=(3, 5), m_k=(2, 4)):
    p = [PartitionResult("P", k, rng.integers(0, k, len(nl.cells)), nl.cell_ids) for k in p_k]
    m = [PartitionResult("M", k, rng.integers(0, k, g.n_nodes), nl.net_ids) for k in m_k]
    return PartitionSuite(p, m, tuple(10 * k for k in p_k), tuple(10 * k for k in m_k))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 30), st.integers(0, 10_000))
def test_vectorized_matches_scalar_reference(n, seed):
    rng = np.random.default_rng(seed)
    nl = random_netlist(n, seed)
    g = build_graph(nl)
    suite = _random_suite(nl, g, rng)
    fg = featurize(g, suite)
    assert np.allclose(fg.node_features, _node_reference(g), atol=1e-9)
    P = [r.as_dict() for r in suite.p_results]
    M = [r.as_dict() for r in suite.m_results]
    for e in range(g.n_edges):
        ref = []
        for p in P:
            ref += edge_block(*edge_lists(g, e, p, M[0]))[:4]
        for m in M:
            ref += edge_block(*edge_lists(g, e, P[0], m))[4:]
        assert np.max(np.abs(fg.edge_features[e] - ref)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 30), st.integers(0, 10_000))
def test_edge_feature_bounds(n, seed):
    rng = np.random.default_rng(seed)
    nl = random_netlist(n, seed)
    g = build_graph(nl)
    fg = featurize(g, _random_suite(nl, g, rng))
    x = fg.edge_features
    # means lie in [0, 1] for F0/F2 and [0, 2] for F1; f3 is binary
    assert np.all(x >= 0)
    for i in range(2):
        assert np.all(x[:, 4 * i + 1] <= 1 + 1e-12) and np.all(x[:, 4 * i + 3] <= 2 + 1e-12)
    for j in range(2):
        base = 8 + 3 * j
        assert np.all(x[:, base + 1] <= 1 + 1e-12)
        assert set(np.unique(x[:, base + 2])) <= {0.0, 1.0}


def test_identical_partition_gives_zero_f0_f2(fig3):
    g = build_graph(fig3)
    p = PartitionResult("P", 1, np.zeros(len(fig3.cells), dtype=np.int64), fig3.cell_ids)
    m = PartitionResult("M", 1, np.zeros(5, dtype=np.int64), fig3.net_ids)
    fg = featurize(g, PartitionSuite([p], [m], (100,), (500,)))
    assert np.all(fg.edge_features[:, [0, 1, 4, 5, 6]] == 0)


def test_missing_assignment_is_reported(fig3):
    g = build_graph(fig3)
    p = PartitionResult("P", 2, np.zeros(3, dtype=np.int64), ["A", "B", "C"])
    m = PartitionResult("M", 1, np.zeros(5, dtype=np.int64), fig3.net_ids)
    with pytest.raises(KeyError, match="no assignment"):
        featurize(g, PartitionSuite([p], [m], (100,), (500,)))


def test_standardize_zero_mean_unit_std():
    graphs = [labeled_graph(40, s) for s in range(2)]
    sc = standardize(graphs)
    x = np.concatenate([sc.transform_nodes(g.node_features) for g in graphs])
    varying = x.std(axis=0) > 0
    assert np.allclose(x.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(x.std(axis=0)[varying], 1, atol=1e-9)
