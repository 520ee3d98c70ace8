from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netlen import baselines
from netlen.graph import attach_labels, build_graph
from netlen.netlist import parse_netlist

from conftest import labeled_graph, random_netlist


def ispl_oracle(netlist, cap=16):
    nets = [n.cells for n in netlist.nets]
    by_cell = {}
    for i, cells in enumerate(nets):
        for c in cells:
            by_cell.setdefault(c, []).append(i)
    out = []
    for k, cells in enumerate(nets):
        if len(cells) < 2:
            out.append(0.0)
            continue
        dist = {cells[0]: 0}
        queue = deque([cells[0]])
        while queue:
            c = queue.popleft()
            for j in by_cell[c]:
                if j == k:
                    continue
                for d in nets[j]:
                    if d not in dist:
                        dist[d] = dist[c] + 1
                        queue.append(d)
        out.append(float(np.mean([min(dist.get(c, cap), cap) for c in cells[1:]])))
    return np.array(out)


def test_numcell_and_mc_toy():
    nl = parse_netlist("NETLIST v1\nCELL a 1\nCELL b 1\nCELL c 1\n"
                       "NET x DRIVER a SINKS b\nNET y DRIVER b SINKS c\nNET z DRIVER c SINKS a\n")
    g = build_graph(nl)
    assert list(baselines.numcell(g)) == [2, 2, 2]
    assert list(baselines.mc(g)) == [-1, -1, -1]
    assert list(baselines.ispl(g)) == [2, 2, 2]


def test_ispl_unreachable_is_capped():
    nl = parse_netlist("NETLIST v1\nCELL a 1\nCELL b 1\nNET x DRIVER a SINKS b\n")
    assert baselines.ispl(build_graph(nl)).tolist() == [16.0]


def test_mc_isolated_is_zero():
    nl = parse_netlist("NETLIST v1\nCELL a 1\nCELL b 1\nNET x DRIVER a SINKS b\n")
    assert baselines.mc(build_graph(nl)).tolist() == [0.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_ispl_matches_bfs_oracle(n, seed):
    nl = random_netlist(n, seed)
    assert np.array_equal(baselines.ispl(build_graph(nl)), ispl_oracle(nl))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_mc_matches_definition(n, seed):
    nl = random_netlist(n, seed)
    g = build_graph(nl)
    ours = baselines.mc(g)
    for k in range(g.n_nodes):
        nb = g.neighbors(k)
        expect = -np.mean([1 / max(len(nl.nets[b].cells) - 1, 1) for b in nb]) if nb else 0.0
        assert abs(ours[k] - expect) < 1e-12


def test_poly_recovers_quadratic():
    graphs = [labeled_graph(80, s) for s in range(3)]
    fitted = []
    for g in graphs:
        x = g.node_features
        z = 0.5 + 0.1 * x[:, 1] - 0.02 * x[:, 1] * x[:, 4] + 0.01 * x[:, 0] ** 2
        fitted.append(attach_labels(g, dict(zip(g.net_ids, 2 ** z - 1))))
    model = baselines.fit_poly(fitted[:2], ridge=1e-9)
    pred = model.predict(fitted[2])
    assert np.allclose(np.log2(1 + pred), np.log2(1 + fitted[2].labels), atol=1e-5)
    assert model.coef.shape == (1 + 12 + 78,)


def test_poly_needs_labels():
    g = labeled_graph(30, 1).replace(labels=None)
    with pytest.raises(ValueError):
        baselines.fit_poly([g])
