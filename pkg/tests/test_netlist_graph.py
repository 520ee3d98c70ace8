import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netlen.graph import FormatError, attach_labels, build_graph, load_graph, save_graph
from netlen.netlist import NetlistError, parse_labels, parse_netlist, format_labels

from conftest import FIG3_TEXT, random_netlist


def test_fig3_degrees(fig3):
    g = build_graph(fig3)
    assert list(g.degrees()) == [1, 1, 4, 1, 1]
    assert list(g.fanin_sizes()) == [0, 0, 2, 1, 1]
    assert list(g.fanout_sizes()) == [1, 5, 2, 1, 2]
    assert g.fanout[2] == [3, 4] and g.fanin[2] == [0, 1]


def test_edges_come_in_pairs(fig3):
    g = build_graph(fig3)
    pairs = set(zip(g.src.tolist(), g.dst.tolist()))
    assert all((d, s) in pairs for s, d in pairs)


def test_driverless_net_has_no_fanin():
    nl = parse_netlist("NETLIST v1\nCELL a 1\nCELL b 1\nNET pi DRIVER - SINKS a\nNET x DRIVER a SINKS b\n")
    g = build_graph(nl)
    assert g.fanin[0] == [] and g.fanout[0] == [1]
    assert g.fanin[1] == [0]


@pytest.mark.parametrize("text,line,col", [
    ("NETLIST v2\n", 1, 1),
    ("NETLIST v1\nCELL a x\n", 2, 8),
    ("NETLIST v1\nCELL a 1\nCELL a 2\n", 3, 6),
    ("NETLIST v1\nCELL a 1\nNET n DRIVER a SINKS zz\n", 3, 22),
    ("NETLIST v1\nCELL a 1\nCELL b 1\nNET n DRIVER a b SINKS a\n", 4, 14),
    ("NETLIST v1\nCELL a 1\nNET n DRIVER a SINKS a\n", 3, 22),
    ("NETLIST v1\nCELL a -1\n", 2, 8),
])
def test_parse_errors_locate(text, line, col):
    with pytest.raises(NetlistError) as err:
        parse_netlist(text)
    assert err.value.line == line and err.value.column == col


def test_duplicate_net_names_first_line():
    with pytest.raises(NetlistError, match="line 3"):
        parse_netlist("NETLIST v1\nCELL a 1\nNET n DRIVER a SINKS\nNET n DRIVER - SINKS a\n")


def test_labels_roundtrip_and_errors(fig3):
    labels = {"n1": 1.5, "n2": 0.1 + 0.2}
    assert parse_labels(format_labels(labels)) == labels
    with pytest.raises(NetlistError):
        parse_labels("n1 -3\n")
    with pytest.raises(NetlistError):
        parse_labels("n1 nan\n")
    g = build_graph(fig3)
    with pytest.raises(NetlistError, match="missing labels"):
        attach_labels(g, {"n1": 1.0})
    with pytest.raises(NetlistError, match="unknown"):
        attach_labels(g, {f"n{i}": 1.0 for i in range(1, 7)})
    assert attach_labels(g, {}, training=False).labels is None


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_serialize_roundtrip(n, seed):
    nl = random_netlist(n, seed)
    back = parse_netlist(nl.serialize())
    assert back.serialize() == nl.serialize()
    assert [c.area for c in back.cells.values()] == [c.area for c in nl.cells.values()]


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_graph_invariants(n, seed):
    nl = random_netlist(n, seed)
    g = build_graph(nl)
    drivers = {net.driver: i for i, net in enumerate(nl.nets)}
    for k, net in enumerate(nl.nets):
        expect_out = sorted({drivers[s] for s in net.sinks if s in drivers})
        assert g.fanout[k] == expect_out
        for o in g.fanout[k]:
            assert k in g.fanin[o]
    # every edge's cell is shared by both nets
    for s, d, c in zip(g.src, g.dst, g.edge_cell):
        cid = nl.cell_ids[c]
        assert cid in nl.nets[s].cells and cid in nl.nets[d].cells


def test_graph_cache_roundtrip(tmp_path, small_graphs):
    g = small_graphs[0]
    save_graph(g, tmp_path / "g.nlg")
    h = load_graph(tmp_path / "g.nlg")
    assert np.array_equal(h.node_features, g.node_features)
    assert np.array_equal(h.edge_features, g.edge_features)
    assert np.array_equal(h.labels, g.labels)
    assert h.edge_layout == g.edge_layout
    assert (tmp_path / "g.nlg").read_bytes()[:4] == b"NLG1"


def test_graph_cache_rejects_bad_files(tmp_path, fig3):
    p = tmp_path / "g.nlg"
    save_graph(build_graph(fig3), p)
    raw = bytearray(p.read_bytes())
    (tmp_path / "magic.nlg").write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_graph(tmp_path / "magic.nlg")
    raw[4] = 99
    (tmp_path / "version.nlg").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_graph(tmp_path / "version.nlg")
    (tmp_path / "short.nlg").write_bytes(p.read_bytes()[:20])
    with pytest.raises(FormatError):
        load_graph(tmp_path / "short.nlg")


def test_fig3_text_parses():
    nl = parse_netlist(FIG3_TEXT)
    assert len(nl.cells) == 11 and nl.net_ids == ["n1", "n2", "n3", "n4", "n5"]
