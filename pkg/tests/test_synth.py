import numpy as np
import pytest
from scipy.stats import spearmanr

from netlen.netlist import Cell, Net, Netlist, NetlistError
from netlen.synth import GenConfig, Placement, generate, hpwl_labels, place, sink_histogram, total_hpwl


@pytest.fixture(scope="module")
def design():
    nl = generate(GenConfig(cells=1200, family="B", seed=1))
    return nl, place(nl, iterations=200, seed=1)


def _logic_nets(nl):
    return [n for n in nl.nets if not n.id.startswith("pi")]


def test_generate_is_deterministic():
    a = generate(GenConfig(cells=500, family="A", seed=3)).serialize()
    b = generate(GenConfig(cells=500, family="A", seed=3)).serialize()
    c = generate(GenConfig(cells=500, family="A", seed=4)).serialize()
    assert a == b and a != c


def test_generated_netlist_is_a_dag(design):
    nl, _ = design
    order = {c: i for i, c in enumerate(nl.cell_ids)}
    pads = {c for c, cell in nl.cells.items() if cell.area == 0}
    for net in nl.nets:
        if net.driver is not None and net.driver not in pads:
            assert all(order[s] > order[net.driver] or s in pads for s in net.sinks)


def test_two_pin_only_distribution():
    nl = generate(GenConfig(cells=400, seed=2, sink_probs=(1.0,)))
    assert all(len(n.sinks) == 1 for n in nl.nets)


def test_sink_histogram_tracks_target():
    cfg = GenConfig(cells=3000, family="C", seed=0)
    nl = generate(cfg)
    target = np.array(cfg.resolved().sink_probs)
    logic = Netlist(nl.cells, _logic_nets(nl))
    assert len(logic.nets) >= 1000
    hist = sink_histogram(logic, target.size)
    assert 0.5 * np.abs(hist - target).sum() <= 0.10


def test_bad_configs():
    with pytest.raises(ValueError, match="infeasible"):
        generate(GenConfig(cells=100, sink_probs=(0.0, 0.0)))
    with pytest.raises(ValueError):
        generate(GenConfig(cells=1))
    with pytest.raises(ValueError):
        generate(GenConfig(cells=100, locality=1.5))


def test_hpwl_definition():
    nl = Netlist({c: Cell(c, 1.0) for c in "abcde"},
                 [Net("two", "a", ("b",)), Net("one", "e", ()), Net("three", "a", ("c", "d"))])
    pl = Placement(list("abcde"), np.array([[0, 0], [3, 4], [1, 5], [2, 1], [9, 9.0]]), (10, 10))
    assert hpwl_labels(nl, pl) == {"two": 7.0, "one": 0.0, "three": 7.0}
    with pytest.raises(NetlistError, match="no coordinate"):
        hpwl_labels(nl, Placement(list("abcd"), pl.xy[:4], (10, 10)))


def test_two_body_converges():
    nl = Netlist({"a": Cell("a", 1.0), "b": Cell("b", 1.0)}, [Net("n", "a", ("b",))])
    start = place(nl, iterations=0, seed=0)
    pl = place(nl, iterations=40, seed=0)
    h = pl.history
    assert np.all(np.diff(h) <= 1e-12)
    assert h[-1] < total_hpwl([[0, 1]], start.xy)


def test_clique_shrinks():
    cells = {f"c{i}": Cell(f"c{i}", 1.0) for i in range(5)}
    nl = Netlist(cells, [Net(f"n{i}", f"c{i}", tuple(f"c{j}" for j in range(5) if j != i)) for i in range(5)])
    members = [[0, 1, 2, 3, 4]]
    before = total_hpwl(members, place(nl, iterations=0, seed=3).xy)
    after = total_hpwl(members, place(nl, iterations=100, seed=3).xy)
    assert after < before


def test_placement_properties(design):
    nl, pl = design
    side = pl.die[0]
    assert np.all(pl.xy >= 0) and np.all(pl.xy <= side)
    total_area = sum(c.area for c in nl.cells.values())
    assert abs(side - 1.1 * np.sqrt(total_area)) < 1e-9
    # the second half of the run never increases total HPWL
    tail = np.array(pl.history[99:])
    assert np.all(np.diff(tail) <= 1e-9 * tail[0])
    members = [[nl.cell_index()[c] for c in net.cells] for net in nl.nets]
    start = place(nl, iterations=0, seed=1)
    assert pl.history[-1] < 0.5 * total_hpwl(members, start.xy)


def test_place_is_deterministic():
    nl = generate(GenConfig(cells=300, seed=5))
    a, b = place(nl, 60, seed=2), place(nl, 60, seed=2)
    assert np.array_equal(a.xy, b.xy)


def test_labels_correlate_with_cell_count(design):
    nl, pl = design
    labels = hpwl_labels(nl, pl)
    size = [len(n.cells) for n in nl.nets]
    rho = spearmanr(size, [labels[n.id] for n in nl.nets]).statistic
    assert rho > 0.2


def test_pads_sit_on_the_boundary(design):
    nl, pl = design
    side = pl.die[0]
    for c, cell in nl.cells.items():
        if cell.area == 0:
            x, y = pl[c]
            assert min(x, y, side - x, side - y) < 1e-9
