"""Node features (12 per net) and partition-derived edge features.

Edge-feature layout, per directed edge ``b -> k``: for every cell partition
P (in divisor order) the block ``[sum F0, mean F0, sum F1, mean F1]``,
then for every net partition M the block ``[sum F2, mean F2, f3]``.
With the default 7 P and 3 M configurations that is 7*4 + 3*3 = 37 values.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .graph import NetGraph
from .netlist import Net
from .partition import PartitionResult, PartitionSuite

NODE_FEATURE_NAMES = (
    "fanin_size", "fanout_size", "driver_area", "sum_area",
    "sum_out_in", "sum_out_out", "sum_in_in", "sum_in_out",
    "std_out_in", "std_out_out", "std_in_in", "std_in_out",
)
P_BLOCK = ("sum_F0", "mean_F0", "sum_F1", "mean_F1")
M_BLOCK = ("sum_F2", "mean_F2", "f3")


def _adjacency(lists: list[list[int]], n: int) -> sp.csr_matrix:
    rows = np.repeat(np.arange(n), [len(x) for x in lists])
    cols = np.fromiter((c for x in lists for c in x), dtype=np.int64, count=rows.size)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def _sum_and_std(adj: sp.csr_matrix, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    count = np.asarray(adj.sum(axis=1)).ravel()
    s1 = adj @ values
    s2 = adj @ (values * values)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(count > 1, s2 / np.maximum(count, 1) - (s1 / np.maximum(count, 1)) ** 2, 0.0)
    return s1, np.sqrt(np.maximum(var, 0.0))


def node_features(graph: NetGraph) -> NetGraph:
    """Attach the 12-wide node feature vector to every net."""
    n = graph.n_nodes
    netlist = graph.netlist
    fin = graph.fanin_sizes().astype(np.float64)
    fout = graph.fanout_sizes().astype(np.float64)
    area = np.array([netlist.driver_area(net) for net in netlist.nets], dtype=np.float64)
    if n == 0:
        return graph.replace(node_features=np.zeros((0, 12)))
    a_in = _adjacency(graph.fanin, n)
    a_out = _adjacency(graph.fanout, n)
    sum_area = area + a_out @ area
    sum_out_in, std_out_in = _sum_and_std(a_out, fin)
    sum_out_out, std_out_out = _sum_and_std(a_out, fout)
    sum_in_in, std_in_in = _sum_and_std(a_in, fin)
    sum_in_out, std_in_out = _sum_and_std(a_in, fout)
    feats = np.stack([fin, fout, area, sum_area,
                      sum_out_in, sum_out_out, sum_in_in, sum_in_out,
                      std_out_in, std_out_out, std_in_in, std_in_out], axis=1)
    return graph.replace(node_features=feats)


# -- scalar reference of the edge-feature definition -------------------------

def _as_map(part) -> dict:
    return part.as_dict() if isinstance(part, PartitionResult) else part


def measure_diff(c_bk: str, n_b: Net, c_ok: str, n_o: Net, P, M, exact: bool = False):
    """Cluster-ID difference between edge cells and between two source nets.

    Returns ``(f0, f1, f2)``. With ``exact=True`` f1 is a ``Fraction``.
    """
    P, M = _as_map(P), _as_map(M)
    try:
        f0 = int(P[c_bk] != P[c_ok])
        p_b = Counter(P[c] for c in n_b.cells)
        p_o = Counter(P[c] for c in n_o.cells)
        f2 = int(M[n_b.id] != M[n_o.id])
    except KeyError as exc:
        raise KeyError(f"no cluster assignment for {exc.args[0]!r}") from None
    size_b, size_o = sum(p_b.values()), sum(p_o.values())
    if size_b == 0 or size_o == 0:
        raise ValueError("measure_diff needs nets with at least one cell")
    b_not_o = sum((p_b - p_o).values())
    o_not_b = sum((p_o - p_b).values())
    f1 = Fraction(b_not_o, size_b) + Fraction(o_not_b, size_o)
    return f0, (f1 if exact else float(f1)), f2


def edge_lists(graph: NetGraph, edge: int, P, M, exact: bool = False):
    """F0, F1, F2 lists and f3 for one directed edge, other neighbors in id order."""
    nets = graph.netlist.nets
    cells = graph.netlist.cell_ids
    P, M = _as_map(P), _as_map(M)
    b, k = int(graph.src[edge]), int(graph.dst[edge])
    c_bk = cells[graph.edge_cell[edge]]
    F0, F1, F2 = [], [], []
    for e2 in np.flatnonzero(graph.dst == k):
        o = int(graph.src[e2])
        if o == b:
            continue
        f0, f1, f2 = measure_diff(c_bk, nets[b], cells[graph.edge_cell[e2]], nets[o], P, M, exact)
        F0.append(f0)
        F1.append(f1)
        F2.append(f2)
    f3 = int(M[nets[b].id] != M[nets[k].id])
    return F0, F1, F2, f3


def edge_block(F0, F1, F2, f3) -> list:
    """Summaries ``[sum F0, mean F0, sum F1, mean F1, sum F2, mean F2, f3]``; empty means are 0."""
    def mean(x):
        return sum(x) / len(x) if x else 0
    return [sum(F0), mean(F0), sum(F1), mean(F1), sum(F2), mean(F2), f3]


# -- vectorized edge features -------------------------------------------------

def _edge_pairs(graph: NetGraph) -> tuple[np.ndarray, np.ndarray]:
    """All (edge, other edge) pairs into the same target from distinct source nets."""
    E = graph.n_edges
    if E == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    n = graph.n_nodes
    in_count = np.bincount(graph.dst, minlength=n)
    start = np.concatenate(([0], np.cumsum(in_count)[:-1]))
    size = in_count[graph.dst]
    first = np.repeat(np.arange(E), size)
    offs = np.arange(first.size) - np.repeat(np.cumsum(size) - size, size)
    second = start[graph.dst[first]] + offs
    keep = graph.src[first] != graph.src[second]
    return first[keep], second[keep]


class _PinClusters:
    """Per-net multiset of pin cluster IDs for one cell partition."""

    def __init__(self, pin_net: np.ndarray, pin_cell: np.ndarray, n_nets: int, cell_cluster: np.ndarray, k: int):
        self.k = k
        keys = pin_net * k + cell_cluster[pin_cell]
        self.keys, self.counts = np.unique(keys, return_counts=True)
        self.indptr = np.searchsorted(self.keys, np.arange(n_nets + 1) * k)
        self.size = np.bincount(pin_net, minlength=n_nets)

    def intersection(self, b: np.ndarray, o: np.ndarray) -> np.ndarray:
        lo, hi = self.indptr[b], self.indptr[b + 1]
        span = hi - lo
        pair = np.repeat(np.arange(b.size), span)
        ent = np.arange(pair.size) - np.repeat(np.cumsum(span) - span, span) + np.repeat(lo, span)
        cluster = self.keys[ent] - b[pair] * self.k
        probe = o[pair] * self.k + cluster
        pos = np.searchsorted(self.keys, probe)
        pos_c = np.minimum(pos, self.keys.size - 1)
        found = (pos < self.keys.size) & (self.keys[pos_c] == probe)
        other = np.where(found, self.counts[pos_c], 0)
        return np.bincount(pair, weights=np.minimum(self.counts[ent], other), minlength=b.size)


def _sum_mean(first: np.ndarray, values: np.ndarray, E: int, others: np.ndarray):
    s = np.bincount(first, weights=values, minlength=E)
    m = np.divide(s, others, out=np.zeros(E), where=others > 0)
    return s, m


def edge_features(graph: NetGraph, suite: PartitionSuite) -> NetGraph:
    """Attach partition-derived features to every directed edge."""
    netlist = graph.netlist
    E, n = graph.n_edges, graph.n_nodes
    cidx = netlist.cell_index()
    nidx = netlist.net_index()
    pin_net = np.array([i for i, net in enumerate(netlist.nets) for _ in net.cells], dtype=np.int64)
    pin_cell = np.array([cidx[c] for net in netlist.nets for c in net.cells], dtype=np.int64)

    first, second = _edge_pairs(graph)
    b, o = graph.src[first], graph.src[second]
    others = np.bincount(first, minlength=E).astype(np.float64)

    blocks = []
    for res in suite.p_results:
        cl = _cluster_array(res, cidx, "cell")
        f0 = (cl[graph.edge_cell[first]] != cl[graph.edge_cell[second]]).astype(np.float64)
        pins = _PinClusters(pin_net, pin_cell, n, cl, res.k)
        inter = pins.intersection(b, o) if first.size else np.zeros(0)
        f1 = 2.0 - inter / pins.size[b] - inter / pins.size[o]
        s0, m0 = _sum_mean(first, f0, E, others)
        s1, m1 = _sum_mean(first, f1, E, others)
        blocks += [s0, m0, s1, m1]
    for res in suite.m_results:
        ml = _cluster_array(res, nidx, "net")
        f2 = (ml[b] != ml[o]).astype(np.float64)
        s2, m2 = _sum_mean(first, f2, E, others)
        f3 = (ml[graph.src] != ml[graph.dst]).astype(np.float64)
        blocks += [s2, m2, f3]
    feats = np.stack(blocks, axis=1) if blocks else np.zeros((E, 0))
    layout = {"p_divisors": list(suite.p_divisors), "m_divisors": list(suite.m_divisors)}
    return graph.replace(edge_features=feats, edge_layout=layout)


def _cluster_array(res: PartitionResult, index: dict[str, int], what: str) -> np.ndarray:
    out = np.full(len(index), -1, dtype=np.int64)
    for nid, c in zip(res.node_ids, res.assignment):
        i = index.get(nid)
        if i is not None:
            out[i] = c
    if np.any(out < 0):
        missing = [k for k, i in index.items() if out[i] < 0][:5]
        raise KeyError(f"{res.kind} partition has no assignment for {what}(s) {missing}")
    return out


def featurize(graph: NetGraph, suite: PartitionSuite | None) -> NetGraph:
    graph = node_features(graph)
    if suite is not None:
        graph = edge_features(graph, suite)
    return graph


# -- standardization ----------------------------------------------------------

@dataclass
class FeatureScaler:
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray | None = None
    edge_std: np.ndarray | None = None

    MIN_STD = 1e-8

    def transform_nodes(self, x: np.ndarray) -> np.ndarray:
        return (x - self.node_mean) / np.maximum(self.node_std, self.MIN_STD)

    def transform_edges(self, x: np.ndarray) -> np.ndarray:
        if self.edge_mean is None:
            raise ValueError("scaler was fit without edge features")
        return (x - self.edge_mean) / np.maximum(self.edge_std, self.MIN_STD)


def standardize(graphs: list[NetGraph]) -> FeatureScaler:
    """Per-dimension mean/std over all training nodes (and edges)."""
    if not graphs:
        raise ValueError("need at least one training graph")
    nodes = np.concatenate([g.node_features for g in graphs], axis=0)
    scaler = FeatureScaler(nodes.mean(axis=0), nodes.std(axis=0))
    if all(g.edge_features is not None for g in graphs):
        edges = np.concatenate([g.edge_features for g in graphs], axis=0)
        if edges.shape[0]:
            scaler.edge_mean = edges.mean(axis=0)
            scaler.edge_std = edges.std(axis=0)
    return scaler
