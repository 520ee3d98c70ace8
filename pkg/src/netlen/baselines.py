"""Classical net-length estimators: NumCell, mutual contraction, ISPL and a polynomial fit.

Scores come back as arrays in node (net) order. NumCell and MC are rank
scores, not µm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import NetGraph

ISPL_CAP = 16
POLY_RIDGE = 1e-3


def numcell(graph: NetGraph) -> np.ndarray:
    """Cells on the net, ``1 + #sinks``."""
    return 1.0 + graph.fanout_sizes().astype(np.float64)


def mc(graph: NetGraph) -> np.ndarray:
    """Mutual-contraction proxy: ``-mean over neighbors of 1/(|cells(n_b)| - 1)``.

    Small neighbor nets pull a net's cells together, so a more negative
    score means a shorter expected net. Isolated nets score 0.
    """
    sizes = np.array([len(n.cells) for n in graph.netlist.nets], dtype=np.float64)
    inv = 1.0 / np.maximum(sizes - 1.0, 1.0)
    out = np.zeros(graph.n_nodes)
    for k in range(graph.n_nodes):
        nb = graph.neighbors(k)
        if nb:
            out[k] = -inv[nb].sum() / len(nb)
    return out


def one_hop_signatures(graph: NetGraph) -> list[tuple]:
    """``(own cell count, sorted neighbor cell counts)`` per net.

    Everything MC looks at is a function of this tuple, so nets sharing a
    signature always get the same MC score.
    """
    sizes = [len(n.cells) for n in graph.netlist.nets]
    return [(sizes[k], tuple(sorted(sizes[b] for b in graph.neighbors(k)))) for k in range(graph.n_nodes)]


def signature_groups(graph: NetGraph, min_size: int = 2) -> dict[tuple, np.ndarray]:
    """Net indices grouped by identical 1-hop signature, groups of at least ``min_size``."""
    groups: dict[tuple, list[int]] = {}
    for k, sig in enumerate(one_hop_signatures(graph)):
        groups.setdefault(sig, []).append(k)
    return {s: np.array(v) for s, v in groups.items() if len(v) >= min_size}


def _rows(ptr: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Concatenated CSR rows."""
    lo, hi = ptr[rows], ptr[rows + 1]
    span = hi - lo
    if span.sum() == 0:
        return np.zeros(0, dtype=idx.dtype)
    starts = np.repeat(lo - np.cumsum(span) + span, span)
    return idx[starts + np.arange(span.sum())]


def ispl(graph: NetGraph, cap: int = ISPL_CAP) -> np.ndarray:
    """Mean hop distance (nets traversed) from driver to each other cell, net itself removed.

    Driverless nets use their first sink as the source; unreachable cells
    count as ``cap``; single-cell nets score 0.
    """
    netlist = graph.netlist
    cidx = netlist.cell_index()
    members = [np.array([cidx[c] for c in n.cells], dtype=np.int64) for n in netlist.nets]
    n_nets, n_cells = len(members), len(cidx)
    nc_ptr = np.concatenate([[0], np.cumsum([m.size for m in members])]).astype(np.int64)
    nc_idx = np.concatenate(members) if members else np.zeros(0, np.int64)
    pin_net = np.repeat(np.arange(n_nets), np.diff(nc_ptr))
    order = np.argsort(nc_idx, kind="stable")
    cn_idx = pin_net[order]
    cn_ptr = np.concatenate([[0], np.cumsum(np.bincount(nc_idx, minlength=n_cells))]).astype(np.int64)

    out = np.zeros(n_nets)
    seen_cell = np.zeros(n_cells, dtype=bool)
    seen_net = np.zeros(n_nets, dtype=bool)
    for k, m in enumerate(members):
        if m.size < 2:
            continue
        targets = m[1:]
        dist = np.full(targets.size, float(cap))
        seen_cell[:] = False
        seen_net[:] = False
        seen_net[k] = True
        seen_cell[m[0]] = True
        frontier = m[:1]
        left = targets.size
        for hop in range(1, cap + 1):
            nets = np.unique(_rows(cn_ptr, cn_idx, frontier))
            nets = nets[~seen_net[nets]]
            if nets.size == 0:
                break
            seen_net[nets] = True
            cells = np.unique(_rows(nc_ptr, nc_idx, nets))
            cells = cells[~seen_cell[cells]]
            seen_cell[cells] = True
            hit = seen_cell[targets] & (dist == cap)
            if hit.any():
                dist[hit] = hop
                left -= int(hit.sum())
                if left == 0:
                    break
            frontier = cells
        out[k] = dist.mean()
    return out


# -- polynomial regression ----------------------------------------------------

def poly_design(x: np.ndarray) -> np.ndarray:
    """``[1, x_i, x_i x_j (i <= j)]`` columns."""
    n, d = x.shape
    i, j = np.triu_indices(d)
    return np.concatenate([np.ones((n, 1)), x, x[:, i] * x[:, j]], axis=1)


@dataclass
class PolyModel:
    mean: np.ndarray
    std: np.ndarray
    coef: np.ndarray

    def predict(self, graph: NetGraph) -> np.ndarray:
        z = poly_design((graph.node_features - self.mean) / self.std) @ self.coef
        return np.power(2.0, z) - 1.0


def fit_poly(graphs: list[NetGraph], ridge: float = POLY_RIDGE) -> PolyModel:
    """Least squares on ``log2(1 + HPWL)``; every coefficient but the bias is ridge-penalized."""
    if not graphs or any(g.labels is None for g in graphs):
        raise ValueError("poly needs labeled training graphs")
    x = np.concatenate([g.node_features for g in graphs])
    y = np.concatenate([np.log2(1.0 + g.labels) for g in graphs])
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-8)
    X = poly_design((x - mean) / std)
    penalty = np.full(X.shape[1], ridge)
    penalty[0] = 0.0
    coef = np.linalg.solve(X.T @ X + np.diag(penalty), X.T @ y)
    return PolyModel(mean, std, coef)


def poly(train: list[NetGraph], test: NetGraph) -> np.ndarray:
    return fit_poly(train).predict(test)


METHODS = {"numcell": numcell, "mc": mc, "ispl": ispl}
