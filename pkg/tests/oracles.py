"""Brute-force reference implementations used only by the tests."""

import itertools
import math

import numpy as np

from netlen.graph import build_graph
from netlen.netlist import parse_netlist


def random_hypergraph_edges(rng, n=12, n_edges=None):
    n_edges = n_edges or int(rng.integers(12, 25))
    edges = []
    for _ in range(n_edges):
        size = int(rng.integers(2, 5))
        edges.append(tuple(sorted(rng.choice(n, size=size, replace=False).tolist())))
    return edges


def exhaustive_bisection(n, edges, weights, eps):
    """Minimum number of cut hyperedges over all balanced 2-way splits."""
    weights = np.asarray(weights, dtype=float)
    cap = (1 + eps) * weights.sum() / 2
    best = math.inf
    for bits in range(1 << (n - 1)):  # node n-1 pinned to side 0 by symmetry
        side = [(bits >> i) & 1 for i in range(n)]
        w1 = sum(w for w, s in zip(weights, side) if s)
        if w1 > cap or weights.sum() - w1 > cap:
            continue
        cut = sum(1 for e in edges if len({side[p] for p in e}) > 1)
        best = min(best, cut)
    return best


def packing_feasible(weights, k, cap):
    """Whether the weights fit into k bins of size cap (depth-first search).

    A branch is abandoned once the free space too small for any remaining item
    exceeds the total slack ``k * cap - sum(weights)``; failed load multisets
    are remembered per item index.
    """
    items = sorted(weights, reverse=True)
    slack = k * cap - sum(items)
    bins = [0.0] * k
    failed = set()

    def place(i):
        if i == len(items):
            return True
        if sum(cap - b for b in bins if cap - b < items[-1]) > slack + 1e-9:
            return False
        state = (i, tuple(sorted(round(b, 9) for b in bins)))
        if state in failed:
            return False
        seen = set()
        for b in range(k):
            if bins[b] in seen or bins[b] + items[i] > cap:
                continue
            seen.add(bins[b])
            bins[b] += items[i]
            if place(i + 1):
                return True
            bins[b] -= items[i]
        failed.add(state)
        return False

    return slack >= -1e-9 and place(0)


def concordant_auc(scores, positive):
    """Fraction of (positive, negative) pairs ordered correctly, ties one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def top_fraction_mask(labels, frac=0.1):
    m = math.ceil(frac * len(labels))
    thr = sorted(labels, reverse=True)[m - 1]
    return [x >= thr for x in labels]


def binned_pearson(preds, labels, bins=20, q=95):
    labels = list(map(float, labels))
    lo = min(labels)
    hi = float(np.percentile(labels, q))
    groups = [[] for _ in range(bins)]
    for p, y in zip(preds, labels):
        if y > hi:
            continue
        b = min(int((y - lo) / (hi - lo) * bins), bins - 1)
        groups[b].append((p, y))
    xs = [sum(p for p, _ in g) / len(g) for g in groups if g]
    ys = [sum(y for _, y in g) / len(g) for g in groups if g]
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    num = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    den = math.sqrt(sum((a - mx) ** 2 for a in xs) * sum((b - my) ** 2 for b in ys))
    return num / den


def pair_accuracy(pred_len, true_len, ratio=1.3):
    good = total = 0.0
    for i, j in itertools.combinations(range(len(true_len)), 2):
        lo, hi = sorted((true_len[i], true_len[j]))
        if hi < ratio * lo:
            continue
        total += 1
        dp = pred_len[j] - pred_len[i]
        dt = true_len[j] - true_len[i]
        if dp == 0:
            good += 0.5
        elif (dp > 0) == (dt > 0):
            good += 1
    return good / total if total else math.nan


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


# n0 drives c1..c4, each of which drives its own net: n0 has degree 4, the rest degree 1.
# "iso" shares no cell with anything.
STAR = """NETLIST v1
CELL c0 1
CELL c1 1
CELL c2 2
CELL c3 1
CELL c4 3
CELL d1 1
CELL d2 1
CELL d3 1
CELL d4 1
CELL x 1
CELL y 1
NET n0 DRIVER c0 SINKS c1 c2 c3 c4
NET n1 DRIVER c1 SINKS d1
NET n2 DRIVER c2 SINKS d2
NET n3 DRIVER c3 SINKS d3
NET n4 DRIVER c4 SINKS d4
NET iso DRIVER x SINKS y
"""


def star_graph():
    return build_graph(parse_netlist(STAR))


def dense_neighbors(g):
    return [g.neighbors(k) for k in range(g.n_nodes)]


def gcn_oracle(g, h, W):
    nb = dense_neighbors(g)
    z = h @ W
    out = np.zeros((g.n_nodes, W.shape[1]))
    for k in range(g.n_nodes):
        for b in nb[k] + [k]:
            out[k] += z[b] / (math.sqrt(len(nb[k]) + 1) * math.sqrt(len(nb[b]) + 1))
    return sigmoid(out)


def gsage_oracle(g, h, W):
    nb = dense_neighbors(g)
    mean = np.array([h[n].mean(axis=0) if n else np.zeros(h.shape[1]) for n in nb])
    return sigmoid(np.concatenate([h, mean], axis=1) @ W)


def gat_oracle(g, h, heads):
    nb = dense_neighbors(g)
    outs, alphas = [], []
    for W, theta in heads:
        z = h @ W
        out = np.zeros((g.n_nodes, W.shape[1]))
        rows = []
        for k in range(g.n_nodes):
            group = sorted(nb[k] + [k])
            r = np.array([leaky(theta[:, 0] @ np.concatenate([z[b], z[k]])) for b in group])
            a = np.exp(r - r.max())
            a /= a.sum()
            rows.append(a)
            out[k] = sum(ai * z[b] for ai, b in zip(a, group))
        outs.append(out)
        alphas.append(rows)
    return sigmoid(np.concatenate(outs, axis=1)), alphas


def edge_oracle(g, O, E, W1, b1, W2):
    nb = dense_neighbors(g)
    acc = np.zeros((g.n_nodes, W2.shape[1]))
    for e in range(g.n_edges):
        k, b = g.dst[e], g.src[e]
        acc[k] += leaky(np.concatenate([O[k], E[e], O[b]]) @ W1 + b1[0]) @ W2
    mean = np.array([acc[k] / len(nb[k]) if nb[k] else np.zeros(acc.shape[1]) for k in range(g.n_nodes)])
    return acc, mean
