"""Multilevel hypergraph partitioning for cell (P) and net (M) cluster IDs.

k-way partitions come from recursive bisection. Each bisection coarsens
the hypergraph by heavy-edge matching, splits the coarsest level with a
few random balanced starts refined by Fiduccia-Mattheyses, and refines
again at every level on the way back up. A final k-way pass repairs any
balance violation left by the recursion.
"""

from __future__ import annotations

import heapq
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import NetGraph
from .netlist import Netlist

P_DIVISORS = (100, 200, 300, 500, 1000, 2000, 3000)
M_DIVISORS = (500, 1000, 2000)
DEFAULT_EPS = 0.05
MIN_NODE_WEIGHT = 1e-6

COARSEST_SIZE = 200
LARGE_EDGE = 50  # hyperedges above this size are ignored when rating matches


class PartitionError(ValueError):
    pass


@dataclass
class Hypergraph:
    n_nodes: int
    edges: list[tuple[int, ...]]
    node_weights: np.ndarray
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.node_weights = np.asarray(self.node_weights, dtype=np.float64)
        if self.node_weights.shape != (self.n_nodes,):
            raise ValueError("one weight per node required")
        if np.any(self.node_weights <= 0):
            raise ValueError("node weights must be positive")
        for e in self.edges:
            if len(e) < 1:
                raise ValueError("hyperedge with no pins")
            for p in e:
                if not 0 <= p < self.n_nodes:
                    raise ValueError(f"pin {p} out of range")
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(self.n_nodes)]


@dataclass
class PartitionResult:
    kind: str
    k: int
    assignment: np.ndarray
    node_ids: list[str]
    cut: int = 0
    seed: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.node_ids, (int(a) for a in self.assignment)))


@dataclass
class PartitionSuite:
    p_results: list[PartitionResult]
    m_results: list[PartitionResult]
    p_divisors: tuple[int, ...] = P_DIVISORS
    m_divisors: tuple[int, ...] = M_DIVISORS


def cluster_count(n: int, divisor: int) -> int:
    return max(1, math.ceil(n / divisor))


def cells_hypergraph(netlist: Netlist) -> Hypergraph:
    idx = netlist.cell_index()
    edges = [tuple(idx[c] for c in net.cells) for net in netlist.nets if net.cells]
    weights = np.array([max(c.area, MIN_NODE_WEIGHT) for c in netlist.cells.values()])
    return Hypergraph(len(idx), edges, weights, list(idx))


def net_hypergraph(graph: NetGraph) -> Hypergraph:
    src, dst = graph.neighbor_pairs()
    keep = src < dst
    edges = [(int(a), int(b)) for a, b in zip(src[keep], dst[keep])]
    return Hypergraph(graph.n_nodes, edges, np.ones(graph.n_nodes), graph.net_ids)


def connectivity_cut(h: Hypergraph, assignment) -> int:
    """Sum over hyperedges of (number of clusters spanned - 1)."""
    a = np.asarray(assignment)
    return int(sum(len({a[p] for p in e}) - 1 for e in h.edges))


def partition(h: Hypergraph, k: int, eps: float = DEFAULT_EPS, seed: int = 0,
              kind: str = "P") -> PartitionResult:
    if k < 1:
        raise PartitionError("k must be >= 1")
    if k > h.n_nodes:
        raise PartitionError(f"k={k} exceeds node count {h.n_nodes}")
    total = float(h.node_weights.sum())
    cap = (1 + eps) * total / k
    if h.node_weights.max() > cap * (1 + 1e-12):
        raise PartitionError(f"infeasible balance: node weight {h.node_weights.max():.4g} "
                             f"exceeds cluster limit {cap:.4g}")
    assignment = np.zeros(h.n_nodes, dtype=np.int64)
    if k > 1:
        rng = random.Random(seed)
        depth = math.ceil(math.log2(k))
        level_eps = (1 + eps) ** (1.0 / depth) - 1
        _recurse(h, list(range(h.n_nodes)), k, 0, level_eps, rng, assignment)
        _kway_repair(h, assignment, k, cap)
        _kway_refine(h, assignment, k, cap)
    return PartitionResult(kind, k, assignment, list(h.node_ids), connectivity_cut(h, assignment), seed)


def net_graph_partition(graph: NetGraph, k: int, eps: float = DEFAULT_EPS, seed: int = 0) -> PartitionResult:
    return partition(net_hypergraph(graph), k, eps, seed, kind="M")


# -- recursive bisection -----------------------------------------------------

def _recurse(h, nodes, k, offset, eps, rng, assignment):
    if k == 1:
        assignment[nodes] = offset
        return
    k0 = (k + 1) // 2
    local = {v: i for i, v in enumerate(nodes)}
    edges = []
    for e in h.edges:
        pins = tuple(local[p] for p in e if p in local)
        if len(pins) >= 2:
            edges.append(pins)
    weights = [float(h.node_weights[v]) for v in nodes]
    side = bisect(len(nodes), edges, weights, k0 / k, eps, rng)
    part0 = [v for v, s in zip(nodes, side) if s == 0]
    part1 = [v for v, s in zip(nodes, side) if s == 1]
    _recurse(h, part0, k0, offset, eps, rng, assignment)
    _recurse(h, part1, k - k0, offset + k0, eps, rng, assignment)


def bisect(n, edges, weights, frac0, eps, rng, tries=None):
    """Multilevel 2-way split; side 0 targets ``frac0`` of the total weight."""
    total = sum(weights)
    maxw = ((1 + eps) * frac0 * total, (1 + eps) * (1 - frac0) * total)
    # the larger side must be able to absorb any single node
    if max(weights) > min(maxw):
        maxw = tuple(max(m, max(weights)) for m in maxw)

    levels = []
    cur_n, cur_edges, cur_ew, cur_w = n, edges, [1] * len(edges), list(weights)
    cur_edges, cur_ew = _merge_edges(cur_edges, cur_ew)
    limit = max(total / 60.0, max(weights))
    while cur_n > COARSEST_SIZE:
        cmap, cn = _match(cur_n, cur_edges, cur_ew, cur_w, limit, rng)
        if cn > 0.95 * cur_n:
            break
        cw = [0.0] * cn
        for v, c in enumerate(cmap):
            cw[c] += cur_w[v]
        ce, cew = _merge_edges([tuple(sorted({cmap[p] for p in e})) for e in cur_edges], cur_ew)
        levels.append((cur_n, cur_edges, cur_ew, cur_w, cmap))
        cur_n, cur_edges, cur_ew, cur_w = cn, ce, cew, cw

    side = _initial_split(cur_n, cur_edges, cur_ew, cur_w, frac0, maxw, rng, tries)
    for fine_n, fine_edges, fine_ew, fine_w, cmap in reversed(levels):
        side = [side[c] for c in cmap]
        side = fm_refine(fine_n, fine_edges, fine_ew, fine_w, side, maxw)
    return side


def _merge_edges(edges, ew):
    merged: dict[tuple[int, ...], int] = {}
    for e, w in zip(edges, ew):
        if len(e) < 2:
            continue
        merged[e] = merged.get(e, 0) + w
    return list(merged), list(merged.values())


def _incidence(n, edges):
    inc = [[] for _ in range(n)]
    for i, e in enumerate(edges):
        for p in e:
            inc[p].append(i)
    return inc


def _match(n, edges, ew, w, limit, rng):
    inc = _incidence(n, edges)
    order = list(range(n))
    rng.shuffle(order)
    cmap = [-1] * n
    nxt = 0
    for u in order:
        if cmap[u] != -1:
            continue
        scores: dict[int, float] = {}
        for e in inc[u]:
            pins = edges[e]
            if len(pins) > LARGE_EDGE:
                continue
            s = ew[e] / (len(pins) - 1)
            for v in pins:
                if v != u and cmap[v] == -1:
                    scores[v] = scores.get(v, 0.0) + s
        best, best_s = -1, 0.0
        for v, s in scores.items():
            if w[u] + w[v] > limit:
                continue
            if s > best_s or (s == best_s and v < best):
                best, best_s = v, s
        cmap[u] = nxt
        if best >= 0:
            cmap[best] = nxt
        nxt += 1
    return cmap, nxt


def _initial_split(n, edges, ew, w, frac0, maxw, rng, tries=None):
    total = sum(w)
    target0 = frac0 * total
    if tries is None:
        tries = 16 if n <= 64 else 8
    best_side, best_key = None, None
    for _ in range(tries):
        order = list(range(n))
        rng.shuffle(order)
        side = [1] * n
        w0 = 0.0
        for v in order:
            if w0 >= target0:
                break
            if w0 + w[v] <= maxw[0]:
                side[v] = 0
                w0 += w[v]
        side = fm_refine(n, edges, ew, w, side, maxw)
        key = (not _legal(side, w, maxw), _cut2(edges, ew, side))
        if best_key is None or key < best_key:
            best_side, best_key = side, key
    return best_side


def _legal(side, w, maxw):
    w0 = sum(x for x, s in zip(w, side) if s == 0)
    w1 = sum(w) - w0
    return w0 <= maxw[0] + 1e-9 and w1 <= maxw[1] + 1e-9


def _cut2(edges, ew, side):
    return sum(x for e, x in zip(edges, ew) if len({side[p] for p in e}) > 1)


def fm_refine(n, edges, ew, w, side, maxw, max_passes=8):
    """Fiduccia-Mattheyses passes on a 2-way split; returns the improved sides.

    Moves are drawn from a gain-ordered queue per side (highest gain first,
    lowest node id on ties). Each pass rolls back to its best prefix.
    """
    side = list(side)
    inc = _incidence(n, edges)
    wt = [0.0, 0.0]
    for v in range(n):
        wt[side[v]] += w[v]
    stall_limit = max(50, n // 8)
    # a move may overflow by one node so tight splits can still swap; rollback keeps legal prefixes
    slack = max(w) if n else 0.0

    for _ in range(max_passes):
        cnt = [[0, 0] for _ in edges]
        for i, e in enumerate(edges):
            c = cnt[i]
            for p in e:
                c[side[p]] += 1
        gain = [0] * n
        for v in range(n):
            s = side[v]
            g = 0
            for e in inc[v]:
                c = cnt[e]
                if c[s] == 1:
                    g += ew[e]
                if c[1 - s] == 0:
                    g -= ew[e]
            gain[v] = g
        heaps = ([], [])
        for v in range(n):
            heaps[side[v]].append((-gain[v], v))
        heapq.heapify(heaps[0])
        heapq.heapify(heaps[1])
        locked = [False] * n

        def over():
            return max(wt[0] - maxw[0], 0.0) + max(wt[1] - maxw[1], 0.0)

        start_over = over()
        best = (start_over > 1e-9, start_over, 0)  # (illegal, overflow, -gain)
        best_len, cum, moves, stall = 0, 0, [], 0

        while True:
            v = _pick(heaps, gain, locked, side, w, wt, maxw, slack)
            if v is None:
                break
            f = side[v]
            t = 1 - f
            locked[v] = True
            cum += gain[v]
            for e in inc[v]:
                c = cnt[e]
                pins = edges[e]
                x = ew[e]
                if c[t] == 0:
                    for p in pins:
                        if not locked[p]:
                            gain[p] += x
                            heapq.heappush(heaps[side[p]], (-gain[p], p))
                elif c[t] == 1:
                    for p in pins:
                        if side[p] == t and not locked[p]:
                            gain[p] -= x
                            heapq.heappush(heaps[side[p]], (-gain[p], p))
                c[f] -= 1
                c[t] += 1
                if c[f] == 0:
                    for p in pins:
                        if not locked[p]:
                            gain[p] -= x
                            heapq.heappush(heaps[side[p]], (-gain[p], p))
                elif c[f] == 1:
                    for p in pins:
                        if side[p] == f and p != v and not locked[p]:
                            gain[p] += x
                            heapq.heappush(heaps[side[p]], (-gain[p], p))
            side[v] = t
            wt[f] -= w[v]
            wt[t] += w[v]
            moves.append(v)
            o = over()
            key = (o > 1e-9, o if o > 1e-9 else 0.0, -cum)
            if key < best:
                best, best_len, stall = key, len(moves), 0
            else:
                stall += 1
                if stall >= stall_limit:
                    break

        for v in moves[best_len:]:
            f = side[v]
            side[v] = 1 - f
            wt[f] -= w[v]
            wt[1 - f] += w[v]
        if best_len == 0:
            break
    return side


def _pick(heaps, gain, locked, side, w, wt, maxw, slack=0.0):
    """Best legal move: highest gain, lowest id; overweight sides must shed first."""
    over = [wt[0] > maxw[0] + 1e-9, wt[1] > maxw[1] + 1e-9]
    candidates = []
    for s in (0, 1):
        if (over[0] or over[1]) and not over[s]:
            continue
        heap = heaps[s]
        skipped = []
        found = None
        while heap and len(skipped) < 8:
            ng, v = heap[0]
            if locked[v] or side[v] != s or -ng != gain[v]:
                heapq.heappop(heap)
                continue
            if over[s] or wt[1 - s] + w[v] <= maxw[1 - s] + slack + 1e-9:
                found = (-ng, v)
                break
            skipped.append(heapq.heappop(heap))
        for item in skipped:
            heapq.heappush(heap, item)
        if found is not None:
            candidates.append(found)
    if not candidates:
        return None
    candidates.sort(key=lambda gv: (-gv[0], gv[1]))
    return candidates[0][1]


# -- k-way balance repair and greedy refinement -------------------------------

def _kway_state(h, assignment):
    inc = _incidence(h.n_nodes, h.edges)
    counts = []
    for e in h.edges:
        d: dict[int, int] = {}
        for p in e:
            c = int(assignment[p])
            d[c] = d.get(c, 0) + 1
        counts.append(d)
    return inc, counts


def _move_gain(v, a, b, inc, counts):
    g = 0
    for e in inc[v]:
        d = counts[e]
        if d.get(a, 0) == 1:
            g += 1
        if d.get(b, 0) == 0:
            g -= 1
    return g


def _apply_move(v, a, b, inc, counts, assignment):
    for e in inc[v]:
        d = counts[e]
        d[a] -= 1
        if d[a] == 0:
            del d[a]
        d[b] = d.get(b, 0) + 1
    assignment[v] = b


def _kway_repair(h, assignment, k, cap):
    wts = np.bincount(assignment, weights=h.node_weights, minlength=k)
    if np.all(wts <= cap * (1 + 1e-12)):
        return
    inc, counts = _kway_state(h, assignment)
    for _ in range(h.n_nodes * 2):
        over = np.flatnonzero(wts > cap * (1 + 1e-12))
        if over.size == 0:
            return
        a = int(over[np.argmax(wts[over])])
        best = None
        for v in np.flatnonzero(assignment == a):
            wv = h.node_weights[v]
            targets = {c for e in inc[v] for c in counts[e] if c != a}
            targets.update(int(c) for c in np.argsort(wts, kind="stable")[:3] if c != a)
            for b in sorted(targets):
                if wts[b] + wv > cap:
                    continue
                key = (-_move_gain(int(v), a, b, inc, counts), -wv, int(v), b)
                if best is None or key < best:
                    best = key
        if best is not None:
            _, _, v, b = best
            _apply_move(v, a, b, inc, counts, assignment)
            wts[a] -= h.node_weights[v]
            wts[b] += h.node_weights[v]
            continue
        swap = _best_swap(h, assignment, a, wts, cap)
        if swap is None:
            packed = _pack(h.node_weights, k, cap, assignment)
            if packed is None:
                raise PartitionError("infeasible balance: cannot repair cluster weights")
            assignment[:] = packed
            return
        v, u, b = swap
        _apply_move(v, a, b, inc, counts, assignment)
        _apply_move(u, b, a, inc, counts, assignment)
        delta = h.node_weights[v] - h.node_weights[u]
        wts[a] -= delta
        wts[b] += delta
    raise PartitionError("infeasible balance: repair did not converge")


def _pack(weights, k, cap, prefer, budget=200_000):
    """Depth-first bin packing, heaviest node first, trying each node's current cluster first.

    Clusters with equal load are interchangeable apart from the preferred one,
    so only one of them is tried. A branch is cut once free space smaller than
    the lightest node exceeds the total slack, or when its load multiset already
    failed at the same depth. Returns None if infeasible, over budget, or too
    large to search (more than 500 nodes).
    """
    if weights.size > 500:
        return None
    order = np.argsort(-weights, kind="stable")
    lightest = float(weights[order[-1]])
    slack = k * cap - float(weights.sum())
    loads = np.zeros(k)
    out = np.empty_like(prefer)
    steps = 0
    failed = set()

    def place(i):
        nonlocal steps
        if i == order.size:
            return True
        steps += 1
        if steps > budget:
            return False
        free = cap - loads
        if free[free < lightest].sum() > slack + 1e-9:
            return False
        state = (i, tuple(np.sort(np.round(loads, 9))))
        if state in failed:
            return False
        v = order[i]
        first = int(prefer[v])
        tried_loads = set()
        for c in [first] + sorted((c for c in range(k) if c != first), key=lambda c: (loads[c], c)):
            if loads[c] + weights[v] > cap:
                continue
            if c != first:
                key = round(float(loads[c]), 9)
                if key in tried_loads:
                    continue
                tried_loads.add(key)
            loads[c] += weights[v]
            out[v] = c
            if place(i + 1):
                return True
            loads[c] -= weights[v]
        failed.add(state)
        return False

    return out if place(0) else None


def _best_swap(h, assignment, a, wts, cap):
    """Exchange a heavy node of ``a`` for a lighter one elsewhere, shedding the most weight."""
    w = h.node_weights
    best, best_key = None, None
    members = np.flatnonzero(assignment == a)
    for b in range(len(wts)):
        if b == a:
            continue
        others = np.flatnonzero(assignment == b)
        for v in members:
            for u in others:
                delta = w[v] - w[u]
                if delta <= 1e-12 or wts[b] + delta > cap:
                    continue
                key = (-min(delta, wts[a] - cap), int(v), int(u))
                if best_key is None or key < best_key:
                    best, best_key = (int(v), int(u), b), key
    return best


def _kway_refine(h, assignment, k, cap, passes=2):
    """Greedy positive-gain boundary moves that keep every cluster under ``cap``."""
    inc, counts = _kway_state(h, assignment)
    wts = np.bincount(assignment, weights=h.node_weights, minlength=k)
    for _ in range(passes):
        moved = False
        for v in range(h.n_nodes):
            a = int(assignment[v])
            targets = sorted({c for e in inc[v] for c in counts[e] if c != a})
            best_g, best_b = 0, -1
            for b in targets:
                if wts[b] + h.node_weights[v] > cap:
                    continue
                g = _move_gain(v, a, b, inc, counts)
                if g > best_g:
                    best_g, best_b = g, b
            if best_b >= 0:
                _apply_move(v, a, best_b, inc, counts, assignment)
                wts[a] -= h.node_weights[v]
                wts[best_b] += h.node_weights[v]
                moved = True
        if not moved:
            break


# -- suites and files --------------------------------------------------------

def _suite_job(args):
    h, k, eps, seed, kind = args
    return partition(h, k, eps, seed, kind)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NETLEN_THREADS", "1")))
    except ValueError:
        return 1


def build_suite(netlist: Netlist, graph: NetGraph, seed: int = 0, eps: float = DEFAULT_EPS,
                p_divisors=P_DIVISORS, m_divisors=M_DIVISORS, workers: int | None = None) -> PartitionSuite:
    hc = cells_hypergraph(netlist)
    hn = net_hypergraph(graph)
    jobs = [(hc, cluster_count(hc.n_nodes, d), eps, seed, "P") for d in p_divisors]
    jobs += [(hn, cluster_count(hn.n_nodes, d), eps, seed, "M") for d in m_divisors]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_suite_job, jobs))
    else:
        results = [_suite_job(j) for j in jobs]
    n_p = len(p_divisors)
    return PartitionSuite(results[:n_p], results[n_p:], tuple(p_divisors), tuple(m_divisors))


def write_partition(result: PartitionResult, path):
    lines = [f"PART {result.kind} k={result.k} seed={result.seed}"]
    lines += [f"{nid} {int(c)}" for nid, c in zip(result.node_ids, result.assignment)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_partition(path) -> PartitionResult:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise PartitionError(f"{path}: empty partition file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "PART" or head[1] not in ("P", "M") \
            or not head[2].startswith("k=") or not head[3].startswith("seed="):
        raise PartitionError(f"{path}: bad header {lines[0]!r}")
    k = int(head[2][2:])
    ids, assign = [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise PartitionError(f"{path}:{i}: expected '<node-id> <cluster-id>'")
        c = int(parts[1])
        if not 0 <= c < k:
            raise PartitionError(f"{path}:{i}: cluster id {c} outside [0, {k})")
        ids.append(parts[0])
        assign.append(c)
    return PartitionResult(head[1], k, np.array(assign, dtype=np.int64), ids, 0, int(head[3][5:]))


def write_suite(suite: PartitionSuite, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for d, r in zip(suite.p_divisors, suite.p_results):
        write_partition(r, out / f"P_d{d}.prt")
    for d, r in zip(suite.m_divisors, suite.m_results):
        write_partition(r, out / f"M_d{d}.prt")


def read_suite(in_dir) -> PartitionSuite:
    root = Path(in_dir)

    def collect(kind):
        found = []
        for p in root.glob(f"{kind}_d*.prt"):
            try:
                found.append((int(p.stem.split("_d", 1)[1]), p))
            except ValueError:
                continue
        found.sort()
        return tuple(d for d, _ in found), [read_partition(p) for _, p in found]

    pd, pr = collect("P")
    md, mr = collect("M")
    if not pr or not mr:
        raise PartitionError(f"{in_dir}: needs P_d*.prt and M_d*.prt files")
    return PartitionSuite(pr, mr, pd, md)
