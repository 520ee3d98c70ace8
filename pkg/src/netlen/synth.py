"""Synthetic netlists and a force-directed placer used as the HPWL label oracle.

Netlists are generated over a binary module hierarchy laid over the cell
index range. Every logic cell drives one net whose sinks lie forward in
index order (so the result is a DAG). A net first draws its scope: the
driver's own leaf module with probability ``locality``, otherwise
progressively larger enclosing modules. Most nets then put all sinks in one
destination leaf inside that scope; a ``broadcast`` fraction draws a scope
per sink instead. Cell areas carry a per-region scale factor. Zero-area
I/O pad cells feed cells without fan-in and terminate cells near the end
of the order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .netlist import Cell, Net, Netlist, NetlistError

# Probability of 1..20 sinks: 2-pin heavy with a tail out to 21-pin nets.
DEFAULT_SINK_PROBS = (0.56, 0.16, 0.08, 0.05, 0.035, 0.03, 0.02, 0.015, 0.012, 0.01,
                      0.008, 0.007, 0.006, 0.005, 0.004, 0.004, 0.003, 0.003, 0.003, 0.003)


STYLE_MODULE = 256


def family_style(family: str) -> dict:
    """Deterministic per-family generator style; families play the role of designs."""
    rng = np.random.default_rng(zlib.crc32(family.encode()))
    return {
        "locality": float(rng.uniform(0.5, 0.75)),
        "leaf_size": int(rng.choice([8, 16, 32])),
        "area_sigma": float(rng.uniform(0.3, 0.7)),
        "tail": float(rng.uniform(0.7, 1.4)),
    }


@dataclass
class GenConfig:
    cells: int = 2000
    family: str = "A"
    seed: int = 0
    sink_probs: tuple[float, ...] | None = None
    locality: float | None = None
    leaf_size: int | None = None
    area_mu: float = 0.7
    area_sigma: float | None = None
    io_fraction: float = 0.04
    broadcast: float = 0.2
    region_sigma: float = 0.6

    def resolved(self) -> "GenConfig":
        """Copy with family defaults filled in and the sink distribution normalized."""
        style = family_style(self.family)
        probs = self.sink_probs
        if probs is None:
            base = np.array(DEFAULT_SINK_PROBS)
            tail = np.arange(1, base.size + 1) >= 4
            base[tail] *= style["tail"]
            probs = tuple(base / base.sum())
        probs = np.asarray(probs, dtype=np.float64)
        if self.cells < 2:
            raise ValueError("need at least 2 cells")
        if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0) or probs.sum() <= 0:
            raise ValueError("infeasible sink-count distribution")
        if probs.size >= self.cells:
            raise ValueError(f"sink counts up to {probs.size} need more than {self.cells} cells")
        return GenConfig(
            cells=self.cells, family=self.family, seed=self.seed,
            sink_probs=tuple(probs / probs.sum()),
            locality=style["locality"] if self.locality is None else self.locality,
            leaf_size=style["leaf_size"] if self.leaf_size is None else self.leaf_size,
            area_mu=self.area_mu,
            area_sigma=style["area_sigma"] if self.area_sigma is None else self.area_sigma,
            io_fraction=self.io_fraction,
            broadcast=self.broadcast,
            region_sigma=self.region_sigma,
        )


def generate(config: GenConfig) -> Netlist:
    cfg = config.resolved()
    if not 0 <= cfg.locality <= 1 or cfg.leaf_size < 2:
        raise ValueError("locality must be in [0, 1] and leaf_size >= 2")
    rng = np.random.default_rng([cfg.seed, zlib.crc32(cfg.family.encode())])
    n = cfg.cells
    probs = np.asarray(cfg.sink_probs)
    top = max(0, math.ceil(math.log2(max(n / cfg.leaf_size, 1))))

    want = rng.choice(np.arange(1, probs.size + 1), size=n, p=probs)
    sinks: list[list[int]] = [[] for _ in range(n)]
    has_fanin = np.zeros(n, dtype=bool)

    def scope(c):
        """Forward index range of a randomly drawn enclosing module of ``c``."""
        level = 0
        while level < top and rng.random() > cfg.locality:
            level += 1
        size = cfg.leaf_size << level
        hi = min(n, (c // size + 1) * size)
        while hi <= c + 1 and level < top:
            level += 1
            size = cfg.leaf_size << level
            hi = min(n, (c // size + 1) * size)
        return c + 1, hi

    for c in range(n):
        k = int(want[c])
        chosen: set[int] = set()
        if rng.random() < cfg.broadcast:
            # broadcast net: every sink draws its own module scope
            for _ in range(50 * k):
                if len(chosen) >= k:
                    break
                lo, hi = scope(c)
                if hi <= lo:
                    break
                chosen.add(int(rng.integers(lo, hi)))
        else:
            # the whole net lands in one destination leaf of a drawn scope
            lo, hi = scope(c)
            if hi > lo:
                dest = int(rng.integers(lo, hi))
                leaf_lo = max(lo, dest - dest % cfg.leaf_size)
                leaf_hi = min(hi, leaf_lo + max(cfg.leaf_size, k))
                pool = np.arange(leaf_lo, leaf_hi)
                if pool.size < k:
                    pool = np.arange(lo, min(hi, lo + max(k, pool.size)))
                chosen.update(int(v) for v in rng.choice(pool, size=min(k, pool.size), replace=False))
        sinks[c] = sorted(chosen)
        has_fanin[sinks[c]] = True

    # regional style: each module of STYLE_MODULE cells scales its cell areas
    style = rng.lognormal(0.0, cfg.region_sigma, size=n // STYLE_MODULE + 1)
    areas = rng.lognormal(cfg.area_mu, cfg.area_sigma, size=n) * style[np.arange(n) // STYLE_MODULE]
    areas *= 1.0 + 0.15 * np.array([len(s) for s in sinks])
    areas = np.round(np.clip(areas, 0.5, 40.0), 3)

    cells = {f"c{i}": Cell(f"c{i}", float(areas[i])) for i in range(n)}
    nets: list[Net] = []
    pads: list[str] = []

    # primary inputs: pads feed cells without fan-in, in index bands
    orphans = [c for c in range(n) if not has_fanin[c]]
    pos = 0
    while pos < len(orphans):
        k = int(rng.choice(np.arange(1, probs.size + 1), p=probs))
        group = orphans[pos:pos + k]
        pos += k
        pad = f"pi{len(pads)}"
        pads.append(pad)
        nets.append(Net(f"n_{pad}", pad, tuple(f"c{c}" for c in group)))

    extra_po = int(round(cfg.io_fraction * n / 2))
    po_taps = set(rng.choice(n, size=min(extra_po, n), replace=False).tolist()) if extra_po else set()
    for c in range(n):
        names = [f"c{s}" for s in sinks[c]]
        if not names or (c in po_taps and len(names) < probs.size):
            pad = f"po{len(pads)}"
            pads.append(pad)
            names.append(pad)
        nets.append(Net(f"n{c}", f"c{c}", tuple(names)))
    for pad in pads:
        cells[pad] = Cell(pad, 0.0)
    return Netlist(cells, nets)


def sink_histogram(netlist: Netlist, max_sinks: int) -> np.ndarray:
    """Fraction of nets with 1..max_sinks sinks (larger counts folded into the last bucket)."""
    counts = np.zeros(max_sinks)
    for net in netlist.nets:
        s = len(net.sinks)
        if s:
            counts[min(s, max_sinks) - 1] += 1
    return counts / max(counts.sum(), 1)


# -- placement ---------------------------------------------------------------

# Refinement density grid: about this many average cells per bin, each bin
# allowed to fill to DENSITY_SLACK times its share of the movable area.
CELLS_PER_BIN = 2.0
DENSITY_SLACK = 1.0
SPREAD_CELLS_PER_BIN = 8.0
SWAP_CANDIDATES = 3


@dataclass
class Placement:
    cell_ids: list[str]
    xy: np.ndarray
    die: tuple[float, float]
    history: list[float] = field(default_factory=list)

    def __getitem__(self, cell_id: str) -> tuple[float, float]:
        i = self._index()[cell_id]
        return float(self.xy[i, 0]), float(self.xy[i, 1])

    def _index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.cell_ids)}

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {c: (float(x), float(y)) for c, (x, y) in zip(self.cell_ids, self.xy)}


def _members(netlist: Netlist) -> list[list[int]]:
    cidx = netlist.cell_index()
    return [[cidx[c] for c in net.cells] for net in netlist.nets]


def total_hpwl(members: list[list[int]], xy: np.ndarray) -> float:
    multi = [m for m in members if len(m) > 1]
    if not multi:
        return 0.0
    cells = np.concatenate(multi)
    starts = np.cumsum([0] + [len(m) for m in multi[:-1]])
    pts = xy[cells]
    span = np.maximum.reduceat(pts, starts) - np.minimum.reduceat(pts, starts)
    return float(span.sum())


def _perimeter(count: int, side: float) -> np.ndarray:
    t = (np.arange(count) + 0.5) / max(count, 1) * 4.0
    out = np.zeros((count, 2))
    for i, s in enumerate(t):
        edge, f = int(s), s - int(s)
        out[i] = [(f, 0.0), (1.0, f), (1.0 - f, 1.0), (0.0, 1.0 - f)][edge]
    return out * side


def _clique_laplacian(members: list[list[int]], n: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for m in members:
        p = len(m)
        if p < 2:
            continue
        a = np.asarray(m)
        i, j = np.triu_indices(p, 1)
        rows.append(a[i])
        cols.append(a[j])
        vals.append(np.full(i.size, 1.0 / (p - 1)))
    if not rows:
        return sp.csr_matrix((n, n))
    r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    W = sp.coo_matrix((np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                      shape=(n, n)).tocsr()
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def _spread(xy, area, idx, side, g):
    """Cell shifting: within each row (column) of bins, map the area-weighted rank to position."""
    out = xy.copy()
    for axis in (0, 1):
        band = np.minimum((xy[idx, 1 - axis] / side * g).astype(int), g - 1)
        order = np.lexsort((xy[idx, axis], band))
        sorted_idx = idx[order]
        a = area[sorted_idx]
        b = band[order]
        cum = np.cumsum(a)
        starts = np.searchsorted(b, np.arange(g))
        ends = np.searchsorted(b, np.arange(g), side="right")
        for lo, hi in zip(starts, ends):
            if hi - lo < 2:
                continue
            base = cum[lo - 1] if lo else 0.0
            seg = cum[lo:hi] - base
            out[sorted_idx[lo:hi], axis] = (seg - a[lo:hi] / 2) / seg[-1] * side
    return out


def place(netlist: Netlist, iterations: int = 200, seed: int = 0, die: float | None = None) -> Placement:
    """Force-directed placement; zero-area cells are pads pinned to the die boundary.

    First half: every iteration moves the movable cells to the equilibrium
    between the pull of connected cells (clique model, per-net weight
    ``1/(pins-1)``) and per-cell anchors, solved by conjugate gradient. The
    anchors come from a density spreading step plus annealed noise, and their
    weight ramps up over the phase. Second half: Gauss-Seidel median moves and
    pairwise swaps, each accepted only if it lowers total HPWL under a
    bin-density cap, so total HPWL never increases there.
    """
    ids = netlist.cell_ids
    n = len(ids)
    area = np.array([netlist.cells[c].area for c in ids])
    movable = area > 0
    if not movable.any():
        movable[:] = True
    members = _members(netlist)
    total_area = float(area[movable].sum()) or float(n)
    side = float(die) if die else math.sqrt(total_area) * 1.1
    rng = np.random.default_rng(seed)

    xy = np.zeros((n, 2))
    fix = np.flatnonzero(~movable)
    mov = np.flatnonzero(movable)
    xy[fix] = _perimeter(fix.size, side)
    xy[mov] = rng.uniform(0.0, side, size=(mov.size, 2))

    L = _clique_laplacian(members, n)
    A = L[mov][:, mov].tocsr()
    rhs_fixed = -(L[mov][:, fix] @ xy[fix]) if fix.size else np.zeros((mov.size, 2))
    diag = A.diagonal()
    strength = float(diag[diag > 0].mean()) if np.any(diag > 0) else 1.0
    eye = sp.identity(mov.size, format="csr")
    g = int(math.sqrt(mov.size / SPREAD_CELLS_PER_BIN))

    history = []
    first = iterations // 2
    for it in range(first):
        frac = it / max(first - 1, 1)
        if g >= 2 and it > 0:
            nu = 0.5 * (1.0 - frac) * side / g
            anchor = _spread(xy, area, mov, side, g)[mov] + rng.uniform(-nu, nu, size=(mov.size, 2))
            alpha = strength * (0.02 + 0.98 * frac * frac)
        else:
            anchor = xy[mov]
            alpha = strength * (1e-3 if g >= 2 else 0.5)
        M = (A + alpha * eye).tocsr()
        for d in (0, 1):
            sol, _ = cg(M, rhs_fixed[:, d] + alpha * anchor[:, d], x0=xy[mov, d], rtol=1e-6, maxiter=300)
            xy[mov, d] = np.clip(sol, 0.0, side)
        history.append(total_hpwl(members, xy))

    fine = max(1, int(math.sqrt(mov.size / CELLS_PER_BIN)))
    xy = _Refiner(members, xy, area, movable, side, fine).run(iterations - first, history)
    return Placement(list(ids), xy, (side, side), history)


def _median_target(cur, spans, pad):
    """Closest point to ``cur`` within ``pad`` of the interval minimizing total span distance.

    Stopping short by ``pad`` (half the cell's width) makes cells abut rather
    than stack on their neighbors.
    """
    ends = sorted(v for s in spans for v in s)
    m = len(spans)
    lo, hi = ends[m - 1], ends[m]
    return min(max(cur, lo - pad), hi + pad)


def _cost(x, spans):
    return sum(lo - x if x < lo else (x - hi if x > hi else 0.0) for lo, hi in spans)


class _Refiner:
    """HPWL-monotone median moves and swaps on Python lists (per-cell work is tiny)."""

    def __init__(self, members, xy, area, movable, side, g):
        n = xy.shape[0]
        self.members = members
        self.nets_of: list[list[int]] = [[] for _ in range(n)]
        for j, m in enumerate(members):
            if len(m) > 1:
                for c in m:
                    self.nets_of[c].append(j)
        self.X = xy[:, 0].tolist()
        self.Y = xy[:, 1].tolist()
        self.A = area.tolist()
        self.g = g
        self.scale = g / side
        self.bins: list[list[int]] = [[] for _ in range(g * g)]
        self.usage = [0.0] * (g * g)
        movable_ids = [c for c in range(n) if movable[c]]
        for c in movable_ids:
            b = self.bin_of(self.X[c], self.Y[c])
            self.bins[b].append(c)
            self.usage[b] += self.A[c]
        self.cap = max(DENSITY_SLACK * sum(self.A[c] for c in movable_ids) / (g * g),
                       max((self.A[c] for c in movable_ids), default=0.0))
        self.order = [c for c in movable_ids if self.nets_of[c]]

    def bin_of(self, x, y):
        g = self.g
        return min(int(x * self.scale), g - 1) * g + min(int(y * self.scale), g - 1)

    def net_hpwl(self, j):
        m = self.members[j]
        xs = [self.X[c] for c in m]
        ys = [self.Y[c] for c in m]
        return max(xs) - min(xs) + max(ys) - min(ys)

    def relocate(self, c, b0, b1, x, y):
        if b0 != b1:
            self.bins[b0].remove(c)
            self.bins[b1].append(c)
            self.usage[b0] -= self.A[c]
            self.usage[b1] += self.A[c]
        self.X[c], self.Y[c] = x, y

    def try_move(self, c):
        X, Y = self.X, self.Y
        spans_x, spans_y = [], []
        for j in self.nets_of[c]:
            xs = [X[o] for o in self.members[j] if o != c]
            ys = [Y[o] for o in self.members[j] if o != c]
            spans_x.append((min(xs), max(xs)))
            spans_y.append((min(ys), max(ys)))
        x0, y0 = X[c], Y[c]
        pad = 0.5 * math.sqrt(self.A[c])
        tx, ty = _median_target(x0, spans_x, pad), _median_target(y0, spans_y, pad)
        dx = _cost(tx, spans_x) - _cost(x0, spans_x)
        dy = _cost(ty, spans_y) - _cost(y0, spans_y)
        b0 = self.bin_of(x0, y0)
        for nx, ny, gain in ((tx, ty, dx + dy), (tx, y0, dx), (x0, ty, dy)):
            if gain >= -1e-12:
                continue
            b1 = self.bin_of(nx, ny)
            if b1 != b0 and self.usage[b1] + self.A[c] > self.cap:
                continue
            self.relocate(c, b0, b1, nx, ny)
            return gain, (tx, ty)
        return 0.0, (tx, ty)

    def try_swap(self, c, target):
        X, Y, A = self.X, self.Y, self.A
        bc = self.bin_of(X[c], Y[c])
        bt = self.bin_of(*target)
        if bt == bc:
            return 0.0
        best, best_d = 0.0, -1
        for d in self.bins[bt][:SWAP_CANDIDATES]:
            nets = set(self.nets_of[c]) | set(self.nets_of[d])
            before = sum(self.net_hpwl(j) for j in nets)
            X[c], X[d], Y[c], Y[d] = X[d], X[c], Y[d], Y[c]
            delta = sum(self.net_hpwl(j) for j in nets) - before
            X[c], X[d], Y[c], Y[d] = X[d], X[c], Y[d], Y[c]
            if delta < best - 1e-12:
                ub = self.usage[bt] - A[d] + A[c]
                uc = self.usage[bc] - A[c] + A[d]
                if (ub <= self.cap or ub <= self.usage[bt]) and (uc <= self.cap or uc <= self.usage[bc]):
                    best, best_d = delta, d
        if best_d < 0:
            return 0.0
        d = best_d
        xc, yc, xd, yd = X[c], Y[c], X[d], Y[d]
        self.relocate(c, bc, bt, xd, yd)
        self.relocate(d, bt, bc, xc, yc)
        return best

    def run(self, sweeps, history):
        total = total_hpwl(self.members, np.column_stack([self.X, self.Y]))
        for _ in range(sweeps):
            gained = 0.0
            for c in self.order:
                gain, target = self.try_move(c)
                if gain == 0.0:
                    gain = self.try_swap(c, target)
                gained += gain
            total += gained
            history.append(total)
            if -gained <= 1e-6 * max(total, 1e-12):
                break
        return np.column_stack([self.X, self.Y])


def hpwl_labels(netlist: Netlist, placement: Placement) -> dict[str, float]:
    """Half-perimeter of each net's bounding box over all of its cells."""
    index = placement._index()
    labels = {}
    for net in netlist.nets:
        try:
            pts = placement.xy[[index[c] for c in net.cells]]
        except KeyError as exc:
            raise NetlistError(f"placement has no coordinate for cell {exc.args[0]!r}") from None
        if len(pts) < 2:
            labels[net.id] = 0.0
        else:
            labels[net.id] = float(np.ptp(pts[:, 0]) + np.ptp(pts[:, 1]))
    return labels
