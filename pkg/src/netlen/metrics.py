"""Evaluation metrics: label-binned correlation, top-fraction AUC and path metrics."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from .graph import NetGraph

N_BINS = 20
TOP_FRACTION = 0.1
PAIR_RATIO = 1.3


def binned_means(preds, labels, bins: int = N_BINS, upper_q: float = 95.0):
    """Per-bin mean prediction and mean label over label bins.

    The label range runs from the minimum to the ``upper_q`` percentile; nets
    above it are dropped, empty bins are omitted. Returns ``(pred_means,
    label_means, counts)`` for populated bins in bin order.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    if labels.size < bins:
        raise ValueError(f"need at least {bins} labeled nets, got {labels.size}")
    lo, hi = labels.min(), np.percentile(labels, upper_q)
    if hi <= lo:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64)
    keep = labels <= hi
    idx = np.minimum(((labels[keep] - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = np.bincount(idx, weights=preds[keep], minlength=bins)
    q = np.bincount(idx, weights=labels[keep], minlength=bins)
    full = counts > 0
    return p[full] / counts[full], q[full] / counts[full], counts[full]


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return math.nan
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    return float(dx @ dy) / den if den > 0 else math.nan


def binned_correlation(preds, labels, bins: int = N_BINS) -> float:
    """Pearson R between bin-mean predictions and bin-mean labels; NaN when undefined."""
    p, q, _ = binned_means(preds, labels, bins)
    return pearson(p, q)


def top_labels(labels, frac: float = TOP_FRACTION) -> np.ndarray:
    """Boolean mask of the top ``ceil(frac * n)`` labels, threshold ties included."""
    labels = np.asarray(labels, dtype=np.float64)
    m = math.ceil(frac * labels.size)
    thr = np.sort(labels)[::-1][m - 1]
    return labels >= thr


def auc(scores, positive) -> float:
    """Probability a random positive outscores a random negative; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    # midranks doubled are integers, so the numerator is exact
    ranks2 = np.rint(2 * rankdata(scores, method="average")).astype(np.int64)
    num = int(ranks2[positive].sum()) - n_pos * (n_pos + 1)
    return num / (2 * n_pos * n_neg)


def topk_auc(scores, labels, frac: float = TOP_FRACTION) -> float:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size < 10:
        raise ValueError(f"need at least 10 nets, got {labels.size}")
    return auc(scores, top_labels(labels, frac))


def pair_accuracy(pred_len, true_len, ratio: float = PAIR_RATIO) -> float:
    """Fraction of path pairs ordered correctly among pairs whose true lengths differ by the ratio."""
    p = np.asarray(pred_len, dtype=np.float64)
    t = np.asarray(true_len, dtype=np.float64)
    i, j = np.triu_indices(t.size, 1)
    lo, hi = np.minimum(t[i], t[j]), np.maximum(t[i], t[j])
    keep = hi >= ratio * lo
    if not keep.any():
        return math.nan
    i, j = i[keep], j[keep]
    sign_t = np.sign(t[j] - t[i])
    sign_p = np.sign(p[j] - p[i])
    score = np.where(sign_p == 0, 0.5, (sign_p == sign_t).astype(np.float64))
    return float(score.mean())


def path_lengths(values, paths: list[np.ndarray]) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.array([values[p].sum() for p in paths])


def path_metrics(preds, paths: list[np.ndarray], labels) -> tuple[float, float]:
    """``(top-10% path AUC, pair accuracy)`` with path length = sum of net lengths."""
    if not paths:
        raise ValueError("empty path set")
    n = len(np.asarray(labels))
    for p in paths:
        if len(p) == 0 or np.min(p) < 0 or np.max(p) >= n:
            raise ValueError(f"path references unknown net index in {list(p)[:5]}")
    pl = path_lengths(preds, paths)
    tl = path_lengths(labels, paths)
    path_auc = topk_auc(pl, tl) if len(paths) >= 10 else math.nan
    return path_auc, pair_accuracy(pl, tl)


def resolve_paths(graph: NetGraph, paths: list[list[str]]) -> list[np.ndarray]:
    index = graph.netlist.net_index()
    out = []
    for p in paths:
        try:
            out.append(np.array([index[n] for n in p], dtype=np.int64))
        except KeyError as exc:
            raise ValueError(f"path references unknown net {exc.args[0]!r}") from None
    return out


def sample_paths(graph: NetGraph, count: int, seed: int = 0, min_len: int = 3, max_len: int = 15,
                 max_tries: int | None = None) -> list[np.ndarray]:
    """Random driver-to-sink walks along fan-out edges, deduplicated, in sampling order.

    Walks start at nets without fan-in (primary inputs) when there are any,
    never revisit a net, and stop at the drawn length or a dead end.
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    starts = [k for k in range(graph.n_nodes) if graph.fanout[k] and not graph.fanin[k]]
    if not starts:
        starts = [k for k in range(graph.n_nodes) if graph.fanout[k]]
    if not starts:
        raise ValueError("netlist has no driver-to-sink chain")
    tries = max_tries if max_tries is not None else 50 * count
    seen, out = set(), []
    for _ in range(tries):
        if len(out) >= count:
            break
        target = int(rng.integers(min_len, max_len + 1))
        path = [starts[int(rng.integers(len(starts)))]]
        on_path = {path[0]}
        while len(path) < target:
            nxt = [o for o in graph.fanout[path[-1]] if o not in on_path]
            if not nxt:
                break
            o = nxt[int(rng.integers(len(nxt)))]
            path.append(o)
            on_path.add(o)
        if len(path) >= min_len:
            key = tuple(path)
            if key not in seen:
                seen.add(key)
                out.append(np.array(path, dtype=np.int64))
    if not out:
        raise ValueError(f"no path of at least {min_len} nets found after {tries} walks")
    return out
