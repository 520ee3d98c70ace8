"""Leave-one-family-out experiments and report emission.

A *design* is one netlist with its placement-derived labels, partitions,
features and sampled paths. Designs of the same family stand in for the
netlists of one benchmark design: a family is never in its own training set.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, metrics, models
from .features import featurize
from .graph import NetGraph, attach_labels, build_graph
from .netlist import Netlist
from .partition import M_DIVISORS, P_DIVISORS, DEFAULT_EPS, build_suite, worker_count
from .synth import hpwl_labels, place

log = logging.getLogger(__name__)

BASELINE_METHODS = ("numcell", "mc", "ispl", "poly")
NO_PATH_METHODS = ("mc",)
REPORT_COLUMNS = ("seed", "family", "design", "method", "r", "net_auc", "path_auc", "pair_acc")


@dataclass
class Design:
    name: str
    family: str
    graph: NetGraph
    paths: list[np.ndarray]
    runtimes: dict[str, float] = field(default_factory=dict)


def prepare_design(name: str, family: str, netlist: Netlist, labels: dict[str, float] | None = None,
                   seed: int = 0, placer_iterations: int = 200, path_count: int = 200,
                   p_divisors=P_DIVISORS, m_divisors=M_DIVISORS, eps: float = DEFAULT_EPS) -> Design:
    """Place (unless labels are given), partition, featurize and sample paths for one netlist."""
    runtimes = {}
    if labels is None:
        t0 = time.perf_counter()
        placement = place(netlist, iterations=placer_iterations, seed=seed)
        runtimes["placer"] = time.perf_counter() - t0
        labels = hpwl_labels(netlist, placement)
    graph = build_graph(netlist)
    t0 = time.perf_counter()
    suite = build_suite(netlist, graph, seed=seed, eps=eps, p_divisors=p_divisors, m_divisors=m_divisors)
    runtimes["partition"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    graph = featurize(graph, suite)
    runtimes["featurize"] = time.perf_counter() - t0
    graph = attach_labels(graph, labels)
    paths = metrics.sample_paths(graph, path_count, seed=seed)
    return Design(name, family, graph, paths, runtimes)


def evaluate(design: Design, method: str, scores: np.ndarray) -> dict:
    labels = design.graph.labels
    row = {
        "r": metrics.binned_correlation(scores, labels),
        "net_auc": metrics.topk_auc(scores, labels),
        "path_auc": math.nan,
        "pair_acc": math.nan,
    }
    if method not in NO_PATH_METHODS:
        row["path_auc"], row["pair_acc"] = metrics.path_metrics(scores, design.paths, labels)
    return row


def _baseline_scores(method: str, train: list[Design], design: Design, cache: dict) -> np.ndarray:
    if method == "poly":
        if "poly" not in cache:
            cache["poly"] = baselines.fit_poly([d.graph for d in train])
        return cache["poly"].predict(design.graph)
    return baselines.METHODS[method](design.graph)


def run_round(designs: list[Design], family: str, method: str, seed: int, epochs: int | None = None,
              keep_predictions: bool = False, lr: float | None = None):
    """Train on every other family, evaluate on each design of ``family``."""
    train = [d for d in designs if d.family != family]
    test = [d for d in designs if d.family == family]
    rows, timings, preds = [], [], {}
    cache: dict = {}
    model = None
    if method in models.VARIANTS:
        cfg = models.ModelConfig(variant=method, seed=seed)
        if epochs is not None:
            cfg.epochs = epochs
        if lr is not None:
            cfg.lr = lr
        t0 = time.perf_counter()
        model = models.train(cfg, [d.graph for d in train])
        timings.append({"seed": seed, "family": family, "design": "*", "stage": f"train:{method}",
                        "seconds": time.perf_counter() - t0})
    for d in test:
        t0 = time.perf_counter()
        scores = model.predict(d.graph) if model is not None else _baseline_scores(method, train, d, cache)
        elapsed = time.perf_counter() - t0
        timings.append({"seed": seed, "family": family, "design": d.name, "stage": f"infer:{method}",
                        "seconds": elapsed})
        row = {"seed": seed, "family": family, "design": d.name, "method": method}
        row.update(evaluate(d, method, scores))
        rows.append(row)
        if keep_predictions:
            preds[(seed, d.name, method)] = scores
    return rows, timings, preds


def _round_job(args):
    return run_round(*args)


@dataclass
class EvalReport:
    rows: list[dict]
    timings: list[dict] = field(default_factory=list)
    bins: list[dict] = field(default_factory=list)
    predictions: dict = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    @property
    def families(self) -> list[str]:
        return sorted({r["family"] for r in self.rows})

    def family_table(self, column: str = "net_auc") -> dict[tuple[str, str], float]:
        """Mean of ``column`` per (family, method) over designs and seeds."""
        acc: dict[tuple[str, str], list[float]] = {}
        for r in self.rows:
            acc.setdefault((r["family"], r["method"]), []).append(r[column])
        return {k: _nanmean(v) for k, v in acc.items()}

    def method_means(self, column: str = "net_auc") -> dict[str, float]:
        """Mean over families of the per-family means (each family weighs equally)."""
        table = self.family_table(column)
        return {m: _nanmean([table[(f, m)] for f in self.families if (f, m) in table]) for m in self.methods}

    def runtime_means(self) -> dict[str, float]:
        acc: dict[str, list[float]] = {}
        for t in self.timings:
            acc.setdefault(t["stage"], []).append(t["seconds"])
        return {k: float(np.mean(v)) for k, v in acc.items()}

    # -- emission -----------------------------------------------------------
    def report_tsv(self) -> str:
        lines = ["\t".join(REPORT_COLUMNS)]
        for r in self.rows:
            lines.append("\t".join(_fmt(r[c]) for c in REPORT_COLUMNS))
        return "\n".join(lines) + "\n"

    def families_tsv(self) -> str:
        cols = ("r", "net_auc", "path_auc", "pair_acc")
        tables = {c: self.family_table(c) for c in cols}
        lines = ["family\tmethod\t" + "\t".join(cols)]
        for f in self.families:
            for m in self.methods:
                if (f, m) in tables["net_auc"]:
                    lines.append("\t".join([f, m] + [_fmt(tables[c][(f, m)]) for c in cols]))
        return "\n".join(lines) + "\n"

    def bins_tsv(self) -> str:
        lines = ["seed\tdesign\tmethod\tbin\tcount\tmean_label\tmean_pred"]
        for b in self.bins:
            lines.append("\t".join(_fmt(b[c]) for c in ("seed", "design", "method", "bin", "count",
                                                         "mean_label", "mean_pred")))
        return "\n".join(lines) + "\n"

    def timings_tsv(self) -> str:
        lines = ["seed\tfamily\tdesign\tstage\tseconds"]
        for t in self.timings:
            lines.append("\t".join(_fmt(t[c]) for c in ("seed", "family", "design", "stage", "seconds")))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        cols = ("r", "net_auc", "path_auc", "pair_acc")
        means = {c: self.method_means(c) for c in cols}
        lines = [f"families: {', '.join(self.families)}",
                 f"designs: {len({r['design'] for r in self.rows})}",
                 f"seeds: {', '.join(str(s) for s in sorted({r['seed'] for r in self.rows}))}",
                 "",
                 f"{'method':<10} {'R':>8} {'netAUC':>8} {'pathAUC':>8} {'pairAcc':>8}"]
        for m in self.methods:
            lines.append(f"{m:<10} " + " ".join(f"{_pct(means[c][m], c):>8}" for c in cols))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> dict[str, Path]:
        """Write the deterministic report files plus ``timings.tsv`` (wall-clock, not reproducible)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "report.tsv": self.report_tsv(),
            "families.tsv": self.families_tsv(),
            "bins.tsv": self.bins_tsv(),
            "summary.txt": self.summary(),
            "timings.tsv": self.timings_tsv(),
        }
        paths = {}
        for name, text in files.items():
            paths[name] = out / name
            paths[name].write_text(text, encoding="utf-8")
        return paths

    def digest(self) -> str:
        h = hashlib.sha256()
        for text in (self.report_tsv(), self.families_tsv(), self.bins_tsv(), self.summary()):
            h.update(text.encode())
        return h.hexdigest()


def _nanmean(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else math.nan


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _pct(x: float, column: str) -> str:
    if math.isnan(x):
        return "-"
    return f"{x:.3f}" if column == "r" else f"{100 * x:.1f}"


def run_experiment(designs: list[Design], variants: list[str], seeds=(0,), epochs: int | None = None,
                   keep_predictions: bool = False, workers: int | None = None, progress=None,
                   lr: float | None = None) -> EvalReport:
    """Leave-one-family-out evaluation of every method, for each seed."""
    families = sorted({d.family for d in designs})
    if len(families) < 2:
        raise ValueError(f"need at least 2 design families, got {len(families)}")
    for v in variants:
        if v not in models.VARIANTS and v not in BASELINE_METHODS:
            raise ValueError(f"unknown method {v!r}")
    jobs = [(designs, f, v, s, epochs, keep_predictions, lr) for s in seeds for f in families for v in variants]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_round_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_round_job(job))
            if progress is not None:
                progress(job[1:4])
    report = EvalReport([], [])
    by_name = {d.name: d for d in designs}
    for rows, timings, preds in results:
        report.rows += rows
        report.timings += timings
        report.predictions.update(preds)
    for d in designs:
        for stage, secs in d.runtimes.items():
            report.timings.append({"seed": "-", "family": d.family, "design": d.name, "stage": stage,
                                   "seconds": secs})
    if keep_predictions:
        report.bins = bin_rows(report.predictions, by_name)
    return report


def bin_rows(predictions: dict, designs: dict[str, Design]) -> list[dict]:
    """Label-binned mean prediction per (seed, design, method) for correlation plots."""
    out = []
    for (seed, name, method), scores in sorted(predictions.items(), key=lambda kv: (str(kv[0][0]), kv[0][1], kv[0][2])):
        p, q, c = metrics.binned_means(scores, designs[name].graph.labels)
        for i in range(p.size):
            out.append({"seed": seed, "design": name, "method": method, "bin": i, "count": int(c[i]),
                        "mean_label": float(q[i]), "mean_pred": float(p[i])})
    return out
