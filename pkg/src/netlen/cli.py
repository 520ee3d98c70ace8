"""Command-line entry point: ``netlen <command> ...``."""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, models
from .experiment import BASELINE_METHODS, prepare_design, run_experiment
from .features import featurize
from .graph import attach_labels, build_graph, load_graph, save_graph
from .netlist import read_labels, read_netlist, write_labels
from .partition import DEFAULT_EPS, M_DIVISORS, P_DIVISORS, build_suite, read_suite, write_suite
from .pipeline import PipelineError, load_config, run_pipeline, write_predictions
from .synth import GenConfig, generate, hpwl_labels, place

log = logging.getLogger("netlen")


def _divisors(text: str) -> tuple[int, ...]:
    try:
        out = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad divisor list {text!r}") from None
    if not out or min(out) <= 0:
        raise argparse.ArgumentTypeError("divisors must be positive integers")
    return out


def _expand(patterns: list[str]) -> list[Path]:
    out = []
    for p in patterns:
        hits = sorted(glob.glob(p))
        if not hits:
            raise FileNotFoundError(f"no files match {p!r}")
        out += [Path(h) for h in hits]
    return out


# -- gates ----------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?|\.\d+)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[+-]))")


def _side(expr: str, means: dict[str, float]) -> float:
    total, sign, pos, expect_term = 0.0, 1.0, 0, True
    expr = expr.strip()
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse gate term {expr[pos:]!r}")
        pos = m.end()
        if m.group("op"):
            if expect_term:
                sign = -sign if m.group("op") == "-" else sign
            else:
                sign, expect_term = (1.0 if m.group("op") == "+" else -1.0), True
            continue
        if not expect_term:
            raise ValueError(f"missing operator in {expr!r}")
        if m.group("num"):
            value = float(m.group("num"))
        else:
            name = m.group("name").lower()
            if name not in means:
                raise ValueError(f"gate names unknown method {name!r}")
            value = means[name]
        total += sign * value
        sign, expect_term = 1.0, False
    if expect_term:
        raise ValueError(f"incomplete gate expression {expr!r}")
    return total


def check_gate(gate: str, means: dict[str, float]) -> tuple[bool, float, float]:
    """Evaluate ``lhs >= rhs`` (or ``>``) where sides are sums of method means and constants."""
    m = re.fullmatch(r"(.+?)(>=|>)(.+)", gate.strip())
    if not m:
        raise ValueError(f"gate {gate!r} must look like 'net2a >= ann + 0.05'")
    lhs, rhs = _side(m.group(1), means), _side(m.group(3), means)
    ok = lhs >= rhs if m.group(2) == ">=" else lhs > rhs
    return bool(ok and not math.isnan(lhs) and not math.isnan(rhs)), lhs, rhs


# -- commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = GenConfig(cells=args.cells, family=args.family, seed=args.seed)
    netlist = generate(cfg)
    t0 = time.perf_counter()
    placement = place(netlist, iterations=args.iterations, seed=args.seed)
    secs = time.perf_counter() - t0
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{args.family}-{args.seed}"
    netlist.write(stem.with_suffix(".nl"))
    labels = hpwl_labels(netlist, placement)
    write_labels(labels, stem.with_suffix(".lbl"))
    stem.with_suffix(".meta").write_text(json.dumps({"placer_seconds": secs, "cells": args.cells,
                                                    "family": args.family, "seed": args.seed}) + "\n")
    vals = np.array(list(labels.values()))
    print(f"{stem}.nl: {len(netlist.cells)} cells, {len(netlist.nets)} nets, "
          f"HPWL median {np.median(vals):.2f} um, placed in {secs:.2f}s")
    return 0


def cmd_graph(args) -> int:
    graph = build_graph(read_netlist(args.netlist))
    if args.labels:
        graph = attach_labels(graph, read_labels(args.labels))
    save_graph(graph, args.out)
    print(f"{args.out}: {graph.n_nodes} nodes, {graph.n_edges} edges")
    return 0


def cmd_partition(args) -> int:
    netlist = read_netlist(args.netlist)
    graph = load_graph(args.graph) if args.graph else build_graph(netlist)
    if graph.net_ids != netlist.net_ids:
        raise ValueError(f"{args.graph} was not built from {args.netlist}")
    t0 = time.perf_counter()
    suite = build_suite(netlist, graph, seed=args.seed, eps=args.eps,
                        p_divisors=args.p_divisors, m_divisors=args.m_divisors)
    write_suite(suite, args.out_dir)
    print(f"{args.out_dir}: {len(suite.p_results)} cell and {len(suite.m_results)} net partitions "
          f"in {time.perf_counter() - t0:.2f}s")
    return 0


def cmd_featurize(args) -> int:
    graph = featurize(load_graph(args.graph), read_suite(args.parts))
    if args.labels:
        graph = attach_labels(graph, read_labels(args.labels))
    save_graph(graph, args.out)
    print(f"{args.out}: {graph.node_features.shape[1]} node and {graph.edge_features.shape[1]} edge features")
    return 0


def cmd_train(args) -> int:
    graphs = [load_graph(p) for p in _expand(args.train_glob)]
    val = [load_graph(p) for p in _expand(args.val_glob)] if args.val_glob else None
    cfg = models.ModelConfig(variant=args.variant, seed=args.seed, epochs=args.epochs, lr=args.lr,
                             momentum=args.momentum, layers=args.layers)

    def progress(epoch, loss):
        log.info("epoch %d: loss %.4f", epoch, loss)

    model = models.train(cfg, graphs, val, progress=progress)
    models.save_model(model, args.out)
    print(f"{args.out}: {cfg.variant} trained on {len(graphs)} graphs for {cfg.epochs} epochs")
    return 0


def cmd_predict(args) -> int:
    model = models.load_model(args.model)
    graph = load_graph(args.graph)
    write_predictions(graph.net_ids, model.predict(graph), args.out)
    print(f"{args.out}: {graph.n_nodes} predictions")
    return 0


def cmd_baseline(args) -> int:
    graph = load_graph(args.graph)
    if args.method == "poly":
        if not args.train_glob:
            raise ValueError("poly needs --train-glob graphs")
        scores = baselines.poly([load_graph(p) for p in _expand(args.train_glob)], graph)
    else:
        scores = baselines.METHODS[args.method](graph)
    write_predictions(graph.net_ids, scores, args.out)
    print(f"{args.out}: {args.method} scores for {graph.n_nodes} nets")
    return 0


def cmd_eval(args) -> int:
    corpus = Path(args.corpus)
    nl_files = sorted(corpus.glob("*.nl"))
    if not nl_files:
        raise FileNotFoundError(f"{corpus}: no .nl files")
    designs = []
    for nl in nl_files:
        family = nl.stem.rsplit("-", 1)[0]
        labels = read_labels(nl.with_suffix(".lbl"))
        d = prepare_design(nl.stem, family, read_netlist(nl), labels, seed=args.seed, path_count=args.paths,
                           p_divisors=args.p_divisors, m_divisors=args.m_divisors, eps=args.eps)
        meta = nl.with_suffix(".meta")
        if meta.exists():
            d.runtimes["placer"] = json.loads(meta.read_text())["placer_seconds"]
        designs.append(d)
        log.info("prepared %s", nl.stem)
    methods = [m.strip().lower() for m in args.variants.split(",") if m.strip()]
    seeds = tuple(args.seeds) if args.seeds else (args.seed,)
    report = run_experiment(designs, methods, seeds=seeds, epochs=args.epochs, keep_predictions=True, lr=args.lr)
    report.write(args.out)
    print(report.summary(), end="")
    status = 0
    means = report.method_means(args.metric)
    for gate in args.gate or []:
        ok, lhs, rhs = check_gate(gate, means)
        print(f"{'PASS' if ok else 'FAIL'} gate {gate}: {lhs:.4f} vs {rhs:.4f}")
        status = status or (0 if ok else 1)
    return status


def cmd_pipeline(args) -> int:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    cfg = load_config(args.config, overrides)
    result = run_pipeline(cfg)
    print(f"report in {result['report']}: {len(result['runs'])} stages run, {len(result['hits'])} cached")
    print((Path(result["report"]) / "summary.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netlen", description="Pre-placement net length estimation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate and place a synthetic netlist")
    p.add_argument("--cells", type=int, default=2000)
    p.add_argument("--family", default="A")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("graph", help="build the net graph of a netlist")
    p.add_argument("--netlist", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_graph)

    p = sub.add_parser("partition", help="compute cell and net partitions")
    p.add_argument("--netlist", required=True)
    p.add_argument("--graph", help="graph cache of the same netlist (rebuilt if omitted)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--p-divisors", type=_divisors, default=P_DIVISORS)
    p.add_argument("--m-divisors", type=_divisors, default=M_DIVISORS)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("featurize", help="attach node and edge features")
    p.add_argument("--graph", required=True)
    p.add_argument("--parts", required=True, help="directory of .prt files")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--variant", default="net2a", choices=models.VARIANTS)
    p.add_argument("--train-glob", nargs="+", required=True, help="featurized labeled graphs")
    p.add_argument("--val-glob", nargs="*", help="validation graphs for best-epoch selection")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict net lengths with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("baseline", help="score nets with a classical estimator")
    p.add_argument("--method", required=True, choices=BASELINE_METHODS)
    p.add_argument("--graph", required=True)
    p.add_argument("--train-glob", nargs="*", help="training graphs (poly only)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("eval", help="leave-one-family-out evaluation of a corpus directory")
    p.add_argument("--corpus", required=True, help="directory of <family>-<n>.nl and .lbl files")
    p.add_argument("--variants", default="gcn,gsage,gat,net2f,net2a,ann,poly,mc,ispl,numcell")
    p.add_argument("--seed", type=int, default=7, help="partitioning, path sampling and training seed")
    p.add_argument("--seeds", type=int, nargs="+", help="several training seeds, averaged in the report")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate override for every trained variant")
    p.add_argument("--paths", type=int, default=200)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--p-divisors", type=_divisors, default=P_DIVISORS)
    p.add_argument("--m-divisors", type=_divisors, default=M_DIVISORS)
    p.add_argument("--metric", default="net_auc", choices=("r", "net_auc", "path_auc", "pair_acc"))
    p.add_argument("--gate", action="append", help="e.g. 'net2a >= ann + 0.05'; exit 1 if any fails")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage from an INI config, with caching")
    p.add_argument("--config")
    p.add_argument("--set", action="append", help="override, e.g. train.epochs=20")
    p.set_defaults(fn=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
