"""Config-driven end-to-end runs with content-hash stage caching.

Each stage output gets a manifest under ``<out>/cache`` recording the hash
of everything the stage read (config values and input file digests) and
the digests of what it wrote. A stage is skipped when its input hash
matches and its outputs are unchanged on disk; a mismatch is logged as
stale and the stage reruns.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, metrics, models
from .experiment import BASELINE_METHODS, Design, EvalReport, bin_rows, evaluate
from .features import featurize
from .graph import attach_labels, build_graph, load_graph, save_graph
from .netlist import read_labels, read_netlist, write_labels
from .partition import build_suite, read_suite, write_suite
from .synth import GenConfig, generate, hpwl_labels, place

log = logging.getLogger(__name__)

DEFAULT_CONFIG = """
[corpus]
families = A,B
designs_per_family = 3
cells = 1000
seed = 0
placer_iterations = 200
paths = 200

[partition]
p_divisors = 100,200,300,500,1000,2000,3000
m_divisors = 500,1000,2000
eps = 0.05

[train]
variants = gcn,gsage,gat,net2f,net2a,ann
baselines = numcell,mc,ispl,poly
epochs = 250
lr = 0.002
momentum = 0.9
seeds = 7

[paths]
out = run
"""


class PipelineError(RuntimeError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _names(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


@dataclass
class PipelineConfig:
    families: list[str] = field(default_factory=lambda: ["A", "B"])
    designs_per_family: int = 3
    cells: int = 1000
    corpus_seed: int = 0
    placer_iterations: int = 200
    path_count: int = 200
    p_divisors: tuple[int, ...] = (100, 200, 300, 500, 1000, 2000, 3000)
    m_divisors: tuple[int, ...] = (500, 1000, 2000)
    eps: float = 0.05
    variants: list[str] = field(default_factory=lambda: ["gcn", "gsage", "gat", "net2f", "net2a", "ann"])
    baselines: list[str] = field(default_factory=lambda: list(BASELINE_METHODS))
    epochs: int = 250
    lr: float = 0.002
    momentum: float = 0.9
    seeds: tuple[int, ...] = (7,)
    out: Path = Path("run")

    def __post_init__(self):
        if len(self.families) < 2:
            raise ValueError("pipeline needs at least 2 families")
        if min(self.p_divisors + self.m_divisors, default=1) <= 0:
            raise ValueError("partition divisors must be positive")
        if self.designs_per_family < 1 or self.cells < 2:
            raise ValueError("designs_per_family and cells must be positive")
        for v in self.variants:
            models.ModelConfig(variant=v)
        for b in self.baselines:
            if b not in BASELINE_METHODS:
                raise ValueError(f"unknown baseline {b!r}")


def load_config(path=None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Read ``[section] key = value`` text; ``overrides`` uses ``section.key`` names."""
    cp = configparser.ConfigParser()
    cp.read_string(DEFAULT_CONFIG)
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        cp.read_string(text, source=str(path))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key or not cp.has_section(section):
            raise ValueError(f"bad override {dotted!r}; use section.key=value")
        cp.set(section, key, value)
    c, p, t = cp["corpus"], cp["partition"], cp["train"]
    return PipelineConfig(
        families=[x.strip() for x in c["families"].split(",") if x.strip()],
        designs_per_family=c.getint("designs_per_family"),
        cells=c.getint("cells"),
        corpus_seed=c.getint("seed"),
        placer_iterations=c.getint("placer_iterations"),
        path_count=c.getint("paths"),
        p_divisors=_ints(p["p_divisors"]),
        m_divisors=_ints(p["m_divisors"]),
        eps=p.getfloat("eps"),
        variants=_names(t["variants"]),
        baselines=_names(t["baselines"]),
        epochs=t.getint("epochs"),
        lr=t.getfloat("lr"),
        momentum=t.getfloat("momentum"),
        seeds=_ints(t["seeds"]),
        out=Path(cp["paths"]["out"]),
    )


# -- caching -------------------------------------------------------------------

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


class StageCache:
    def __init__(self, root: Path):
        self.dir = Path(root) / "cache"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hits: list[str] = []
        self.runs: list[str] = []
        self.seconds: dict[str, float] = {}

    def _manifest(self, stage: str, name: str) -> Path:
        return self.dir / f"{stage}.{name.replace('/', '_')}.json"

    def run(self, stage: str, name: str, payload: dict, outputs: list[Path], fn) -> bool:
        """Run ``fn`` unless a matching manifest shows the outputs are current. Returns True on a hit."""
        key = _key(payload)
        label = f"{stage}:{name}"
        manifest = self._manifest(stage, name)
        if manifest.exists():
            data = json.loads(manifest.read_text())
            current = data.get("key") == key and all(
                Path(o).exists() and file_digest(o) == data["outputs"].get(str(o)) for o in outputs)
            if current:
                self.hits.append(label)
                self.seconds[label] = data.get("seconds", 0.0)
                return True
            log.info("stale cache for %s (input or output hash mismatch)", label)
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            raise PipelineError(f"stage {stage} failed for {name}: {exc}") from exc
        secs = time.perf_counter() - t0
        for o in outputs:
            if not Path(o).exists():
                raise PipelineError(f"stage {stage} for {name} did not produce {o}")
        manifest.write_text(json.dumps({"key": key, "seconds": secs,
                                        "outputs": {str(o): file_digest(o) for o in outputs}},
                                       sort_keys=True, indent=1))
        self.runs.append(label)
        self.seconds[label] = secs
        return False


# -- prediction files ------------------------------------------------------------

def write_predictions(net_ids: list[str], values: np.ndarray, path):
    lines = ["net_id\tprediction"] + [f"{n}\t{float(v)!r}" for n, v in zip(net_ids, values)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path) -> dict[str, float]:
    out = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if i == 0 and line.startswith("net_id"):
            continue
        if line.strip():
            n, v = line.split("\t")
            out[n] = float(v)
    return out


# -- the pipeline --------------------------------------------------------------------

def run_pipeline(cfg: PipelineConfig) -> dict:
    """synth -> graph -> partition -> featurize -> train -> predict -> eval."""
    out = Path(cfg.out)
    cache = StageCache(out)
    corpus = out / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    names = [(f"{fam}-{i}", fam, i) for fam in cfg.families for i in range(cfg.designs_per_family)]

    feat_paths = {}
    for name, fam, i in names:
        nl_path, lbl_path = corpus / f"{name}.nl", corpus / f"{name}.lbl"
        seed = cfg.corpus_seed + i

        def synth(fam=fam, seed=seed, nl_path=nl_path, lbl_path=lbl_path):
            netlist = generate(GenConfig(cells=cfg.cells, family=fam, seed=seed))
            placement = place(netlist, iterations=cfg.placer_iterations, seed=seed)
            netlist.write(nl_path)
            write_labels(hpwl_labels(netlist, placement), lbl_path)

        cache.run("synth", name, {"cells": cfg.cells, "family": fam, "seed": seed,
                                  "iterations": cfg.placer_iterations}, [nl_path, lbl_path], synth)

        g_path = corpus / f"{name}.nlg"
        cache.run("graph", name, {"nl": file_digest(nl_path)}, [g_path],
                  lambda nl_path=nl_path, g_path=g_path: save_graph(build_graph(read_netlist(nl_path)), g_path))

        part_dir = out / "partitions" / name
        part_files = ([part_dir / f"P_d{d}.prt" for d in cfg.p_divisors]
                      + [part_dir / f"M_d{d}.prt" for d in cfg.m_divisors])

        def partition(nl_path=nl_path, g_path=g_path, part_dir=part_dir, seed=seed):
            suite = build_suite(read_netlist(nl_path), load_graph(g_path), seed=seed, eps=cfg.eps,
                                p_divisors=cfg.p_divisors, m_divisors=cfg.m_divisors)
            write_suite(suite, part_dir)

        cache.run("partition", name, {"nl": file_digest(nl_path), "p": cfg.p_divisors, "m": cfg.m_divisors,
                                      "eps": cfg.eps, "seed": seed}, part_files, partition)

        f_path = corpus / f"{name}.feat.nlg"

        def feat(g_path=g_path, part_dir=part_dir, lbl_path=lbl_path, f_path=f_path):
            g = featurize(load_graph(g_path), read_suite(part_dir))
            save_graph(attach_labels(g, read_labels(lbl_path)), f_path)

        cache.run("featurize", name, {"g": file_digest(g_path), "lbl": file_digest(lbl_path),
                                      "parts": [file_digest(p) for p in part_files]}, [f_path], feat)
        feat_paths[name] = f_path

    # training and prediction, one round per held-out family
    pred_files: dict[tuple, Path] = {}
    for fam in cfg.families:
        train_names = [n for n, f, _ in names if f != fam]
        test_names = [n for n, f, _ in names if f == fam]
        train_digests = [file_digest(feat_paths[n]) for n in train_names]
        for variant in cfg.variants:
            for seed in cfg.seeds:
                m_path = out / "models" / fam / f"{variant}-s{seed}.nlm"
                m_path.parent.mkdir(parents=True, exist_ok=True)

                def do_train(variant=variant, seed=seed, m_path=m_path, train_names=train_names):
                    mc = models.ModelConfig(variant=variant, seed=seed, epochs=cfg.epochs, lr=cfg.lr,
                                            momentum=cfg.momentum)
                    model = models.train(mc, [load_graph(feat_paths[n]) for n in train_names])
                    models.save_model(model, m_path)

                cache.run("train", f"{fam}.{variant}.s{seed}",
                          {"train": train_digests, "variant": variant, "seed": seed, "epochs": cfg.epochs,
                           "lr": cfg.lr, "momentum": cfg.momentum}, [m_path], do_train)
                for name in test_names:
                    p_path = out / "predictions" / f"{variant}-s{seed}" / f"{name}.tsv"
                    p_path.parent.mkdir(parents=True, exist_ok=True)

                    def do_predict(m_path=m_path, name=name, p_path=p_path):
                        g = load_graph(feat_paths[name])
                        write_predictions(g.net_ids, models.load_model(m_path).predict(g), p_path)

                    cache.run("predict", f"{variant}-s{seed}.{name}",
                              {"model": file_digest(m_path), "graph": file_digest(feat_paths[name])},
                              [p_path], do_predict)
                    pred_files[(seed, name, variant)] = p_path
        for method in cfg.baselines:
            for name in test_names:
                p_path = out / "predictions" / method / f"{name}.tsv"
                p_path.parent.mkdir(parents=True, exist_ok=True)

                def do_baseline(method=method, name=name, p_path=p_path, train_names=train_names):
                    g = load_graph(feat_paths[name])
                    if method == "poly":
                        scores = baselines.poly([load_graph(feat_paths[n]) for n in train_names], g)
                    else:
                        scores = baselines.METHODS[method](g)
                    write_predictions(g.net_ids, scores, p_path)

                deps = {"graph": file_digest(feat_paths[name]), "method": method}
                if method == "poly":
                    deps["train"] = train_digests
                cache.run("baseline", f"{method}.{name}", deps, [p_path], do_baseline)
                for seed in cfg.seeds:
                    pred_files[(seed, name, method)] = p_path

    report_dir = out / "report"
    report_files = [report_dir / n for n in ("report.tsv", "families.tsv", "bins.tsv", "summary.txt")]
    family_of = {n: f for n, f, _ in names}
    method_order = list(cfg.variants) + list(cfg.baselines)

    def do_eval():
        designs = {}
        for name in family_of:
            g = load_graph(feat_paths[name])
            designs[name] = Design(name, family_of[name], g, metrics.sample_paths(g, cfg.path_count, seed=0))
        rows, preds = [], {}
        for seed in cfg.seeds:
            for fam in cfg.families:
                for method in method_order:
                    for name in (n for n, f, _ in names if f == fam):
                        g = designs[name].graph
                        p = read_predictions(pred_files[(seed, name, method)])
                        scores = np.array([p[n] for n in g.net_ids])
                        row = {"seed": seed, "family": fam, "design": name, "method": method}
                        row.update(evaluate(designs[name], method, scores))
                        rows.append(row)
                        preds[(seed, name, method)] = scores
        report = EvalReport(rows, _timings(cache), bin_rows(preds, designs))
        report.write(report_dir)

    eval_deps = {"preds": {f"{k[0]}|{k[1]}|{k[2]}": file_digest(v) for k, v in sorted(pred_files.items())},
                 "graphs": {n: file_digest(p) for n, p in sorted(feat_paths.items())},
                 "paths": cfg.path_count, "methods": method_order, "seeds": cfg.seeds}
    cache.run("eval", "report", eval_deps, report_files, do_eval)
    return {"report": report_dir, "hits": cache.hits, "runs": cache.runs}


def _timings(cache: StageCache) -> list[dict]:
    rows = []
    for label, secs in sorted(cache.seconds.items()):
        stage, _, name = label.partition(":")
        rows.append({"seed": "-", "family": name.split("-")[0] if "-" in name else "-", "design": name,
                     "stage": stage, "seconds": secs})
    return rows
