"""GNN layers, the Net2 architectures and their ablations, training and inference."""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .features import FeatureScaler, standardize
from .graph import FormatError, NetGraph, read_sections, write_sections

log = logging.getLogger(__name__)

MODEL_MAGIC = b"NLM1"
MODEL_VERSION = 1

VARIANTS = ("gcn", "gsage", "gat", "net2f", "net2a", "edgeann", "simplenet",
            "f0net", "f1net", "f2f3net", "lesspnet", "ann")
EDGE_VARIANTS = {"net2a", "edgeann", "simplenet", "f0net", "f1net", "f2f3net", "lesspnet"}
NET2A_LIKE = {"net2a", "f0net", "f1net", "f2f3net", "lesspnet"}
LESS_P_DIVISORS = (500, 1000, 2000, 3000)


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    variant: str = "net2a"
    layers: int = 3
    hidden: int = 64
    heads: int = 2
    head_hidden: int = 64
    lr: float = 0.002
    momentum: float = 0.9
    epochs: int = 250
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower().replace("_", "").replace("-", "")
        if self.variant == "net²f":
            self.variant = "net2f"
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        for name in ("layers", "hidden", "heads", "head_hidden", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be >= 0 and momentum in [0, 1)")
        if self.hidden % self.heads:
            raise ValueError("hidden width must split evenly across attention heads")
        if self.variant == "simplenet":
            self.layers = 1

    @property
    def uses_edges(self) -> bool:
        return self.variant in EDGE_VARIANTS


# -- per-graph constant operators --------------------------------------------

def _selection(rows: np.ndarray, n: int) -> sp.csr_matrix:
    """Matrix gathering ``x[rows]`` from an n-row operand."""
    m = rows.size
    return sp.csr_matrix((np.ones(m), (np.arange(m), rows)), shape=(m, n))


@dataclass
class GraphOps:
    """Sparse operators and standardized inputs for one graph."""

    n: int
    deg: np.ndarray
    gcn: sp.csr_matrix
    mean_nb: sp.csr_matrix
    att_src: sp.csr_matrix
    att_dst: sp.csr_matrix
    att_seg: np.ndarray
    att_scatter: sp.csr_matrix
    node_x: np.ndarray
    edge_x: np.ndarray | None = None
    edge_input: np.ndarray | None = None
    edge_scatter: sp.csr_matrix | None = None
    inv_deg: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    target: np.ndarray | None = None


def compile_graph(graph: NetGraph, node_x: np.ndarray | None = None, edge_x: np.ndarray | None = None) -> GraphOps:
    n = graph.n_nodes
    node_x = graph.node_features if node_x is None else node_x
    src, dst = graph.neighbor_pairs()
    deg = np.bincount(dst, minlength=n).astype(np.float64)

    norm = 1.0 / np.sqrt(deg + 1.0)
    loops = np.arange(n)
    rows = np.concatenate([dst, loops])
    cols = np.concatenate([src, loops])
    gcn = sp.csr_matrix((norm[rows] * norm[cols], (rows, cols)), shape=(n, n))
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    mean_nb = sp.csr_matrix((inv[dst], (dst, src)), shape=(n, n))

    order = np.lexsort((cols, rows))
    a_src, a_dst = cols[order], rows[order]
    att_src = _selection(a_src, n)
    att_dst = _selection(a_dst, n)

    ops = GraphOps(n, deg, gcn, mean_nb, att_src, att_dst, a_dst, att_dst.T.tocsr(),
                   np.asarray(node_x, dtype=np.float64), inv_deg=inv[:, None])
    if edge_x is not None:
        E = graph.n_edges
        ops.edge_x = np.asarray(edge_x, dtype=np.float64)
        ops.edge_input = np.concatenate([node_x[graph.dst], ops.edge_x, node_x[graph.src]], axis=1)
        ops.edge_scatter = sp.csr_matrix((np.ones(E), (graph.dst, np.arange(E))), shape=(n, E))
    return ops


# -- layers ------------------------------------------------------------------

def gcn_layer(h: Tensor, ops: GraphOps, W: Tensor, act=ad.sigmoid) -> Tensor:
    return act(ad.spmm(ops.gcn, h @ W))


def gsage_layer(h: Tensor, ops: GraphOps, W: Tensor, act=ad.sigmoid) -> Tensor:
    return act(ad.concat([h, ad.spmm(ops.mean_nb, h)]) @ W)


def gat_attention(h: Tensor, ops: GraphOps, W: Tensor, theta: Tensor) -> tuple[Tensor, Tensor]:
    """Projected features and attention weights over each node and its neighbors.

    ``theta`` stacks the source half over the target half, matching
    ``theta^T [W h_beta || W h_k]``.
    """
    z = h @ W
    width = W.shape[1]
    theta_src = _rows(theta, 0, width)
    theta_dst = _rows(theta, width, 2 * width)
    score_src = z @ theta_src
    score_dst = z @ theta_dst
    logits = ad.leaky_relu(ad.spmm(ops.att_src, score_src) + ad.spmm(ops.att_dst, score_dst))
    alpha = ad.segment_softmax(logits, ops.att_seg, ops.n)
    return z, alpha


def gat_layer(h: Tensor, ops: GraphOps, heads: list[tuple[Tensor, Tensor]], act=ad.sigmoid) -> Tensor:
    outs = []
    for W, theta in heads:
        z, alpha = gat_attention(h, ops, W, theta)
        outs.append(ad.spmm(ops.att_scatter, alpha * ad.spmm(ops.att_src, z)))
    return act(ad.concat(outs) if len(outs) > 1 else outs[0])


def edge_conv(ops: GraphOps, W1: Tensor, b1: Tensor, W2: Tensor) -> tuple[Tensor, Tensor]:
    """Sum and mean over incoming edges of ``W2 g(W1 [O_k || E_bk || O_b] + b1)``.

    ``W2`` is linear, so it is applied after the per-target sum.
    """
    hidden = ad.leaky_relu(Tensor(ops.edge_input) @ W1 + b1)
    e_sum = ad.spmm(ops.edge_scatter, hidden) @ W2
    e_mean = ad.scale(e_sum, ops.inv_deg)
    return e_sum, e_mean


def _rows(t: Tensor, lo: int, hi: int) -> Tensor:
    def back(g):
        full = np.zeros_like(t.data)
        full[lo:hi] = g
        return (full,)
    return ad._result(t.data[lo:hi].copy(), (t,), back)


# -- model -------------------------------------------------------------------

def edge_mask(variant: str, layout: dict, width: int) -> np.ndarray:
    """Column mask applied to standardized edge features for ablation variants."""
    mask = np.ones(width)
    pd = list(layout.get("p_divisors", []))
    md = list(layout.get("m_divisors", []))
    if variant == "f0net":
        keep = [4 * i + j for i in range(len(pd)) for j in (0, 1)]
    elif variant == "f1net":
        keep = [4 * i + j for i in range(len(pd)) for j in (2, 3)]
    elif variant == "f2f3net":
        keep = list(range(4 * len(pd), 4 * len(pd) + 3 * len(md)))
    elif variant == "lesspnet":
        keep = [4 * i + j for i, d in enumerate(pd) if d in LESS_P_DIVISORS for j in range(4)]
        keep += list(range(4 * len(pd), 4 * len(pd) + 3 * len(md)))
    else:
        return mask
    mask[:] = 0.0
    mask[keep] = 1.0
    return mask


class Model:
    def __init__(self, config: ModelConfig, node_width: int, edge_width: int,
                 scaler: FeatureScaler, label_mean: float = 0.0, label_std: float = 1.0,
                 edge_layout: dict | None = None):
        self.config = config
        self.node_width = node_width
        self.edge_width = edge_width
        self.scaler = scaler
        self.label_mean = float(label_mean)
        self.label_std = float(label_std)
        self.edge_layout = dict(edge_layout or {})
        self.params: dict[str, Tensor] = {}
        self.bns: dict[str, BatchNormState] = {}
        self.history: list[float] = []
        self._rng = np.random.default_rng(config.seed)
        self._build()

    # parameters
    def _weight(self, name, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.params[name] = Tensor(self._rng.uniform(-bound, bound, (fan_in, fan_out)),
                                   requires_grad=True, name=name)

    def _bias(self, name, width):
        self.params[name] = Tensor(np.zeros((1, width)), requires_grad=True, name=name)

    def _bn(self, name, width):
        bn = BatchNormState(width, name)
        self.bns[name] = bn
        self.params[f"{name}.gamma"] = bn.gamma
        self.params[f"{name}.beta"] = bn.beta

    def _gat_params(self, prefix, fan_in):
        c = self.config
        per_head = c.hidden // c.heads
        for j in range(c.heads):
            self._weight(f"{prefix}.W{j}", fan_in, per_head)
            self._weight(f"{prefix}.theta{j}", 2 * per_head, 1)

    def _build(self):
        c, v = self.config, self.config.variant
        width = self.node_width
        hid = c.hidden
        if v in ("gcn", "gsage", "gat", "net2f") or v in NET2A_LIKE or v == "simplenet":
            for t in range(c.layers):
                fan_in = width if t == 0 else hid
                if v == "gcn":
                    self._weight(f"conv{t}.W", fan_in, hid)
                elif v == "gsage":
                    self._weight(f"conv{t}.W", 2 * fan_in, hid)
                else:
                    self._gat_params(f"conv{t}", fan_in)
                self._bn(f"conv{t}.bn", hid)
        if v in ("gcn", "gsage", "gat"):
            emb = hid
        elif v == "net2f":
            emb = c.layers * hid
        elif v in NET2A_LIKE:
            edge_in = 2 * width + self.edge_width
            edge_out = 2 * edge_in
            self._weight("edge.W1", edge_in, edge_out)
            self._bias("edge.b1", edge_out)
            self._weight("edge.W2", edge_out, edge_out)
            self._bn("edge.bn", 2 * edge_out)
            self._gat_params("edgegat", 2 * edge_out)
            self._bn("edgegat.bn", hid)
            emb = c.layers * hid + 2 * edge_out + hid
        elif v == "simplenet":
            self._weight("simple.W1", self.edge_width, 2 * self.edge_width)
            self._bn("simple.bn", 2 * self.edge_width)
            emb = hid + 2 * self.edge_width
        elif v == "edgeann":
            emb = width + 2 * self.edge_width
        else:  # ann
            emb = width
        self.embedding_width = emb
        self._weight("head.W0", emb, emb)
        self._bias("head.b0", emb)
        self._weight("head.W1", emb, c.head_hidden)
        self._bias("head.b1", c.head_hidden)
        self._weight("head.W2", c.head_hidden, 1)
        self._bias("head.b2", 1)

    # forward
    def _gat_heads(self, prefix):
        return [(self.params[f"{prefix}.W{j}"], self.params[f"{prefix}.theta{j}"])
                for j in range(self.config.heads)]

    def embed(self, ops: GraphOps, training: bool = False) -> tuple[Tensor, list[Tensor]]:
        """Final node embedding plus the per-layer outputs it was built from."""
        c, v, p = self.config, self.config.variant, self.params
        x = Tensor(ops.node_x)
        h = x
        layer_outs = []
        if v not in ("ann", "edgeann"):
            for t in range(c.layers):
                if v == "gcn":
                    h = gcn_layer(h, ops, p[f"conv{t}.W"])
                elif v == "gsage":
                    h = gsage_layer(h, ops, p[f"conv{t}.W"])
                else:
                    h = gat_layer(h, ops, self._gat_heads(f"conv{t}"))
                h = ad.batch_norm(h, self.bns[f"conv{t}.bn"], training)
                layer_outs.append(h)
        if v in ("gcn", "gsage", "gat"):
            emb = h
        elif v == "net2f":
            emb = ad.concat(layer_outs)
        elif v in NET2A_LIKE:
            e_sum, e_mean = edge_conv(ops, p["edge.W1"], p["edge.b1"], p["edge.W2"])
            e = ad.batch_norm(ad.concat([e_sum, e_mean]), self.bns["edge.bn"], training)
            he = gat_layer(e, ops, self._gat_heads("edgegat"))
            he = ad.batch_norm(he, self.bns["edgegat.bn"], training)
            layer_outs += [e, he]
            emb = ad.concat(layer_outs)
        elif v == "simplenet":
            e_simple = ad.spmm(ops.edge_scatter, Tensor(ops.edge_x) @ p["simple.W1"])
            e_simple = ad.batch_norm(e_simple, self.bns["simple.bn"], training)
            layer_outs.append(e_simple)
            emb = ad.concat(layer_outs)
        elif v == "edgeann":
            agg = ops.edge_scatter @ ops.edge_x
            emb = Tensor(np.concatenate([ops.node_x, agg, agg * ops.inv_deg], axis=1))
        else:
            emb = x
        return emb, layer_outs

    def forward(self, ops: GraphOps, training: bool = False) -> Tensor:
        p = self.params
        emb, _ = self.embed(ops, training)
        z = ad.leaky_relu(emb @ p["head.W0"] + p["head.b0"])
        z = ad.leaky_relu(z @ p["head.W1"] + p["head.b1"])
        return z @ p["head.W2"] + p["head.b2"]

    # data preparation
    def prepare(self, graph: NetGraph) -> GraphOps:
        if graph.n_nodes == 0:
            raise ValueError("graph has no nets")
        if graph.node_features is None:
            raise ValueError("graph has no node features; run featurize first")
        if graph.node_features.shape[1] != self.node_width:
            raise ValueError(f"node feature width {graph.node_features.shape[1]} != model's {self.node_width}")
        node_x = self.scaler.transform_nodes(graph.node_features)
        edge_x = None
        if self.config.uses_edges:
            if graph.edge_features is None:
                raise ValueError(f"variant {self.config.variant} needs edge features (partitions)")
            if graph.edge_features.shape[1] != self.edge_width:
                raise ValueError(f"edge feature width {graph.edge_features.shape[1]} != model's {self.edge_width}")
            edge_x = self.scaler.transform_edges(graph.edge_features)
            edge_x = edge_x * edge_mask(self.config.variant, self.edge_layout, self.edge_width)
        ops = compile_graph(graph, node_x, edge_x)
        if graph.labels is not None:
            ops.target = (label_transform(graph.labels) - self.label_mean) / self.label_std
        return ops

    def predict_ops(self, ops: GraphOps) -> np.ndarray:
        z = self.forward(ops, training=False).data[:, 0]
        return np.power(2.0, z * self.label_std + self.label_mean) - 1.0

    def predict(self, graph: NetGraph) -> np.ndarray:
        """Predicted net length in µm, in node order."""
        return self.predict_ops(self.prepare(graph))

    def state(self):
        return ({k: t.data.copy() for k, t in self.params.items()},
                {k: (b.running_mean.copy(), b.running_var.copy()) for k, b in self.bns.items()})

    def load_state(self, state):
        params, bns = state
        for k, a in params.items():
            self.params[k].data[...] = a
        for k, (m, v) in bns.items():
            self.bns[k].running_mean = m.copy()
            self.bns[k].running_var = v.copy()

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()


def label_transform(hpwl: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + np.asarray(hpwl, dtype=np.float64))


# -- training ----------------------------------------------------------------

def train(config: ModelConfig, graphs: list[NetGraph], val_graphs: list[NetGraph] | None = None,
          progress=None) -> Model:
    """SGD with momentum, one graph per step, graphs shuffled every epoch."""
    if not graphs:
        raise ValueError("need at least one training graph")
    for g in graphs:
        if g.n_nodes == 0:
            raise ValueError("empty graph in training set")
        if g.labels is None:
            raise ValueError("training graphs need labels")
    scaler = standardize(graphs)
    y = np.concatenate([label_transform(g.labels) for g in graphs])
    y_std = float(y.std()) or 1.0
    edge_width = graphs[0].edge_features.shape[1] if config.uses_edges else 0
    model = Model(config, graphs[0].node_features.shape[1], edge_width, scaler,
                  float(y.mean()), y_std, graphs[0].edge_layout)
    train_ops = [model.prepare(g) for g in graphs]
    val_ops = [model.prepare(g) for g in val_graphs] if val_graphs else []
    velocity = {k: np.zeros_like(t.data) for k, t in model.params.items()}
    rng = np.random.default_rng(config.seed)
    best_val, best_state = np.inf, None

    for epoch in range(config.epochs):
        losses = []
        for gi in rng.permutation(len(train_ops)):
            ops = train_ops[gi]
            model.zero_grad()
            try:
                loss = ad.mse(model.forward(ops, training=True), ops.target)
                loss.backward()
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite values at epoch {epoch}, graph {gi}: {exc}") from exc
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"NaN loss at epoch {epoch}, graph {gi}")
            losses.append(value)
            for k, t in model.params.items():
                v = velocity[k]
                v *= config.momentum
                v += t.grad
                t.data -= config.lr * v
        model.history.append(float(np.mean(losses)))
        if val_ops:
            val = float(np.mean([ad.mse(model.forward(o), o.target).item() for o in val_ops]))
            if val < best_val:
                best_val, best_state = val, copy.deepcopy(model.state())
        if progress is not None:
            progress(epoch, model.history[-1])
    if best_state is not None:
        model.load_state(best_state)
    return model


def training_loss(model: Model, graph: NetGraph) -> float:
    ops = model.prepare(graph)
    return ad.mse(model.forward(ops), ops.target).item()


# -- model file --------------------------------------------------------------

def _config_json(model: Model) -> bytes:
    meta = {
        "config": asdict(model.config),
        "node_width": model.node_width,
        "edge_width": model.edge_width,
        "label_mean": model.label_mean,
        "label_std": model.label_std,
        "edge_layout": model.edge_layout,
        "params": [[k, list(t.shape)] for k, t in model.params.items()],
        "bns": sorted(model.bns),
        "history": model.history,
    }
    return json.dumps(meta, sort_keys=True).encode()


def _pack(arrays: list[np.ndarray]) -> bytes:
    return b"".join(struct.pack("<Q", a.size) + np.ascontiguousarray(a, "<f8").tobytes() for a in arrays)


def _unpack(buf: bytes) -> list[np.ndarray]:
    out, pos = [], 0
    while pos < len(buf):
        (size,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        out.append(np.frombuffer(buf, "<f8", size, pos).copy())
        pos += 8 * size
    return out


def save_model(model: Model, path):
    s = model.scaler
    scal = [s.node_mean, s.node_std]
    if s.edge_mean is not None:
        scal += [s.edge_mean, s.edge_std]
    bn_arrays = []
    for k in sorted(model.bns):
        bn_arrays += [model.bns[k].running_mean, model.bns[k].running_var]
    write_sections(path, MODEL_MAGIC, MODEL_VERSION, [
        (b"CONF", _config_json(model)),
        (b"SCAL", _pack(scal)),
        (b"PARM", _pack([t.data for t in model.params.values()])),
        (b"BNST", _pack(bn_arrays)),
    ])


def load_model(path) -> Model:
    sec = read_sections(path, MODEL_MAGIC, MODEL_VERSION)
    for tag in (b"CONF", b"SCAL", b"PARM", b"BNST"):
        if tag not in sec:
            raise FormatError(f"{path}: missing section {tag.decode()}")
    meta = json.loads(sec[b"CONF"].decode())
    scal = _unpack(sec[b"SCAL"])
    scaler = FeatureScaler(scal[0], scal[1], *(scal[2:4] if len(scal) >= 4 else ()))
    config = ModelConfig(**meta["config"])
    model = Model(config, meta["node_width"], meta["edge_width"], scaler,
                  meta["label_mean"], meta["label_std"], meta["edge_layout"])
    names = [k for k, _ in meta["params"]]
    if names != list(model.params):
        raise FormatError(f"{path}: parameter layout does not match variant {config.variant}")
    for (k, shape), arr in zip(meta["params"], _unpack(sec[b"PARM"])):
        model.params[k].data[...] = arr.reshape(shape)
    bn = _unpack(sec[b"BNST"])
    for i, k in enumerate(sorted(model.bns)):
        model.bns[k].running_mean = bn[2 * i].reshape(1, -1)
        model.bns[k].running_var = bn[2 * i + 1].reshape(1, -1)
    model.history = list(meta.get("history", []))
    return model
