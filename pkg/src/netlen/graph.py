"""Nets-as-nodes directed graph and its binary cache (``.nlg``)."""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netlist import Netlist, NetlistError, parse_netlist

GRAPH_MAGIC = b"NLG1"
GRAPH_VERSION = 1


class FormatError(ValueError):
    """Raised when a binary artifact has the wrong magic, version or layout."""


@dataclass(frozen=True, eq=False)
class NetGraph:
    netlist: Netlist
    fanin: list[list[int]]
    fanout: list[list[int]]
    src: np.ndarray
    dst: np.ndarray
    edge_cell: np.ndarray
    node_features: np.ndarray | None = None
    edge_features: np.ndarray | None = None
    edge_layout: dict = field(default_factory=dict)
    labels: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.netlist.nets)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def net_ids(self) -> list[str]:
        return self.netlist.net_ids

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def neighbors(self, k: int) -> list[int]:
        return sorted(set(self.fanin[k]) | set(self.fanout[k]))

    def degrees(self) -> np.ndarray:
        """Number of distinct neighbor nets per node."""
        return np.array([len(set(fi) | set(fo)) for fi, fo in zip(self.fanin, self.fanout)],
                        dtype=np.int64)

    def fanout_sizes(self) -> np.ndarray:
        """Number of sinks per net (the fan-out size feature)."""
        return np.array([len(n.sinks) for n in self.netlist.nets], dtype=np.int64)

    def fanin_sizes(self) -> np.ndarray:
        return np.array([len(fi) for fi in self.fanin], dtype=np.int64)

    def neighbor_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Deduplicated (source, target) neighbor pairs, sorted by target."""
        if self.n_edges == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        key = np.unique(self.dst * self.n_nodes + self.src)
        return key % self.n_nodes, key // self.n_nodes

    def replace(self, **changes) -> "NetGraph":
        return dataclasses.replace(self, **changes)


def build_graph(netlist: Netlist) -> NetGraph:
    """One node per net; both directed edges for every fan-in/fan-out pair.

    An edge ``b -> k`` carries the cell shared by the two nets. When two nets
    share several cells, one parallel edge per shared cell is kept.
    """
    fanin, fanout = netlist.fanin_fanout()
    cidx = netlist.cell_index()
    drives: dict[str, list[int]] = {}
    for i, net in enumerate(netlist.nets):
        if net.driver is not None:
            drives.setdefault(net.driver, []).append(i)

    triples = set()
    for k, net in enumerate(netlist.nets):
        if net.driver is not None:
            for b in fanin[k]:
                triples.add((k, b, cidx[net.driver]))
        for s in net.sinks:
            for o in drives.get(s, ()):
                triples.add((k, o, cidx[s]))
    if triples:
        arr = np.array(sorted(triples), dtype=np.int64)
        dst, src, cell = arr[:, 0], arr[:, 1], arr[:, 2]
    else:
        dst = src = cell = np.zeros(0, dtype=np.int64)
    return NetGraph(netlist, fanin, fanout, src.copy(), dst.copy(), cell.copy())


def attach_labels(graph: NetGraph, labels: dict[str, float] | None, training: bool = True) -> NetGraph:
    """Attach HPWL labels (µm) in node order.

    In training mode every net needs a label. In inference mode an empty or
    missing label set leaves the graph unlabeled.
    """
    ids = graph.net_ids
    if not labels:
        if training and ids:
            raise NetlistError(f"missing labels for {len(ids)} nets: {', '.join(ids[:10])}")
        return graph.replace(labels=None)
    known = set(ids)
    unknown = [k for k in labels if k not in known]
    if unknown:
        raise NetlistError(f"labels for unknown nets: {', '.join(sorted(unknown)[:10])}")
    missing = [k for k in ids if k not in labels]
    if missing:
        raise NetlistError(f"missing labels for {len(missing)} nets: {', '.join(missing[:10])}")
    return graph.replace(labels=np.array([labels[k] for k in ids], dtype=np.float64))


# -- binary cache ------------------------------------------------------------
#
# layout: magic(4) version(u32) n_sections(u32), then per section
# tag(4) length(u64) payload. All integers little-endian.

def _array_bytes(a: np.ndarray, dtype: str) -> bytes:
    a = np.ascontiguousarray(a, dtype=dtype)
    head = struct.pack("<II", *(a.shape if a.ndim == 2 else (a.shape[0], 1)))
    return head + a.tobytes()


def _array_from(buf: bytes, dtype: str) -> np.ndarray:
    rows, cols = struct.unpack_from("<II", buf, 0)
    a = np.frombuffer(buf, dtype=dtype, offset=8, count=rows * cols).copy()
    return a.reshape(rows, cols)


def write_sections(path, magic: bytes, version: int, sections: list[tuple[bytes, bytes]]):
    out = io.BytesIO()
    out.write(magic)
    out.write(struct.pack("<II", version, len(sections)))
    for tag, payload in sections:
        out.write(tag)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    Path(path).write_bytes(out.getvalue())


def read_sections(path, magic: bytes, version: int) -> dict[bytes, bytes]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {magic.decode()!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    ver, count = struct.unpack_from("<II", data, 4)
    if ver != version:
        raise FormatError(f"{path}: unsupported version {ver}, expected {version}")
    pos, sections = 12, {}
    for _ in range(count):
        if pos + 12 > len(data):
            raise FormatError(f"{path}: truncated section table")
        tag = data[pos:pos + 4]
        (length,) = struct.unpack_from("<Q", data, pos + 4)
        pos += 12
        if pos + length > len(data):
            raise FormatError(f"{path}: section {tag!r} truncated")
        sections[tag] = data[pos:pos + length]
        pos += length
    return sections


def save_graph(graph: NetGraph, path):
    sections = [
        (b"NETL", graph.netlist.serialize().encode("utf-8")),
        (b"EDGE", _array_bytes(np.stack([graph.src, graph.dst, graph.edge_cell], axis=1)
                               if graph.n_edges else np.zeros((0, 3)), "<i8")),
    ]
    if graph.node_features is not None:
        sections.append((b"NFEA", _array_bytes(graph.node_features, "<f8")))
    if graph.edge_features is not None:
        sections.append((b"ELAY", json.dumps(graph.edge_layout, sort_keys=True).encode()))
        sections.append((b"EFEA", _array_bytes(graph.edge_features, "<f8")))
    if graph.labels is not None:
        sections.append((b"LABL", _array_bytes(graph.labels.reshape(-1, 1), "<f8")))
    write_sections(path, GRAPH_MAGIC, GRAPH_VERSION, sections)


def load_graph(path) -> NetGraph:
    sec = read_sections(path, GRAPH_MAGIC, GRAPH_VERSION)
    for tag in (b"NETL", b"EDGE"):
        if tag not in sec:
            raise FormatError(f"{path}: missing section {tag.decode()}")
    netlist = parse_netlist(sec[b"NETL"].decode("utf-8"))
    graph = build_graph(netlist)
    edges = _array_from(sec[b"EDGE"], "<i8")
    if edges.shape[0] != graph.n_edges or not (
            np.array_equal(edges[:, 0], graph.src) and np.array_equal(edges[:, 1], graph.dst)):
        raise FormatError(f"{path}: edge section inconsistent with stored netlist")
    changes = {}
    if b"NFEA" in sec:
        changes["node_features"] = _array_from(sec[b"NFEA"], "<f8")
    if b"EFEA" in sec:
        changes["edge_features"] = _array_from(sec[b"EFEA"], "<f8")
        changes["edge_layout"] = json.loads(sec[b"ELAY"].decode()) if b"ELAY" in sec else {}
    if b"LABL" in sec:
        changes["labels"] = _array_from(sec[b"LABL"], "<f8")[:, 0]
    return graph.replace(**changes) if changes else graph
