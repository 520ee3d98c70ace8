"""Netlist data model and the line-oriented ``.nl`` / ``.lbl`` text formats.

A netlist file looks like::

    NETLIST v1
    CELL A 1.0
    CELL D 2.0
    NET n1 DRIVER A SINKS D
    NET pi0 DRIVER - SINKS A

Blank lines and ``#`` comments are ignored. ``-`` marks a net without a
driver cell (a primary input).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

HEADER = "NETLIST v1"


class NetlistError(ValueError):
    """Raised for malformed or inconsistent netlist / label input."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class Cell:
    id: str
    area: float
    name: str = ""

    def __post_init__(self):
        if not (self.area >= 0 and math.isfinite(self.area)):
            raise NetlistError(f"cell {self.id!r} has invalid area {self.area!r}")


@dataclass(frozen=True)
class Net:
    id: str
    driver: str | None
    sinks: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sinks", tuple(self.sinks))
        if len(set(self.sinks)) != len(self.sinks):
            raise NetlistError(f"net {self.id!r} lists a sink twice")
        if self.driver is not None and self.driver in self.sinks:
            raise NetlistError(f"net {self.id!r}: driver {self.driver!r} also listed as sink")

    @property
    def cells(self) -> tuple[str, ...]:
        """Driver (if any) followed by sinks."""
        if self.driver is None:
            return self.sinks
        return (self.driver,) + self.sinks

    @property
    def pin_count(self) -> int:
        return len(self.sinks) + (self.driver is not None)


@dataclass
class Netlist:
    cells: dict[str, Cell] = field(default_factory=dict)
    nets: list[Net] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = set()
        for net in self.nets:
            if net.id in seen:
                raise NetlistError(f"duplicate net id {net.id!r}")
            seen.add(net.id)
            for c in net.cells:
                if c not in self.cells:
                    raise NetlistError(f"net {net.id!r} references unknown cell {c!r}")

    @property
    def cell_ids(self) -> list[str]:
        return list(self.cells)

    @property
    def net_ids(self) -> list[str]:
        return [n.id for n in self.nets]

    def cell_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.cells)}

    def net_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nets)}

    def driver_area(self, net: Net) -> float:
        return 0.0 if net.driver is None else self.cells[net.driver].area

    def fanin_fanout(self) -> tuple[list[list[int]], list[list[int]]]:
        """Per-net fan-in and fan-out net indices (sorted, unique).

        Fan-ins of ``n_k`` are the nets having ``n_k``'s driver as a sink;
        fan-outs are the nets driven by ``n_k``'s sinks.
        """
        drives: dict[str, list[int]] = {}
        sink_of: dict[str, list[int]] = {}
        for i, net in enumerate(self.nets):
            if net.driver is not None:
                drives.setdefault(net.driver, []).append(i)
            for s in net.sinks:
                sink_of.setdefault(s, []).append(i)
        fanin, fanout = [], []
        for net in self.nets:
            fi = sink_of.get(net.driver, []) if net.driver is not None else []
            fo = set()
            for s in net.sinks:
                fo.update(drives.get(s, ()))
            fanin.append(sorted(set(fi)))
            fanout.append(sorted(fo))
        return fanin, fanout

    def serialize(self) -> str:
        lines = [HEADER]
        for c in self.cells.values():
            lines.append(f"CELL {c.id} {c.area!r}")
        for n in self.nets:
            drv = "-" if n.driver is None else n.driver
            lines.append(" ".join(["NET", n.id, "DRIVER", drv, "SINKS", *n.sinks]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.serialize(), encoding="utf-8")


def parse_netlist(text: str) -> Netlist:
    cells: dict[str, Cell] = {}
    nets: list[Net] = []
    net_lines: dict[str, int] = {}
    refs: list[tuple[str, str, int, int]] = []
    header_seen = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        tokens, cols = _tokenize(line)
        if not header_seen:
            if tokens != ["NETLIST", "v1"]:
                raise NetlistError(f"expected header {HEADER!r}", lineno, cols[0])
            header_seen = True
            continue
        kind = tokens[0]
        if kind == "CELL":
            if len(tokens) != 3:
                raise NetlistError("CELL needs <id> <area>", lineno, cols[0])
            cid = tokens[1]
            if cid in cells:
                raise NetlistError(f"duplicate cell id {cid!r}", lineno, cols[1])
            try:
                area = float(tokens[2])
            except ValueError:
                raise NetlistError(f"bad area {tokens[2]!r}", lineno, cols[2]) from None
            if not (area >= 0 and math.isfinite(area)):
                raise NetlistError(f"area must be a finite non-negative number, got {tokens[2]!r}",
                                   lineno, cols[2])
            cells[cid] = Cell(cid, area, cid)
        elif kind == "NET":
            if len(tokens) < 5 or tokens[2] != "DRIVER":
                raise NetlistError("NET needs <id> DRIVER <cell|-> SINKS <cells...>", lineno, cols[0])
            nid = tokens[1]
            if nid in net_lines:
                raise NetlistError(f"duplicate net id {nid!r} (first defined on line {net_lines[nid]})",
                                   lineno, cols[1])
            if "SINKS" not in tokens[3:]:
                raise NetlistError("missing SINKS keyword", lineno, cols[-1])
            s_at = tokens.index("SINKS", 3)
            if s_at != 4:
                raise NetlistError(f"net {nid!r} has {s_at - 3} drivers; at most one allowed",
                                   lineno, cols[3])
            driver = None if tokens[3] == "-" else tokens[3]
            sinks = tokens[5:]
            if len(set(sinks)) != len(sinks):
                dup = next(s for i, s in enumerate(sinks) if s in sinks[:i])
                raise NetlistError(f"net {nid!r} lists sink {dup!r} twice", lineno,
                                   cols[5 + sinks.index(dup, sinks.index(dup) + 1)])
            if driver is not None and driver in sinks:
                raise NetlistError(f"net {nid!r}: driver {driver!r} is also a sink (self-loop)",
                                   lineno, cols[5 + sinks.index(driver)])
            if driver is not None:
                refs.append((driver, nid, lineno, cols[3]))
            for j, s in enumerate(sinks):
                refs.append((s, nid, lineno, cols[5 + j]))
            net_lines[nid] = lineno
            nets.append(Net(nid, driver, tuple(sinks)))
        else:
            raise NetlistError(f"unknown record {kind!r}", lineno, cols[0])

    if not header_seen:
        raise NetlistError(f"missing header {HEADER!r}", 1, 1)
    for cid, nid, lineno, col in refs:
        if cid not in cells:
            raise NetlistError(f"net {nid!r} references undefined cell {cid!r}", lineno, col)
    return Netlist(cells, nets)


def _tokenize(line: str) -> tuple[list[str], list[int]]:
    tokens, cols = [], []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not line[j].isspace():
            j += 1
        tokens.append(line[i:j])
        cols.append(i + 1)
        i = j
    return tokens, cols


def read_netlist(path) -> Netlist:
    return parse_netlist(Path(path).read_text(encoding="utf-8"))


# -- labels ------------------------------------------------------------------

def parse_labels(text: str) -> dict[str, float]:
    labels: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise NetlistError("label line needs <net-id> <hpwl>", lineno, 1)
        try:
            value = float(parts[1])
        except ValueError:
            raise NetlistError(f"bad HPWL value {parts[1]!r}", lineno) from None
        if not (value >= 0 and math.isfinite(value)):
            raise NetlistError(f"HPWL must be finite and >= 0, got {parts[1]!r}", lineno)
        if parts[0] in labels:
            raise NetlistError(f"duplicate label for net {parts[0]!r}", lineno)
        labels[parts[0]] = value
    return labels


def format_labels(labels: dict[str, float]) -> str:
    return "".join(f"{k} {v!r}\n" for k, v in labels.items())


def read_labels(path) -> dict[str, float]:
    return parse_labels(Path(path).read_text(encoding="utf-8"))


def write_labels(labels: dict[str, float], path):
    Path(path).write_text(format_labels(labels), encoding="utf-8")
