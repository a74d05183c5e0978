"""Vessel graphs: nodes with positions in micrometers, edges with radii.

Graphs are read from a pair of CSV tables::

    nodes.csv   id,x,y,z
    edges.csv   node1,node2,radius

Lines starting with ``#`` are comments. ``z`` is depth and increases away
from the cortical surface.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import GraphFormatError, DataError

NODE_HEADER = ["id", "x", "y", "z"]
EDGE_HEADER = ["node1", "node2", "radius"]


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float, float]


@dataclass(frozen=True)
class Edge:
    endpoints: tuple[int, int]
    radius: float

    def reversed(self) -> "Edge":
        return Edge((self.endpoints[1], self.endpoints[0]), self.radius)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VesselGraph:
    """Immutable vessel graph backed by numpy arrays.

    ``node_ids`` and ``positions`` are parallel arrays; ``edges`` holds node
    *ids* (not row indices) and ``radii`` the matching vessel radii.
    """

    node_ids: np.ndarray
    positions: np.ndarray
    edges: np.ndarray
    radii: np.ndarray
    _row: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.asarray(self.node_ids, dtype=np.int64).reshape(-1)
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(ids) != len(pos):
            raise DataError("node_ids and positions differ in length")
        if len(edges) != len(radii):
            raise DataError("edges and radii differ in length")
        if not np.isfinite(pos).all():
            raise DataError("node positions must be finite")
        if not (np.isfinite(radii) & (radii > 0)).all():
            raise DataError("edge radii must be positive and finite")
        order = np.argsort(ids, kind="stable")
        sorted_ids = ids[order]
        dup = np.flatnonzero(sorted_ids[1:] == sorted_ids[:-1])
        if len(dup):
            raise DataError(f"duplicate node id {sorted_ids[dup[0]]}")
        if len(edges):
            if len(ids) == 0:
                raise DataError(f"edge references unknown node id {edges[0, 0]}")
            loc = np.clip(np.searchsorted(sorted_ids, edges), 0, len(ids) - 1)
            bad = sorted_ids[loc] != edges
            if bad.any():
                raise DataError(f"edge references unknown node id {edges[bad][0]}")
            rows = order[loc]
        else:
            rows = np.zeros((0, 2), dtype=np.int64)
        row = {"order": order, "sorted": sorted_ids, "edge_rows": _frozen(rows)}
        object.__setattr__(self, "node_ids", _frozen(ids))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "radii", _frozen(radii))
        object.__setattr__(self, "_row", row)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_nodes == 0:
            z = np.zeros(3)
            return z, z.copy()
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def _index(self, node_id: int) -> int:
        i = int(np.searchsorted(self._row["sorted"], node_id))
        if i >= self.n_nodes or self._row["sorted"][i] != node_id:
            raise KeyError(node_id)
        return int(self._row["order"][i])

    def node(self, node_id: int) -> Node:
        return Node(int(node_id), tuple(self.positions[self._index(node_id)].tolist()))

    def edge(self, index: int) -> Edge:
        n1, n2 = self.edges[index].tolist()
        return Edge((n1, n2), float(self.radii[index]))

    def nodes(self) -> Iterator[Node]:
        for i in range(self.n_nodes):
            yield Node(int(self.node_ids[i]), tuple(self.positions[i].tolist()))

    def iter_edges(self) -> Iterator[Edge]:
        for i in range(self.n_edges):
            yield self.edge(i)

    def position(self, node_id: int) -> np.ndarray:
        return self.positions[self._index(node_id)]

    def edge_segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points, both of shape (E, 3)."""
        rows = self._row["edge_rows"]
        return self.positions[rows[:, 0]], self.positions[rows[:, 1]]

    def __eq__(self, other):
        if not isinstance(other, VesselGraph):
            return NotImplemented
        return (
            np.array_equal(self.node_ids, other.node_ids)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.radii, other.radii)
        )

    __hash__ = None


def edge_angle_to_z(edge: Edge, graph: VesselGraph) -> float:
    """Acute angle in degrees between ``edge`` and the z axis."""
    a = graph.position(edge.endpoints[0])
    b = graph.position(edge.endpoints[1])
    d = b - a
    if not np.any(d):
        raise DataError(f"edge {edge.endpoints} has zero length; angle undefined")
    return float(angles_to_z(d[None, :])[0])


def angles_to_z(directions: np.ndarray) -> np.ndarray:
    """Vectorized acute angle to z for direction vectors of shape (E, 3).

    Zero-length directions get 90 degrees (no preferred orientation).
    """
    d = np.asarray(directions, dtype=np.float64)
    lateral = np.hypot(d[:, 0], d[:, 1])
    axial = np.abs(d[:, 2])
    ang = np.degrees(np.arctan2(lateral, axial))
    ang[(lateral == 0) & (axial == 0)] = 90.0
    return ang


def _rows(path: Path, header: list[str]):
    """Yield (line_number, fields) for the data rows of a graph CSV."""
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except FileNotFoundError:
        raise GraphFormatError("file not found", path) from None
    with fh:
        seen_header = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            fields = [f.strip() for f in fields]
            if not seen_header:
                if [f.lower() for f in fields] != header:
                    raise GraphFormatError(
                        f"expected header {','.join(header)!r}, got {line!r}", path, lineno
                    )
                seen_header = True
                continue
            if len(fields) != len(header):
                raise GraphFormatError(
                    f"expected {len(header)} columns, got {len(fields)}", path, lineno
                )
            yield lineno, fields
        if not seen_header:
            raise GraphFormatError("missing header", path)


def _parse_int(s, path, lineno, what):
    try:
        return int(s)
    except ValueError:
        raise GraphFormatError(f"{what} {s!r} is not an integer", path, lineno) from None


def _parse_float(s, path, lineno, what):
    try:
        v = float(s)
    except ValueError:
        raise GraphFormatError(f"{what} {s!r} is not a number", path, lineno) from None
    if not math.isfinite(v):
        raise GraphFormatError(f"{what} {s!r} is not finite", path, lineno)
    return v


def parse_graph(nodes_file, edges_file) -> VesselGraph:
    """Read and validate a graph from its node and edge tables."""
    nodes_file, edges_file = Path(nodes_file), Path(edges_file)
    ids, pos, where = [], [], {}
    for lineno, (s_id, sx, sy, sz) in _rows(nodes_file, NODE_HEADER):
        nid = _parse_int(s_id, nodes_file, lineno, "node id")
        if nid in where:
            raise GraphFormatError(
                f"duplicate node id {nid} (first defined on line {where[nid]})", nodes_file, lineno
            )
        where[nid] = lineno
        ids.append(nid)
        pos.append([_parse_float(v, nodes_file, lineno, c) for v, c in zip((sx, sy, sz), "xyz")])

    edges, radii, seen = [], [], {}
    for lineno, (s1, s2, sr) in _rows(edges_file, EDGE_HEADER):
        n1 = _parse_int(s1, edges_file, lineno, "node1")
        n2 = _parse_int(s2, edges_file, lineno, "node2")
        for nid in (n1, n2):
            if nid not in where:
                raise GraphFormatError(f"dangling reference to node id {nid}", edges_file, lineno)
        if n1 == n2:
            raise GraphFormatError(f"self-loop on node id {n1}", edges_file, lineno)
        r = _parse_float(sr, edges_file, lineno, "radius")
        if r <= 0:
            raise GraphFormatError(f"radius must be positive, got {r}", edges_file, lineno)
        key = (min(n1, n2), max(n1, n2))
        if key in seen:
            warnings.warn(
                f"{edges_file}:{lineno}: duplicate edge {key} (also line {seen[key]}); kept",
                stacklevel=2,
            )
        else:
            seen[key] = lineno
        edges.append((n1, n2))
        radii.append(r)

    return VesselGraph(
        np.array(ids, dtype=np.int64),
        np.array(pos, dtype=np.float64).reshape(-1, 3),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        np.array(radii, dtype=np.float64),
    )


def write_graph(graph: VesselGraph, nodes_file, edges_file) -> None:
    """Write ``graph`` as CSV; floats use ``repr`` so a re-parse is exact."""
    with open(nodes_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_HEADER)
        for nid, (x, y, z) in zip(graph.node_ids.tolist(), graph.positions.tolist()):
            w.writerow([nid, repr(x), repr(y), repr(z)])
    with open(edges_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for (n1, n2), r in zip(graph.edges.tolist(), graph.radii.tolist()):
            w.writerow([n1, n2, repr(r)])
