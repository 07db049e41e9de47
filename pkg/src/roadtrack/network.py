"""Directed road networks and arc-length parameterized paths.

A road network is a collection of directed straight segments ("edges")
joined where one edge's last vertex coincides with another edge's first
vertex.  Edge records may be ingested as polylines; they are split into
straight sub-edges at build time so that every stored edge is a single
chord.  Edge id 0 is reserved for the off-road state and never appears
in a graph.

Paths are ordered sequences of connected edges.  Positions on a path are
addressed by the cumulative travel distance d, with d = 0 at the start
of the first edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

OFF_ROAD = 0

# 1 / sqrt(12): standard deviation of a uniform distribution of unit width.
_UNIFORM_SD = 1.0 / math.sqrt(12.0)


class GeoPoint(NamedTuple):
    """A planar coordinate pair (already projected, length units)."""

    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    """A directed straight road segment.

    ``successors`` are the ids of edges whose first vertex equals
    this edge's last vertex (U-turn twins included).  ``twin`` is the
    id of the same chord traversed in the opposite direction, if one
    exists.  ``source_id`` is the id of the ingested record this edge
    came from; it differs from ``id`` only for split polylines.
    """

    id: int
    geometry: tuple[GeoPoint, GeoPoint]
    length: float
    successors: tuple[int, ...]
    start_node: int
    end_node: int
    twin: int | None = None
    source_id: int | None = None
    unit: np.ndarray = None

    def __post_init__(self):
        if self.unit is None:
            d = np.asarray(self.end, dtype=float) - np.asarray(self.start, dtype=float)
            object.__setattr__(self, "unit", d / self.length)

    @property
    def start(self) -> GeoPoint:
        return self.geometry[0]

    @property
    def end(self) -> GeoPoint:
        return self.geometry[-1]

    def direction(self) -> np.ndarray:
        """Unit vector from start to end."""
        return self.unit


@dataclass(frozen=True)
class PathCandidate:
    """An ordered, connected edge sequence with cumulative distances.

    ``cumulative[k]`` is the distance from the path start to the start
    of the k-th edge; ``cumulative[-1]`` is the total length.  The null
    path (``is_null``) is the off-road pseudo-path and has no edges.
    """

    edges: tuple[Edge, ...]
    cumulative: np.ndarray
    is_null: bool = False
    _edge_ids: tuple[int, ...] = None
    _transforms: list = None          # per-edge transform cache, filled lazily

    def __post_init__(self):
        cum = np.asarray(self.cumulative, dtype=float)
        object.__setattr__(self, "cumulative", cum)
        object.__setattr__(self, "_edge_ids", tuple(e.id for e in self.edges))
        if len(cum) != len(self.edges) + 1:
            raise ValueError("cumulative must have one entry per edge boundary")

    @property
    def edge_ids(self) -> tuple[int, ...]:
        return self._edge_ids

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def __len__(self) -> int:
        return len(self.edges)


NULL_PATH = PathCandidate(edges=(), cumulative=np.zeros(1), is_null=True)


def _as_points(coords: Sequence[float] | Sequence[GeoPoint]) -> list[GeoPoint]:
    pts = [GeoPoint(float(p[0]), float(p[1])) for p in coords]
    for p in pts:
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise ValueError(f"non-finite coordinate {p}")
    return pts


@dataclass
class RoadGraph:
    """Immutable directed road graph with a spatial endpoint index.

    Construct with :func:`build_graph`; do not mutate after that.
    """

    edges: dict[int, Edge]
    node_coords: np.ndarray                 # (n_nodes, 2)
    node_out: list[tuple[int, ...]]         # node -> outgoing edge ids
    node_in: list[tuple[int, ...]]          # node -> incoming edge ids
    max_edge_length: float
    _tree: cKDTree = field(repr=False, default=None)

    def __post_init__(self):
        if self._tree is None and len(self.node_coords):
            self._tree = cKDTree(self.node_coords)
        # Flat per-edge arrays for vectorized geometry queries.
        ids = sorted(self.edges)
        self._ids = np.array(ids, dtype=int)
        self._seg_a = np.array([self.edges[e].start for e in ids], dtype=float).reshape(-1, 2)
        self._seg_b = np.array([self.edges[e].end for e in ids], dtype=float).reshape(-1, 2)
        incident: list[set[int]] = [set() for _ in range(len(self.node_coords))]
        for row, eid in enumerate(ids):
            e = self.edges[eid]
            incident[e.start_node].add(row)
            incident[e.end_node].add(row)
        self._node_rows = [np.fromiter(sorted(v), dtype=int) for v in incident]

    def _segment_distances(self, rows: np.ndarray, p: np.ndarray) -> np.ndarray:
        a = self._seg_a[rows]
        ab = self._seg_b[rows] - a
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab),
                    0.0, 1.0)
        closest = a + t[:, None] * ab
        return np.hypot(*(p - closest).T)

    # -- basic lookups -------------------------------------------------

    def edge(self, edge_id: int) -> Edge:
        return self.edges[edge_id]

    def successors(self, edge_id: int) -> tuple[int, ...]:
        return self.edges[edge_id].successors

    def predecessors(self, edge_id: int) -> tuple[int, ...]:
        return self.node_in[self.edges[edge_id].start_node]

    def node_position(self, node: int) -> GeoPoint:
        return GeoPoint(*self.node_coords[node])

    # -- spatial queries -----------------------------------------------

    def nodes_near(self, point, radius: float) -> list[int]:
        """Node ids whose coordinates lie inside the closed disc."""
        if self._tree is None:
            return []
        return sorted(self._tree.query_ball_point(np.asarray(point, float), radius))

    def edges_near(self, point, radius: float) -> list[int]:
        """Ids of edges whose segment intersects the closed disc, sorted.

        Any segment touching the disc has an endpoint within
        ``radius + max_edge_length`` of the centre, so a KD-tree lookup
        over endpoints followed by an exact point-segment distance test
        is complete.
        """
        if self._tree is None:
            return []
        p = np.asarray(point, dtype=float)
        nodes = self._tree.query_ball_point(p, radius + self.max_edge_length)
        if not nodes:
            return []
        rows = np.unique(np.concatenate([self._node_rows[n] for n in nodes]))
        if not rows.size:
            return []
        dist = self._segment_distances(rows, p)
        return self._ids[rows[dist <= radius]].tolist()

    def nearest_edge(self, point) -> int:
        """Id of the edge with minimal distance to the point."""
        if not self.edges:
            raise ValueError("empty graph")
        p = np.asarray(point, dtype=float)
        dist = self._segment_distances(np.arange(len(self._ids)), p)
        return int(self._ids[int(np.argmin(dist))])

    # -- paths -----------------------------------------------------------

    def path(self, edge_ids: Sequence[int]) -> PathCandidate:
        """Resolve an ordered id sequence into a connected path."""
        if not edge_ids:
            return NULL_PATH
        resolved = [self.edges[i] for i in edge_ids]
        for a, b in zip(resolved, resolved[1:]):
            if b.id not in a.successors:
                raise ValueError(f"edge {b.id} is not a successor of edge {a.id}")
        cum = np.concatenate([[0.0], np.cumsum([e.length for e in resolved])])
        return PathCandidate(edges=tuple(resolved), cumulative=cum)

    def single_edge_path(self, edge_id: int) -> PathCandidate:
        return self.path([edge_id])


# ---------------------------------------------------------------------------
# construction


def build_graph(edge_records: Iterable[tuple[int, Sequence]]) -> RoadGraph:
    """Build a :class:`RoadGraph` from ``(id, polyline)`` records.

    Polylines with more than two vertices are split into straight
    sub-edges; split parts receive fresh ids above the largest input id
    and remember the originating record in ``source_id``.

    Raises ``ValueError`` on duplicate or non-positive ids, polylines
    with fewer than two vertices, or zero-length segments.
    """
    records = [(int(i), _as_points(coords)) for i, coords in edge_records]
    seen_ids = set()
    for i, pts in records:
        if i <= 0:
            raise ValueError(f"edge id must be positive, got {i}")
        if i in seen_ids:
            raise ValueError(f"duplicate edge id {i}")
        seen_ids.add(i)
        if len(pts) < 2:
            raise ValueError(f"edge {i}: polyline needs at least 2 vertices")

    next_id = max(seen_ids) + 1 if seen_ids else 1
    chords: list[tuple[int, GeoPoint, GeoPoint, int]] = []  # (id, a, b, source)
    for i, pts in records:
        segments = list(zip(pts, pts[1:]))
        for k, (a, b) in enumerate(segments):
            if a == b or math.hypot(b.x - a.x, b.y - a.y) == 0.0:
                raise ValueError(f"edge {i}: zero-length segment at vertex {k}")
            if len(segments) == 1:
                chords.append((i, a, b, i))
            else:
                chords.append((next_id, a, b, i))
                next_id += 1

    node_index: dict[GeoPoint, int] = {}
    coords: list[GeoPoint] = []

    def node_of(p: GeoPoint) -> int:
        if p not in node_index:
            node_index[p] = len(coords)
            coords.append(p)
        return node_index[p]

    raw = []
    for eid, a, b, src in chords:
        raw.append((eid, a, b, src, node_of(a), node_of(b)))

    node_out: list[list[int]] = [[] for _ in coords]
    node_in: list[list[int]] = [[] for _ in coords]
    for eid, a, b, src, na, nb in raw:
        node_out[na].append(eid)
        node_in[nb].append(eid)
    node_out = [tuple(sorted(v)) for v in node_out]
    node_in = [tuple(sorted(v)) for v in node_in]

    edges: dict[int, Edge] = {}
    reverse_lookup = {(na, nb): eid for eid, _, _, _, na, nb in raw}
    for eid, a, b, src, na, nb in raw:
        twin = reverse_lookup.get((nb, na))
        edges[eid] = Edge(
            id=eid,
            geometry=(a, b),
            length=math.hypot(b.x - a.x, b.y - a.y),
            successors=node_out[nb],
            start_node=na,
            end_node=nb,
            twin=twin,
            source_id=src,
        )

    max_len = max((e.length for e in edges.values()), default=0.0)
    return RoadGraph(
        edges=edges,
        node_coords=np.asarray(coords, dtype=float).reshape(-1, 2),
        node_out=node_out,
        node_in=node_in,
        max_edge_length=max_len,
    )


def grid_edge_records(n: int, spacing: float = 1.0,
                      origin: tuple[float, float] = (0.0, 0.0)) -> list[tuple[int, list[GeoPoint]]]:
    """Edge records for an n-by-n node grid, both directions per street.

    Produces ``4 * n * (n - 1)`` directed edges with ids 1..count.
    """
    if n < 2:
        raise ValueError("grid needs at least 2 nodes per side")
    ox, oy = origin
    pt = lambda i, j: GeoPoint(ox + i * spacing, oy + j * spacing)
    records = []
    eid = 1
    for i in range(n):
        for j in range(n):
            a = pt(i, j)
            for b in ((pt(i + 1, j) if i + 1 < n else None),
                      (pt(i, j + 1) if j + 1 < n else None)):
                if b is None:
                    continue
                records.append((eid, [a, b]))
                eid += 1
                records.append((eid, [b, a]))
                eid += 1
    return records


def grid_graph(n: int, spacing: float = 1.0,
               origin: tuple[float, float] = (0.0, 0.0)) -> RoadGraph:
    return build_graph(grid_edge_records(n, spacing, origin))


# ---------------------------------------------------------------------------
# edge-list file format: "id,x1,y1,x2,y2[,...]" per line, '#' comments


def load_edge_records(path) -> list[tuple[int, list[GeoPoint]]]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                eid = int(parts[0])
                vals = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if len(vals) < 4 or len(vals) % 2:
                raise ValueError(
                    f"{path}:{lineno}: expected an even list of >= 4 coordinates")
            pts = [GeoPoint(vals[k], vals[k + 1]) for k in range(0, len(vals), 2)]
            records.append((eid, pts))
    return records


def load_graph(path) -> RoadGraph:
    return build_graph(load_edge_records(path))


def save_graph(graph: RoadGraph, path) -> None:
    """Write the (already split) edges back out; reload is a fixpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id,x1,y1,x2,y2\n")
        for eid in sorted(graph.edges):
            e = graph.edges[eid]
            coords = ",".join(repr(c) for p in e.geometry for c in p)
            fh.write(f"{eid},{coords}\n")


# ---------------------------------------------------------------------------
# arc-length operations


def locate_on_path(path: PathCandidate, d: float) -> GeoPoint:
    """Point at travel distance ``d`` from the path start.

    Linear interpolation along the edge containing ``d``; edge boundary
    distances map exactly onto the boundary vertices.
    """
    if path.is_null or not path.edges:
        raise ValueError("cannot locate a position on the null path")
    cum = path.cumulative
    if d < cum[0] or d > cum[-1]:
        raise ValueError(f"distance {d} outside [0, {cum[-1]}]")
    k = int(np.searchsorted(cum, d, side="right") - 1)
    k = min(k, len(path.edges) - 1)
    edge = path.edges[k]
    if d == cum[k]:
        return edge.start
    if d == cum[k + 1]:
        return edge.end
    t = (d - cum[k]) / (cum[k + 1] - cum[k])
    return GeoPoint(edge.start.x + (edge.end.x - edge.start.x) * t,
                    edge.start.y + (edge.end.y - edge.start.y) * t)


def edge_distance_bounds(path: PathCandidate, edge_index: int) -> tuple[float, float]:
    """Cumulative distances (d_start, d_end) of one edge on this path."""
    if path.is_null:
        raise IndexError("null path has no edges")
    if not 0 <= edge_index < len(path.edges):
        raise IndexError(f"edge index {edge_index} out of range")
    return float(path.cumulative[edge_index]), float(path.cumulative[edge_index + 1])


def edge_stats(path: PathCandidate, edge_index: int) -> tuple[float, float]:
    """Midpoint distance and soft-assignment scale of one edge.

    Returns ``(d_mid, d_scale)`` where ``d_mid`` is the centre of the
    edge's distance interval and ``d_scale`` is the standard deviation
    of a uniform distribution over that interval (interval width over
    sqrt(12)).
    """
    d_a, d_w = edge_distance_bounds(path, edge_index)
    return 0.5 * (d_a + d_w), (d_w - d_a) * _UNIFORM_SD


def segment_point_distance(edge: Edge, point) -> float:
    """Euclidean distance from a point to the edge's chord."""
    p = np.asarray(point, dtype=float)
    a = np.asarray(edge.start, dtype=float)
    b = np.asarray(edge.end, dtype=float)
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    t = min(1.0, max(0.0, t))
    return float(np.hypot(*(p - (a + t * ab))))
