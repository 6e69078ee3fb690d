"""Exact line-of-sight structure by rotational sweep.

The sweep sorts edge endpoints by angle around the transmitter and keeps the
edges crossing the sweep ray in a binary heap ordered by distance along the
ray.  Footprint edges never cross each other, so the relative order of two
active edges does not change while both stay active and the heap stays valid
as the ray rotates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scene import (
    EPS_GEO,
    SceneModel,
    SceneParseError,
    TxInsideBuildingError,
    grid_exit_param,
    ray_first_edge_hit,
    segment_hits_building,
)

TWO_PI = 2.0 * math.pi


def _angle(dx: float, dy: float) -> float:
    a = math.atan2(dy, dx)
    return a + TWO_PI if a < 0 else a


def check_tx(tx, scene: SceneModel) -> None:
    if not scene.inside_grid(tx):
        raise TxInsideBuildingError(f"transmitter {tx} outside the grid extent")
    bid = scene.building_containing(tx)
    if bid is not None:
        raise TxInsideBuildingError(f"transmitter {tx} lies inside building {bid}")


class _ActiveEdges:
    """Indexed binary min-heap of edges keyed by distance along the current ray."""

    def __init__(self, tx, segs):
        self.tx = tx
        self.segs = segs
        self.heap: list[int] = []
        self.pos: dict[int, int] = {}
        self.ux = 1.0
        self.uy = 0.0

    def set_direction(self, angle: float) -> None:
        self.ux = math.cos(angle)
        self.uy = math.sin(angle)

    def _dist(self, e: int) -> float:
        ax, ay, bx, by = self.segs[e]
        sx, sy = bx - ax, by - ay
        den = self.ux * sy - self.uy * sx
        if den == 0.0:
            return math.inf
        return ((ax - self.tx[0]) * sy - (ay - self.tx[1]) * sx) / den

    def _less(self, i: int, j: int) -> bool:
        ei, ej = self.heap[i], self.heap[j]
        di, dj = self._dist(ei), self._dist(ej)
        if di != dj:
            return di < dj
        return ei < ej

    def _swap(self, i, j):
        h = self.heap
        h[i], h[j] = h[j], h[i]
        self.pos[h[i]] = i
        self.pos[h[j]] = j

    def _up(self, i):
        while i > 0:
            parent = (i - 1) >> 1
            if self._less(i, parent):
                self._swap(i, parent)
                i = parent
            else:
                break

    def _down(self, i):
        n = len(self.heap)
        while True:
            l = 2 * i + 1
            if l >= n:
                break
            c = l
            if l + 1 < n and self._less(l + 1, l):
                c = l + 1
            if self._less(c, i):
                self._swap(c, i)
                i = c
            else:
                break

    def push(self, e: int) -> None:
        self.heap.append(e)
        self.pos[e] = len(self.heap) - 1
        self._up(len(self.heap) - 1)

    def remove(self, e: int) -> None:
        i = self.pos.pop(e, None)
        if i is None:
            return
        last = self.heap.pop()
        if i < len(self.heap):
            self.heap[i] = last
            self.pos[last] = i
            self._up(i)
            self._down(self.pos[last])

    def top(self) -> int:
        return self.heap[0]


@dataclass
class VisibilityPolygon:
    """Star-shaped region visible from ``tx``.

    Piece ``k`` covers angles [starts[k], starts[k+1]) (the last piece wraps to
    starts[0] + 2pi) and is bounded by the line through seg_a[k], seg_b[k].
    """

    tx: tuple[float, float]
    starts: np.ndarray
    seg_a: np.ndarray
    seg_b: np.ndarray
    edge_ids: np.ndarray

    def __len__(self):
        return len(self.starts)

    def _piece(self, ang: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.starts, ang, side="right") - 1
        idx[idx < 0] = len(self.starts) - 1
        return idx

    def radial_distance(self, angles) -> np.ndarray:
        ang = np.mod(np.asarray(angles, dtype=float), TWO_PI)
        idx = self._piece(ang)
        a, b = self.seg_a[idx], self.seg_b[idx]
        ux, uy = np.cos(ang), np.sin(ang)
        sx, sy = b[..., 0] - a[..., 0], b[..., 1] - a[..., 1]
        den = ux * sy - uy * sx
        num = (a[..., 0] - self.tx[0]) * sy - (a[..., 1] - self.tx[1]) * sx
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den != 0, num / den, np.inf)

    def contains(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        dx, dy = xs - self.tx[0], ys - self.tx[1]
        ang = np.mod(np.arctan2(dy, dx), TWO_PI)
        idx = self._piece(ang)
        a, b = self.seg_a[idx], self.seg_b[idx]
        sx, sy = b[..., 0] - a[..., 0], b[..., 1] - a[..., 1]
        den = dx * sy - dy * sx
        num = (a[..., 0] - self.tx[0]) * sy - (a[..., 1] - self.tx[1]) * sx
        # t >= 1: the occluding line is at or beyond the query point
        dist = np.hypot(dx, dy)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(den != 0, num / den, np.inf)
        return (dist == 0) | (t >= 1.0 - EPS_GEO / np.maximum(dist, EPS_GEO))


def _boundary_segments(scene: SceneModel):
    w, h = scene.extent
    return [(0.0, 0.0, w, 0.0), (w, 0.0, w, h), (w, h, 0.0, h), (0.0, h, 0.0, 0.0)]


def sweep_visibility_polygon(tx, scene: SceneModel) -> VisibilityPolygon:
    """Exact visibility polygon of ``tx`` in O(m log m)."""
    tx = (float(tx[0]), float(tx[1]))
    check_tx(tx, scene)
    n_build = len(scene.edges)
    segs = list(scene.edges) + _boundary_segments(scene)
    tx0, ty0 = tx
    events: dict[float, tuple[list[int], list[int]]] = {}
    spans = {}
    for eid, (ax, ay, bx, by) in enumerate(segs):
        dax, day = ax - tx0, ay - ty0
        dbx, dby = bx - tx0, by - ty0
        c = dax * dby - day * dbx
        if abs(c) <= EPS_GEO * math.hypot(dax, day) * math.hypot(dbx, dby):
            continue  # edge collinear with tx: zero angular extent
        if c < 0:
            dax, day, dbx, dby = dbx, dby, dax, day
            segs[eid] = (bx, by, ax, ay)
        s = _angle(dax, day)
        e = _angle(dbx, dby)
        spans[eid] = (s, e)
        events.setdefault(s, ([], []))[1].append(eid)
        events.setdefault(e, ([], []))[0].append(eid)
    angles = sorted(events)
    k = len(angles)

    def mid(j):
        a0 = angles[j]
        a1 = angles[j + 1] if j + 1 < k else angles[0] + TWO_PI
        return 0.5 * (a0 + a1)

    active = _ActiveEdges(tx, segs)
    m0 = mid(0)
    active.set_direction(m0)
    for eid, (s, e) in spans.items():
        if (m0 - s) % TWO_PI < (e - s) % TWO_PI:
            active.push(eid)
    tops = [active.top()]
    for j in range(1, k):
        ends, starts = events[angles[j]]
        # removals compare while every heap member still spans the ray
        active.set_direction(mid(j - 1))
        for eid in ends:
            active.remove(eid)
        active.set_direction(mid(j))
        for eid in starts:
            active.push(eid)
        tops.append(active.top())

    starts_out, ids = [], []
    for j in range(k):
        if ids and ids[-1] == tops[j]:
            continue
        starts_out.append(angles[j])
        ids.append(tops[j])
    if len(ids) > 1 and ids[0] == ids[-1]:
        # angles below the new starts[0] already map to the last piece
        starts_out.pop(0)
        ids.pop(0)
    seg_arr = np.asarray([segs[i] for i in ids], dtype=float).reshape(-1, 4)
    edge_ids = np.asarray([i if i < n_build else -1 - (i - n_build) for i in ids])
    return VisibilityPolygon(tx, np.asarray(starts_out), seg_arr[:, :2], seg_arr[:, 2:], edge_ids)


def exact_los_map(tx, scene: SceneModel, polygon: VisibilityPolygon | None = None) -> np.ndarray:
    """Binary H x W LoS raster from the sweep polygon, tested at pixel centers."""
    if polygon is None:
        polygon = sweep_visibility_polygon(tx, scene)
    X, Y = scene.pixel_centers()
    vis = polygon.contains(X, Y)
    vis &= scene.occupancy == 0
    return vis.astype(np.uint8)


# -- vertex attributes ----------------------------------------------------------------

@dataclass
class VertexAttributes:
    """Per-vertex visibility flag and projection point for one transmitter."""

    tx: tuple[float, float]
    positions: np.ndarray
    visible: np.ndarray
    projection: np.ndarray
    open_boundary: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.visible = np.asarray(self.visible, dtype=bool)
        self.projection = np.asarray(self.projection, dtype=float).reshape(-1, 2)
        if self.open_boundary is None:
            self.open_boundary = np.zeros(len(self.visible), dtype=bool)
        self.open_boundary = np.asarray(self.open_boundary, dtype=bool)

    def __len__(self):
        return len(self.visible)

    def copy(self) -> "VertexAttributes":
        return VertexAttributes(self.tx, self.positions.copy(), self.visible.copy(),
                                self.projection.copy(), self.open_boundary.copy())

    def boundary_count(self) -> int:
        moved = np.any(self.projection != self.positions, axis=1)
        return int(np.count_nonzero(self.visible & moved))

    def to_text(self) -> str:
        lines = [f"# tx {self.tx[0]!r} {self.tx[1]!r}"]
        for i in range(len(self)):
            x, y = self.positions[i]
            px, py = self.projection[i]
            lines.append(f"{i} {float(x)!r} {float(y)!r} {int(self.visible[i])} "
                         f"{float(px)!r} {float(py)!r} {int(self.open_boundary[i])}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def is_silhouette(vid: int, tx, scene: SceneModel) -> bool:
    """Both footprint neighbours of the vertex lie on one side of the ray tx->v,
    so the ray grazes the footprint instead of entering it."""
    vx, vy = scene.vertices[vid]
    dx, dy = vx - tx[0], vy - tx[1]
    signs = []
    for nb in scene.vertex_neighbors(vid):
        wx, wy = scene.vertices[nb][0] - tx[0], scene.vertices[nb][1] - tx[1]
        c = dx * wy - dy * wx
        if abs(c) > EPS_GEO * math.hypot(dx, dy) * math.hypot(wx, wy):
            signs.append(c > 0)
    return len(signs) > 0 and all(s == signs[0] for s in signs)


def grid_exit_point(origin, through, scene: SceneModel):
    d = (through[0] - origin[0], through[1] - origin[1])
    t = grid_exit_param(origin, d, scene)
    return (origin[0] + t * d[0], origin[1] + t * d[1]), t


def exact_vertex_attributes(tx, scene: SceneModel) -> VertexAttributes:
    """Exact visibility labels and projection points for every vertex.

    A visible vertex gets a projection only when it is a silhouette vertex;
    otherwise the ray beyond it enters its own footprint and the projection
    defaults to the vertex itself.
    """
    tx = (float(tx[0]), float(tx[1]))
    check_tx(tx, scene)
    m = scene.n_vertices
    pos = np.asarray(scene.vertices, dtype=float).reshape(-1, 2)
    visible = np.zeros(m, dtype=bool)
    proj = pos.copy()
    open_b = np.zeros(m, dtype=bool)
    for vid in range(m):
        v = scene.vertices[vid]
        if v == tx:
            continue
        inc = frozenset(scene.incident_edges(vid))
        if segment_hits_building(tx, v, scene, ignore=inc):
            continue
        visible[vid] = True
        if not is_silhouette(vid, tx, scene):
            continue
        hit = ray_first_edge_hit(tx, v, scene, min_t=1.0, ignore=inc)
        if hit is None:
            p, _ = grid_exit_point(tx, v, scene)
            open_b[vid] = True
        else:
            p = hit[2]
        proj[vid] = p
    return VertexAttributes(tx, pos, visible, proj, open_b)


def parse_vertex_attributes(text: str, n_vertices: int | None = None) -> VertexAttributes:
    tx = None
    normalized = None
    rows = {}
    for ln in text.splitlines():
        s = ln.strip()
        if not s:
            continue
        if s.startswith("#"):
            tok = s[1:].split()
            if tok and tok[0] == "tx":
                tx = (float(tok[1]), float(tok[2]))
            elif tok and tok[0] == "normalized":
                normalized = (float(tok[1]), float(tok[2]))
            continue
        tok = s.split()
        if len(tok) != 7:
            raise SceneParseError(f"bad attribute record: {s!r}")
        vid = int(tok[0])
        if vid in rows:
            raise SceneParseError(f"duplicate vertex id {vid}")
        rows[vid] = (float(tok[1]), float(tok[2]), int(tok[3]), float(tok[4]), float(tok[5]), int(tok[6]))
    if tx is None:
        raise SceneParseError("missing '# tx x y' header")
    n = n_vertices if n_vertices is not None else len(rows)
    missing = [i for i in range(n) if i not in rows]
    if missing or len(rows) != n:
        raise SceneParseError(f"vertex ids missing or out of range (missing: {missing[:5]})")
    arr = np.array([rows[i] for i in range(n)], dtype=float).reshape(-1, 6)
    proj = arr[:, 3:5].copy()
    if normalized is not None:
        proj[:, 0] *= normalized[0]
        proj[:, 1] *= normalized[1]
    return VertexAttributes(tx, arr[:, 0:2], arr[:, 2] != 0, proj, arr[:, 5] != 0)


# -- vertex adjacency -------------------------------------------------------------

class VisibilityAdjacency:
    """Symmetric vertex-to-vertex visibility relation."""

    def __init__(self, n: int):
        self.neighbors: list[set[int]] = [set() for _ in range(n)]

    def __call__(self, u: int, v: int) -> bool:
        return v in self.neighbors[u]

    def __len__(self):
        return len(self.neighbors)

    def add(self, u: int, v: int) -> None:
        self.neighbors[u].add(v)
        self.neighbors[v].add(u)


def vertex_adjacency(scene: SceneModel) -> VisibilityAdjacency:
    """adjacency(u, v) iff the open segment (u, v) is clear of every edge not
    incident to u or v and of every footprint interior."""
    m = scene.n_vertices
    adj = VisibilityAdjacency(m)
    verts = scene.vertices
    inc = [frozenset(scene.incident_edges(v)) for v in range(m)]
    for u in range(m):
        pu = verts[u]
        for v in range(u + 1, m):
            pv = verts[v]
            if pu == pv:
                continue
            if not segment_hits_building(pu, pv, scene, ignore=inc[u] | inc[v]):
                adj.add(u, v)
    return adj
