"""Scene model, spatial edge index and the shared geometric primitives.

Buildings are 2.5D prisms: a simple polygonal footprint (stored CCW) extruded
to a uniform height.  All coordinates are continuous meters; the pixel grid is
only a rasterization target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

EPS_GEO = 1e-9
INDEX_CELL_SIZE = 8.0
# slack used when registering edges in index cells, so that intersections
# lying on a cell boundary are found from either side
_REGISTER_SLACK = 1e-6


class SceneError(Exception):
    """Base class for scene ingestion and geometry errors."""


class SceneParseError(SceneError):
    pass


class OverlappingFootprintsError(SceneError):
    pass


class VertexOutsideGridError(SceneError):
    pass


class NonSimplePolygonError(SceneError):
    pass


class TxInsideBuildingError(SceneError):
    pass


Point = tuple[float, float]


def cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def signed_area(pts: Sequence[Point]) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def point_segment_distance(px, py, ax, ay, bx, by) -> float:
    sx, sy = bx - ax, by - ay
    L2 = sx * sx + sy * sy
    if L2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * sx + (py - ay) * sy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - ax - t * sx, py - ay - t * sy)


def open_segment_hits_edge(px, py, qx, qy, ax, ay, bx, by, eps=EPS_GEO) -> bool:
    """True if the open segment (p, q) meets the closed segment [a, b].

    Touching at p or q does not count; grazing through a or b does.
    """
    rx, ry = qx - px, qy - py
    sx, sy = bx - ax, by - ay
    rlen = math.hypot(rx, ry)
    slen = math.hypot(sx, sy)
    if rlen == 0.0 or slen == 0.0:
        return False
    apx, apy = ax - px, ay - py
    denom = rx * sy - ry * sx
    et = eps / rlen
    if abs(denom) <= eps * rlen * slen:
        # parallel; only a collinear overlap inside the open segment blocks
        if abs(cross(apx, apy, rx, ry)) > eps * rlen:
            return False
        r2 = rlen * rlen
        ta = (apx * rx + apy * ry) / r2
        tb = ((bx - px) * rx + (by - py) * ry) / r2
        lo, hi = min(ta, tb), max(ta, tb)
        return hi > et and lo < 1.0 - et and max(lo, et) < min(hi, 1.0 - et)
    t = cross(apx, apy, sx, sy) / denom
    u = cross(apx, apy, rx, ry) / denom
    eu = eps / slen
    return et < t < 1.0 - et and -eu <= u <= 1.0 + eu


def segment_crossing_params(px, py, qx, qy, edges, eps=EPS_GEO) -> list[float]:
    """Parameters t along p->q (unclipped) where the segment meets the edges."""
    rx, ry = qx - px, qy - py
    rlen = math.hypot(rx, ry)
    out = []
    for ax, ay, bx, by in edges:
        sx, sy = bx - ax, by - ay
        slen = math.hypot(sx, sy)
        apx, apy = ax - px, ay - py
        denom = rx * sy - ry * sx
        if abs(denom) <= eps * rlen * slen:
            if abs(cross(apx, apy, rx, ry)) <= eps * rlen:
                r2 = rlen * rlen
                out.append((apx * rx + apy * ry) / r2)
                out.append(((bx - px) * rx + (by - py) * ry) / r2)
            continue
        u = cross(apx, apy, rx, ry) / denom
        eu = eps / slen
        if -eu <= u <= 1.0 + eu:
            out.append(cross(apx, apy, sx, sy) / denom)
    return out


def point_in_polygon(x: float, y: float, pts: Sequence[Point], eps=EPS_GEO) -> bool:
    """Strict interior test: points on the boundary (within eps) are outside."""
    n = len(pts)
    inside = False
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        if point_segment_distance(x, y, ax, ay, bx, by) <= eps:
            return False
        if (ay > y) != (by > y):
            xc = ax + (y - ay) * (bx - ax) / (by - ay)
            if xc > x:
                inside = not inside
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, pts: Sequence[Point]) -> np.ndarray:
    """Vectorized even-odd test (boundary handling unspecified)."""
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        if ay == by:
            continue
        cond = (ay > ys) != (by > ys)
        xc = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (xc > xs)
    return inside


def polygon_intervals(p: Point, q: Point, pts: Sequence[Point], eps=EPS_GEO) -> list[tuple[float, float]]:
    """Maximal parameter intervals of t in (0, 1) where p + t(q - p) lies
    strictly inside the polygon, ascending."""
    px, py = p
    qx, qy = q
    n = len(pts)
    edges = [(*pts[i], *pts[(i + 1) % n]) for i in range(n)]
    ts = [t for t in segment_crossing_params(px, py, qx, qy, edges, eps) if 0.0 < t < 1.0]
    ts = sorted(set([0.0, 1.0] + ts))
    rx, ry = qx - px, qy - py
    out: list[tuple[float, float]] = []
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if t1 - t0 <= 1e-15:
            continue
        tm = 0.5 * (t0 + t1)
        if point_in_polygon(px + tm * rx, py + tm * ry, pts, eps):
            if out and abs(out[-1][1] - t0) <= 1e-15:
                out[-1] = (out[-1][0], t1)
            else:
                out.append((t0, t1))
    return out


@dataclass(frozen=True)
class Building:
    footprint: tuple[Point, ...]
    height: float
    material_index: int = 0

    def __post_init__(self):
        if len(self.footprint) < 3:
            raise SceneParseError("footprint needs at least 3 vertices")
        if not self.height > 0:
            raise SceneParseError(f"building height must be positive, got {self.height}")
        area = signed_area(self.footprint)
        if area == 0.0:
            raise NonSimplePolygonError("degenerate footprint with zero area")
        if area < 0:
            object.__setattr__(self, "footprint", tuple(reversed(self.footprint)))

    @property
    def area(self) -> float:
        return signed_area(self.footprint)

    def edges(self) -> list[tuple[float, float, float, float]]:
        fp = self.footprint
        n = len(fp)
        return [(*fp[i], *fp[(i + 1) % n]) for i in range(n)]

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.footprint]
        ys = [p[1] for p in self.footprint]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Edge:
    a: Point
    b: Point
    building_id: int
    edge_ordinal: int


class UniformGridIndex:
    """Uniform grid of square cells mapping cell coordinates to edge ids."""

    def __init__(self, cell_size: float = INDEX_CELL_SIZE):
        self.cell_size = float(cell_size)
        self.cells: dict[tuple[int, int], list[int]] = {}

    def __len__(self):
        return len(self.cells)

    def insert(self, edge_id: int, a: Point, b: Point) -> None:
        cs = self.cell_size
        x0 = math.floor((min(a[0], b[0]) - _REGISTER_SLACK) / cs)
        x1 = math.floor((max(a[0], b[0]) + _REGISTER_SLACK) / cs)
        y0 = math.floor((min(a[1], b[1]) - _REGISTER_SLACK) / cs)
        y1 = math.floor((max(a[1], b[1]) + _REGISTER_SLACK) / cs)
        for i in range(x0, x1 + 1):
            for j in range(y0, y1 + 1):
                self.cells.setdefault((i, j), []).append(edge_id)

    def walk(self, p: Point, d: tuple[float, float], t_max: float) -> Iterator[tuple[tuple[int, int], float]]:
        """Visit cells crossed by p + t*d for t in [0, t_max], in order.

        Yields (cell, t_exit) with t_exit the parameter where the walk leaves
        the cell (clipped to t_max).
        """
        cs = self.cell_size
        i = math.floor(p[0] / cs)
        j = math.floor(p[1] / cs)
        dx, dy = d
        if dx > 0:
            step_i, t_max_x, t_dx = 1, ((i + 1) * cs - p[0]) / dx, cs / dx
        elif dx < 0:
            step_i, t_max_x, t_dx = -1, (i * cs - p[0]) / dx, -cs / dx
        else:
            step_i, t_max_x, t_dx = 0, math.inf, math.inf
        if dy > 0:
            step_j, t_max_y, t_dy = 1, ((j + 1) * cs - p[1]) / dy, cs / dy
        elif dy < 0:
            step_j, t_max_y, t_dy = -1, (j * cs - p[1]) / dy, -cs / dy
        else:
            step_j, t_max_y, t_dy = 0, math.inf, math.inf
        while True:
            t_exit = min(t_max_x, t_max_y)
            if t_exit >= t_max:
                yield (i, j), t_max
                return
            yield (i, j), t_exit
            if t_max_x < t_max_y:
                i += step_i
                t_max_x += t_dx
            else:
                j += step_j
                t_max_y += t_dy

    def query_segment(self, p: Point, q: Point) -> set[int]:
        d = (q[0] - p[0], q[1] - p[1])
        out: set[int] = set()
        for cell, _ in self.walk(p, d, 1.0):
            ids = self.cells.get(cell)
            if ids:
                out.update(ids)
        return out

    def query_disk(self, c: Point, radius: float) -> set[int]:
        cs = self.cell_size
        out: set[int] = set()
        for i in range(math.floor((c[0] - radius) / cs), math.floor((c[0] + radius) / cs) + 1):
            for j in range(math.floor((c[1] - radius) / cs), math.floor((c[1] + radius) / cs) + 1):
                ids = self.cells.get((i, j))
                if ids:
                    out.update(ids)
        return out


@dataclass(frozen=True)
class SceneModel:
    grid_height: int
    grid_width: int
    resolution: float
    buildings: tuple[Building, ...] = ()
    edge_index: UniformGridIndex = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.grid_height < 2 or self.grid_width < 2:
            raise SceneParseError("grid must be at least 2x2")
        if not self.resolution > 0:
            raise SceneParseError("resolution must be positive")
        object.__setattr__(self, "buildings", tuple(self.buildings))
        if self.edge_index is None:
            index = UniformGridIndex()
            for eid, (ax, ay, bx, by) in enumerate(self.edges):
                index.insert(eid, (ax, ay), (bx, by))
            object.__setattr__(self, "edge_index", index)

    # -- derived tables -------------------------------------------------
    @property
    def extent(self) -> tuple[float, float]:
        return self.grid_width * self.resolution, self.grid_height * self.resolution

    @cached_property
    def _tables(self):
        edges, edge_building, vertices, vertex_building = [], [], [], []
        offsets = []
        for bid, b in enumerate(self.buildings):
            offsets.append(len(vertices))
            for pt in b.footprint:
                vertices.append(pt)
                vertex_building.append(bid)
            for e in b.edges():
                edges.append(e)
                edge_building.append(bid)
        offsets.append(len(vertices))
        return edges, edge_building, vertices, vertex_building, offsets

    @property
    def edges(self) -> list[tuple[float, float, float, float]]:
        """Edge table as (ax, ay, bx, by); edge k of building i runs from
        vertex k to vertex k+1, and shares its global id with vertex k."""
        return self._tables[0]

    @property
    def edge_building(self) -> list[int]:
        return self._tables[1]

    @property
    def vertices(self) -> list[Point]:
        return self._tables[2]

    @property
    def vertex_building(self) -> list[int]:
        return self._tables[3]

    @property
    def building_offsets(self) -> list[int]:
        return self._tables[4]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edge(self, eid: int) -> Edge:
        ax, ay, bx, by = self.edges[eid]
        bid = self.edge_building[eid]
        return Edge((ax, ay), (bx, by), bid, eid - self.building_offsets[bid])

    def vertex_neighbors(self, vid: int) -> tuple[int, int]:
        """(previous, next) vertex ids along the owning footprint."""
        bid = self.vertex_building[vid]
        lo, hi = self.building_offsets[bid], self.building_offsets[bid + 1]
        n = hi - lo
        k = vid - lo
        return lo + (k - 1) % n, lo + (k + 1) % n

    def incident_edges(self, vid: int) -> tuple[int, int]:
        """(incoming, outgoing) edge ids at a vertex."""
        prev, _ = self.vertex_neighbors(vid)
        return prev, vid

    def building_edge_ids(self, bid: int) -> range:
        return range(self.building_offsets[bid], self.building_offsets[bid + 1])

    @cached_property
    def edge_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=float).reshape(-1, 4)

    @cached_property
    def building_edge_array(self) -> np.ndarray:
        """(n_buildings, max_edges, 4) edge table padded with NaN."""
        k = max((len(b.footprint) for b in self.buildings), default=1)
        arr = np.full((max(len(self.buildings), 1), k, 4), np.nan)
        for bid, b in enumerate(self.buildings):
            e = b.edges()
            arr[bid, :len(e)] = e
        return arr

    @cached_property
    def occupancy(self) -> np.ndarray:
        """H x W raster, 1 where the pixel center lies inside a footprint."""
        H, W, dr = self.grid_height, self.grid_width, self.resolution
        occ = np.zeros((H, W), dtype=np.uint8)
        for b in self.buildings:
            x0, y0, x1, y1 = b.bbox()
            j0 = max(0, int(math.floor(x0 / dr - 0.5)))
            j1 = min(W - 1, int(math.ceil(x1 / dr - 0.5)))
            i0 = max(0, int(math.floor(y0 / dr - 0.5)))
            i1 = min(H - 1, int(math.ceil(y1 / dr - 0.5)))
            if j1 < j0 or i1 < i0:
                continue
            jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1))
            inside = points_in_polygon((jj + 0.5) * dr, (ii + 0.5) * dr, b.footprint)
            occ[i0:i1 + 1, j0:j1 + 1] |= inside.astype(np.uint8)
        return occ

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape H x W; row 0 is y = 0."""
        dr = self.resolution
        jj, ii = np.meshgrid(np.arange(self.grid_width), np.arange(self.grid_height))
        return (jj + 0.5) * dr, (ii + 0.5) * dr

    # -- queries ----------------------------------------------------------
    def building_containing(self, p: Point) -> Optional[int]:
        for bid, b in enumerate(self.buildings):
            x0, y0, x1, y1 = b.bbox()
            if x0 <= p[0] <= x1 and y0 <= p[1] <= y1 and point_in_polygon(p[0], p[1], b.footprint):
                return bid
        return None

    def inside_grid(self, p: Point, eps: float = EPS_GEO) -> bool:
        w, h = self.extent
        return -eps <= p[0] <= w + eps and -eps <= p[1] <= h + eps


# -- primitive queries ----------------------------------------------------

def _hits(p: Point, q: Point, scene: SceneModel, candidates: Iterable[int], ignore) -> bool:
    px, py = p
    qx, qy = q
    edges = scene.edges
    eb = scene.edge_building
    check_interior: set[int] = set()
    touched: dict[int, bool] = {}
    for eid in candidates:
        ax, ay, bx, by = edges[eid]
        bid = eb[eid]
        if eid in ignore:
            check_interior.add(bid)
            continue
        if open_segment_hits_edge(px, py, qx, qy, ax, ay, bx, by):
            return True
        if bid not in touched:
            touched[bid] = False
        if not touched[bid] and (
            point_segment_distance(px, py, ax, ay, bx, by) <= EPS_GEO
            or point_segment_distance(qx, qy, ax, ay, bx, by) <= EPS_GEO
        ):
            touched[bid] = True
            check_interior.add(bid)
    for bid in check_interior:
        if polygon_intervals(p, q, scene.buildings[bid].footprint):
            return True
    return False


def segment_hits_building(p: Point, q: Point, scene: SceneModel, ignore=frozenset()) -> bool:
    """True iff the open segment (p, q) meets a building edge not in ``ignore``
    or passes through a footprint interior.  Uses the edge index."""
    if p[0] == q[0] and p[1] == q[1]:
        return False
    return _hits(p, q, scene, scene.edge_index.query_segment(p, q), ignore)


def segment_hits_building_bruteforce(p: Point, q: Point, scene: SceneModel, ignore=frozenset()) -> bool:
    """Index-free scan over every edge; same semantics as segment_hits_building."""
    if p[0] == q[0] and p[1] == q[1]:
        return False
    return _hits(p, q, scene, range(len(scene.edges)), ignore)


def grid_exit_param(origin: Point, d: tuple[float, float], scene: SceneModel) -> float:
    """Largest t with origin + t*d still inside the grid extent."""
    w, h = scene.extent
    t = math.inf
    for o, dd, hi in ((origin[0], d[0], w), (origin[1], d[1], h)):
        if dd > 0:
            t = min(t, (hi - o) / dd)
        elif dd < 0:
            t = min(t, (0.0 - o) / dd)
    return max(t, 0.0)


def ray_first_edge_hit(origin: Point, through: Point, scene: SceneModel, min_t: float = 0.0,
                       ignore=frozenset()) -> Optional[tuple[int, float, Point]]:
    """First edge met by origin + t(through - origin) with t > min_t.

    Edges parallel to the ray are skipped.  Returns (edge_id, t, point) or None
    when the ray leaves the grid first.
    """
    ox, oy = origin
    dx, dy = through[0] - ox, through[1] - oy
    dlen = math.hypot(dx, dy)
    if dlen == 0.0:
        raise ValueError("origin and through must differ")
    t_grid = grid_exit_param(origin, (dx, dy), scene)
    if t_grid <= min_t:
        return None
    edges = scene.edges
    et = EPS_GEO / dlen
    best_t, best_e = math.inf, -1
    seen: set[int] = set()
    for cell, t_exit in scene.edge_index.walk(origin, (dx, dy), t_grid):
        for eid in scene.edge_index.cells.get(cell, ()):
            if eid in seen or eid in ignore:
                continue
            seen.add(eid)
            ax, ay, bx, by = edges[eid]
            sx, sy = bx - ax, by - ay
            slen = math.hypot(sx, sy)
            denom = dx * sy - dy * sx
            if abs(denom) <= EPS_GEO * dlen * slen:
                continue
            apx, apy = ax - ox, ay - oy
            u = cross(apx, apy, dx, dy) / denom
            eu = EPS_GEO / slen
            if not (-eu <= u <= 1.0 + eu):
                continue
            t = cross(apx, apy, sx, sy) / denom
            if t > min_t + et and (t < best_t or (t == best_t and eid < best_e)):
                best_t, best_e = t, eid
        if best_t <= t_exit + et:
            break
    if best_e < 0 or best_t > t_grid + et:
        return None
    return best_e, best_t, (ox + best_t * dx, oy + best_t * dy)


# -- validation and I/O -----------------------------------------------------

def _is_simple(b: Building) -> bool:
    edges = b.edges()
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            ax, ay, bx, by = edges[i]
            cx, cy, dx, dy = edges[j]
            # closed-segment intersection between non-adjacent edges
            if _closed_segments_meet(ax, ay, bx, by, cx, cy, dx, dy):
                return False
    return True


def _closed_segments_meet(ax, ay, bx, by, cx, cy, dx, dy, eps=EPS_GEO) -> bool:
    if point_segment_distance(ax, ay, cx, cy, dx, dy) <= eps or point_segment_distance(bx, by, cx, cy, dx, dy) <= eps:
        return True
    if point_segment_distance(cx, cy, ax, ay, bx, by) <= eps or point_segment_distance(dx, dy, ax, ay, bx, by) <= eps:
        return True
    d1 = cross(bx - ax, by - ay, cx - ax, cy - ay)
    d2 = cross(bx - ax, by - ay, dx - ax, dy - ay)
    d3 = cross(dx - cx, dy - cy, ax - cx, ay - cy)
    d4 = cross(dx - cx, dy - cy, bx - cx, by - cy)
    return (d1 > 0) != (d2 > 0) and (d3 > 0) != (d4 > 0)


def _proper_cross(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    d1 = cross(bx - ax, by - ay, cx - ax, cy - ay)
    d2 = cross(bx - ax, by - ay, dx - ax, dy - ay)
    d3 = cross(dx - cx, dy - cy, ax - cx, ay - cy)
    d4 = cross(dx - cx, dy - cy, bx - cx, by - cy)
    tol = EPS_GEO
    return ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
           ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol))


def interior_point(pts: Sequence[Point]) -> Point:
    """A point strictly inside a simple CCW polygon (midpoint of an ear diagonal
    or the centroid of a convex polygon)."""
    n = len(pts)
    cx = sum(p[0] for p in pts) / n
    cy = sum(p[1] for p in pts) / n
    if point_in_polygon(cx, cy, pts):
        return cx, cy
    for i in range(n):
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
        if cross(b[0] - a[0], b[1] - a[1], c[0] - b[0], c[1] - b[1]) <= 0:
            continue
        # centroid of a convex corner triangle, shrunk towards the corner
        for w in (1 / 3, 0.1, 0.01):
            x = b[0] + w * ((a[0] - b[0]) + (c[0] - b[0]))
            y = b[1] + w * ((a[1] - b[1]) + (c[1] - b[1]))
            if point_in_polygon(x, y, pts):
                return x, y
    raise NonSimplePolygonError("could not locate an interior point")


def _footprints_overlap(a: Building, b: Building) -> bool:
    ax0, ay0, ax1, ay1 = a.bbox()
    bx0, by0, bx1, by1 = b.bbox()
    if ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0:
        return False
    for e in a.edges():
        for f in b.edges():
            if _proper_cross(*e, *f):
                return True
    for p in a.footprint:
        if point_in_polygon(p[0], p[1], b.footprint):
            return True
    for p in b.footprint:
        if point_in_polygon(p[0], p[1], a.footprint):
            return True
    pa = interior_point(a.footprint)
    pb = interior_point(b.footprint)
    return point_in_polygon(pa[0], pa[1], b.footprint) or point_in_polygon(pb[0], pb[1], a.footprint)


def validate_scene(scene: SceneModel) -> None:
    w, h = scene.extent
    for bid, b in enumerate(scene.buildings):
        for x, y in b.footprint:
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise VertexOutsideGridError(f"building {bid}: vertex ({x}, {y}) outside grid")
        if not _is_simple(b):
            raise NonSimplePolygonError(f"building {bid}: footprint is not a simple polygon")
    # pairwise checks restricted to bbox-overlapping pairs via a coarse bucket grid
    buckets: dict[tuple[int, int], list[int]] = {}
    cs = 32.0
    for bid, b in enumerate(scene.buildings):
        x0, y0, x1, y1 = b.bbox()
        for i in range(int(x0 // cs), int(x1 // cs) + 1):
            for j in range(int(y0 // cs), int(y1 // cs) + 1):
                buckets.setdefault((i, j), []).append(bid)
    checked: set[tuple[int, int]] = set()
    for ids in buckets.values():
        for k, i in enumerate(ids):
            for j in ids[k + 1:]:
                key = (min(i, j), max(i, j))
                if key in checked:
                    continue
                checked.add(key)
                if _footprints_overlap(scene.buildings[i], scene.buildings[j]):
                    raise OverlappingFootprintsError(f"buildings {key[0]} and {key[1]} overlap")


def parse_scene(text: str) -> SceneModel:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise SceneParseError("empty scenario file")
    try:
        head = lines[0].split()
        if len(head) != 3:
            raise ValueError("header must be 'H W resolution'")
        H, W, res = int(head[0]), int(head[1]), float(head[2])
        buildings = []
        for ln in lines[1:]:
            tok = ln.split()
            height, mat, n = float(tok[0]), int(tok[1]), int(tok[2])
            coords = [float(v) for v in tok[3:]]
            if len(coords) != 2 * n:
                raise ValueError(f"expected {2 * n} coordinates, got {len(coords)}")
            pts = tuple((coords[2 * k], coords[2 * k + 1]) for k in range(n))
            buildings.append(Building(pts, height, mat))
    except SceneError:
        raise
    except (ValueError, IndexError) as exc:
        raise SceneParseError(str(exc)) from exc
    scene = SceneModel(H, W, res, tuple(buildings))
    validate_scene(scene)
    return scene


def load_scene(path) -> SceneModel:
    """Read and validate a scenario file; footprints are reoriented CCW."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return parse_scene(path.read_text())


def format_scene(scene: SceneModel) -> str:
    out = [f"{scene.grid_height} {scene.grid_width} {scene.resolution!r}"]
    for b in scene.buildings:
        coords = " ".join(f"{x!r} {y!r}" for x, y in b.footprint)
        out.append(f"{b.height!r} {b.material_index} {len(b.footprint)} {coords}")
    return "\n".join(out) + "\n"


def save_scene(scene: SceneModel, path) -> None:
    Path(path).write_text(format_scene(scene))


def write_grid(grid: np.ndarray, path, fmt: str = "{:d}") -> None:
    """ASCII raster: first line 'H W', then H rows (row 0 is y = 0)."""
    H, W = grid.shape
    rows = [f"{H} {W}"]
    for r in grid:
        rows.append(" ".join(fmt.format(v) for v in r.tolist()))
    Path(path).write_text("\n".join(rows) + "\n")


def read_grid(path, dtype=int) -> np.ndarray:
    lines = Path(path).read_text().split("\n")
    H, W = (int(v) for v in lines[0].split())
    data = np.array([[dtype(v) for v in ln.split()] for ln in lines[1:1 + H]])
    if data.shape != (H, W):
        raise SceneParseError(f"grid shape {data.shape} does not match header {(H, W)}")
    return data
