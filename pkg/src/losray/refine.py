"""LoS reconstruction from sparse vertex attributes.

Predicted projection points are snapped to the nearest building edge and
refined by intersecting the transmitter->vertex ray with that edge.  The
resulting boundary segments split the plane into angular sectors; inside a
sector only one footprint can be the first occluder, so a pixel is visible
unless its ray from the transmitter crosses that sector's occluder.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .scene import (
    EPS_GEO,
    SceneModel,
    SceneParseError,
    cross,
    point_segment_distance,
    ray_first_edge_hit,
    segment_hits_building,
)
from .sweep import TWO_PI, VertexAttributes, check_tx, grid_exit_point, is_silhouette, parse_vertex_attributes

log = logging.getLogger(__name__)

DEFAULT_SEARCH_RADIUS = 5.0


@dataclass
class BoundarySegment:
    vertex_id: int
    anchor: tuple[float, float]
    terminator: tuple[float, float]
    angle: float
    # terminating edge id; -1 for the grid boundary, None when unknown
    edge_id: Optional[int]
    status: str  # "snapped", "raw" or "recast"
    anchor_building: int
    anchor_ccw: bool
    anchor_cw: bool
    far_building: Optional[int]


@dataclass
class LosBoundary:
    tx: tuple[float, float]
    segments: list[BoundarySegment] = field(default_factory=list)

    @property
    def boundary_vertex_count(self) -> int:
        return len(self.segments)

    @property
    def angles(self) -> np.ndarray:
        return np.array([s.angle for s in self.segments], dtype=float)


def load_predictions(path, scene: SceneModel) -> VertexAttributes:
    """Read a vertex-attribute file (same format as the exact export)."""
    attrs = parse_vertex_attributes(Path(path).read_text(), scene.n_vertices)
    w, h = scene.extent
    p = attrs.projection
    if np.any(p[:, 0] < -EPS_GEO) or np.any(p[:, 0] > w + EPS_GEO) or \
            np.any(p[:, 1] < -EPS_GEO) or np.any(p[:, 1] > h + EPS_GEO):
        raise SceneParseError("projection coordinates outside the grid")
    return attrs


def perturb_attributes(attrs: VertexAttributes, noise_radius: float, flip_rate: float,
                       rng_seed: int) -> VertexAttributes:
    """Synthetic prediction error: uniform-disk offsets on every projection and
    independent visibility flips in both directions."""
    if noise_radius < 0 or not 0.0 <= flip_rate <= 1.0:
        raise ValueError("noise_radius must be >= 0 and flip_rate in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    m = len(attrs)
    r = noise_radius * np.sqrt(rng.random(m))
    th = TWO_PI * rng.random(m)
    flips = rng.random(m) < flip_rate
    off = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
    out = attrs.copy()
    out.projection = attrs.projection + off
    new_vis = attrs.visible ^ flips
    to_vis = flips & new_vis
    to_hidden = flips & ~new_vis
    out.projection[to_vis] = attrs.positions[to_vis] + off[to_vis]
    out.projection[to_hidden] = attrs.positions[to_hidden]
    out.visible = new_vis
    return out


def _nearest_edge(p, scene: SceneModel, radius: float) -> Optional[int]:
    best, best_d = None, math.inf
    for eid in sorted(scene.edge_index.query_disk(p, radius)):
        d = point_segment_distance(p[0], p[1], *scene.edges[eid])
        if d <= radius and d < best_d:
            best, best_d = eid, d
    return best


def _nearest_occluder(p, scene: SceneModel) -> Optional[int]:
    """Building owning the edge nearest to p, or None when the grid boundary
    is nearer than any building edge."""
    w, h = scene.extent
    d_grid = min(p[0], w - p[0], p[1], h - p[1])
    radius = scene.edge_index.cell_size
    while True:
        eid = _nearest_edge(p, scene, min(radius, d_grid))
        if eid is not None:
            return scene.edge_building[eid]
        if radius >= d_grid:
            return None
        radius *= 2.0


def _sides(vid: int, tx, scene: SceneModel) -> tuple[bool, bool]:
    """Whether the anchor's own footprint lies counter-clockwise / clockwise of
    the ray tx->v next to the anchor."""
    vx, vy = scene.vertices[vid]
    dx, dy = vx - tx[0], vy - tx[1]
    ccw = cw = False
    for nb in scene.vertex_neighbors(vid):
        wx, wy = scene.vertices[nb][0] - tx[0], scene.vertices[nb][1] - tx[1]
        c = cross(dx, dy, wx, wy)
        if abs(c) <= EPS_GEO * math.hypot(dx, dy) * math.hypot(wx, wy):
            continue
        if c > 0:
            ccw = True
        else:
            cw = True
    return ccw, cw


def _refine_one(vid, tx, pred, scene: SceneModel, search_radius: float):
    """Returns (terminator, edge_id, status) or None when the vertex drops out."""
    v = scene.vertices[vid]
    dx, dy = v[0] - tx[0], v[1] - tx[1]
    dlen = math.hypot(dx, dy)
    inc = frozenset(scene.incident_edges(vid))
    term, edge, status = None, None, "raw"
    eid = _nearest_edge(pred, scene, search_radius)
    if eid is not None:
        ax, ay, bx, by = scene.edges[eid]
        sx, sy = bx - ax, by - ay
        slen = math.hypot(sx, sy)
        den = cross(dx, dy, sx, sy)
        if abs(den) > EPS_GEO * dlen * slen:
            t = cross(ax - tx[0], ay - tx[1], sx, sy) / den
            px, py = tx[0] + t * dx, tx[1] + t * dy
            u = ((px - ax) * sx + (py - ay) * sy) / (slen * slen)
            eu = EPS_GEO / slen
            if t > 1.0 + EPS_GEO / dlen and -eu <= u <= 1.0 + eu:
                term, edge, status = (px, py), eid, "snapped"
    if term is None:
        # raw prediction, kept on the tx->v ray so the segment stays radial
        t_raw = ((pred[0] - tx[0]) * dx + (pred[1] - tx[1]) * dy) / (dlen * dlen)
        if t_raw <= 1.0 + EPS_GEO / dlen:
            return None
        exit_pt, t_grid = grid_exit_point(tx, v, scene)
        if t_raw >= t_grid:
            term, edge = exit_pt, -1
        else:
            term = (tx[0] + t_raw * dx, tx[1] + t_raw * dy)
    ignore = inc | {edge} if edge is not None and edge >= 0 else inc
    if segment_hits_building(v, term, scene, ignore=ignore):
        hit = ray_first_edge_hit(tx, v, scene, min_t=1.0, ignore=inc)
        if hit is None:
            term, _ = grid_exit_point(tx, v, scene)
            edge = -1
        else:
            edge, _, term = hit
        status = "recast"
    if term == v:
        return None
    return term, edge, status


def snap_and_refine(attrs: VertexAttributes, scene: SceneModel,
                    search_radius: float = DEFAULT_SEARCH_RADIUS) -> LosBoundary:
    """Snap predicted projections to edges and build the angular boundary."""
    tx = (float(attrs.tx[0]), float(attrs.tx[1]))
    check_tx(tx, scene)
    segs: list[BoundarySegment] = []
    for vid in np.flatnonzero(attrs.visible).tolist():
        v = scene.vertices[vid]
        pred = (float(attrs.projection[vid, 0]), float(attrs.projection[vid, 1]))
        if pred == v or not is_silhouette(vid, tx, scene):
            # the ray past a non-silhouette vertex enters its own footprint
            continue
        res = _refine_one(vid, tx, pred, scene, search_radius)
        if res is None:
            continue
        term, edge, status = res
        if edge is None:
            far = _nearest_occluder(term, scene)
        elif edge < 0:
            far = None
        else:
            far = scene.edge_building[edge]
        ccw, cw = _sides(vid, tx, scene)
        ang = math.atan2(v[1] - tx[1], v[0] - tx[0]) % TWO_PI
        segs.append(BoundarySegment(vid, v, (float(term[0]), float(term[1])), ang, edge, status,
                                    scene.vertex_building[vid], ccw, cw, far))
    segs.sort(key=lambda s: (s.angle, math.hypot(s.anchor[0] - tx[0], s.anchor[1] - tx[1]), s.vertex_id))
    return LosBoundary(tx, segs)


def sector_occluders(boundary: LosBoundary) -> np.ndarray:
    """(M, 2) building ids occluding sector k = [angle_k, angle_{k+1}); -1 for none.

    Column 0 comes from the counter-clockwise side of segment k, column 1 from
    the clockwise side of segment k+1.
    """
    segs = boundary.segments
    M = len(segs)
    occ = np.full((M, 2), -1, dtype=int)
    for k in range(M):
        s0 = segs[k]
        s1 = segs[(k + 1) % M]
        if s0.anchor_ccw:
            occ[k, 0] = s0.anchor_building
        elif s0.far_building is not None:
            occ[k, 0] = s0.far_building
        if s1.anchor_cw:
            occ[k, 1] = s1.anchor_building
        elif s1.far_building is not None:
            occ[k, 1] = s1.far_building
    return occ


def _blocked_by(tx, px, py, bids, scene: SceneModel) -> np.ndarray:
    """Open segment tx->p crosses any edge of building bids[i] (vectorized)."""
    E = scene.building_edge_array[bids]  # (P, K, 4)
    rx = (px - tx[0])[:, None]
    ry = (py - tx[1])[:, None]
    ax, ay, bx, by = E[..., 0], E[..., 1], E[..., 2], E[..., 3]
    sx, sy = bx - ax, by - ay
    apx, apy = ax - tx[0], ay - tx[1]
    den = rx * sy - ry * sx
    rlen = np.hypot(rx, ry)
    slen = np.hypot(sx, sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (apx * sy - apy * sx) / den
        u = (apx * ry - apy * rx) / den
        et = EPS_GEO / rlen
        eu = EPS_GEO / slen
        hit = (np.abs(den) > EPS_GEO * rlen * slen) & (t > et) & (t < 1 - et) & (u >= -eu) & (u <= 1 + eu)
    return np.any(hit, axis=1)


def rasterize_boundary(boundary: LosBoundary, scene: SceneModel) -> np.ndarray:
    """Binary H x W LoS raster from the sorted angular boundary."""
    X, Y = scene.pixel_centers()
    free = scene.occupancy == 0
    M = boundary.boundary_vertex_count
    if M == 0:
        return free.astype(np.uint8)
    tx = boundary.tx
    px, py = X.ravel(), Y.ravel()
    ang = np.mod(np.arctan2(py - tx[1], px - tx[0]), TWO_PI)
    sector = np.searchsorted(boundary.angles, ang, side="right") - 1
    sector[sector < 0] = M - 1
    occ = sector_occluders(boundary)
    blocked = np.zeros(px.shape, dtype=bool)
    for col in (0, 1):
        bids = occ[sector, col]
        sel = bids >= 0
        if col == 1:
            # skip pixels whose sector names the same occluder twice
            sel &= bids != occ[sector, 0]
        if not sel.any():
            continue
        idx = np.flatnonzero(sel)
        blocked[idx] |= _blocked_by(tx, px[idx], py[idx], bids[idx], scene)
    vis = ~blocked.reshape(X.shape) & free
    return vis.astype(np.uint8)


def reconstruct_los(attrs: VertexAttributes, scene: SceneModel,
                    search_radius: float = DEFAULT_SEARCH_RADIUS) -> np.ndarray:
    boundary = snap_and_refine(attrs, scene, search_radius)
    if boundary.boundary_vertex_count == 0 and scene.buildings:
        log.warning("no boundary vertices for tx=%s; map is unoccluded", boundary.tx)
    return rasterize_boundary(boundary, scene)


def los_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union
