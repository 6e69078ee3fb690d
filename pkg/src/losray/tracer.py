"""Bounded-depth enumeration of reflection/diffraction paths.

Diffractions happen at convex footprint vertices, reflections at front-facing
edges.  The transmitter-side tree is built once: every prefix that ends in a
diffraction is fully resolved, prefixes ending in reflections keep their image
source and beam window.  Per receiver only the last leg is solved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .em import Interaction, describe_diffraction, describe_reflection, wedge_factor
from .scene import EPS_GEO, SceneModel, cross, segment_hits_building
from .sweep import VertexAttributes, VisibilityAdjacency, is_silhouette
from .vertical import LinkEndpoints, los_3d

DIFFRACTION = "D"
REFLECTION = "R"
DEFAULT_MAX_DEPTH = 4


@dataclass(frozen=True, order=True)
class InteractionNode:
    kind: str
    primitive_id: int
    material_index: int = 0


@dataclass
class PathCandidate:
    tx: tuple[float, float, float]
    rx: tuple[float, float, float]
    sequence: tuple[InteractionNode, ...]
    interaction_points: list[tuple[float, float, float]]

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return [self.tx, *self.interaction_points, self.rx]

    @property
    def length(self) -> float:
        p = np.asarray(self.points)
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())

    def key(self):
        return len(self.sequence), tuple((n.kind, n.primitive_id) for n in self.sequence)


# ---------------------------------------------------------------- geometry
def mirror(p, edge) -> tuple[float, float]:
    ax, ay, bx, by = edge
    dx, dy = bx - ax, by - ay
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / (dx * dx + dy * dy)
    fx, fy = ax + t * dx, ay + t * dy
    return 2.0 * fx - p[0], 2.0 * fy - p[1]


def front_distance(p, edge) -> float:
    """Signed distance of p from the edge line, positive outside the footprint
    (footprints are CCW, so the outside is to the right of a->b)."""
    ax, ay, bx, by = edge
    dx, dy = bx - ax, by - ay
    return -cross(dx, dy, p[0] - ax, p[1] - ay) / math.hypot(dx, dy)


def in_front(p, edge) -> bool:
    return front_distance(p, edge) > EPS_GEO


def _in_window(p, image, edge) -> bool:
    """p lies beyond the edge inside the wedge of rays from image through it."""
    if not in_front(p, edge):
        return False
    ax, ay, bx, by = edge
    ix, iy = image
    c_ab = cross(ax - ix, ay - iy, bx - ix, by - iy)
    c1 = cross(ax - ix, ay - iy, p[0] - ix, p[1] - iy)
    c2 = cross(p[0] - ix, p[1] - iy, bx - ix, by - iy)
    tol = EPS_GEO * abs(c_ab)
    if c_ab > 0:
        return c1 >= -tol and c2 >= -tol
    return c1 <= tol and c2 <= tol


def _edge_meets_window(edge2, image, edge) -> bool:
    """Conservative: some part of edge2 may lie inside the reflected beam."""
    cx, cy, dx, dy = edge2
    if not (in_front((cx, cy), edge) or in_front((dx, dy), edge)):
        return False
    if _in_window((cx, cy), image, edge) or _in_window((dx, dy), image, edge):
        return True
    # both endpoints outside: the segment may still cross the beam
    ax, ay, bx, by = edge
    ix, iy = image
    far = 1e6
    for ex, ey in ((ax, ay), (bx, by)):
        rx, ry = ex - ix, ey - iy
        n = math.hypot(rx, ry)
        qx, qy = ix + rx / n * far, iy + ry / n * far
        if _segments_cross(ex, ey, qx, qy, cx, cy, dx, dy):
            return True
    return False


def _segments_cross(ax, ay, bx, by, cx, cy, dx, dy) -> bool:
    d1 = cross(bx - ax, by - ay, cx - ax, cy - ay)
    d2 = cross(bx - ax, by - ay, dx - ax, dy - ay)
    d3 = cross(dx - cx, dy - cy, ax - cx, ay - cy)
    d4 = cross(dx - cx, dy - cy, bx - cx, by - cy)
    return (d1 >= 0) != (d2 >= 0) and (d3 >= 0) != (d4 >= 0)


def solve_run(start, edges: Sequence[tuple], end) -> Optional[list[tuple[float, float]]]:
    """Image-method reflection points for start -> edges... -> end, or None."""
    images = [tuple(start)]
    for e in edges:
        images.append(mirror(images[-1], e))
    pts = []
    p = tuple(end)
    for j in range(len(edges) - 1, -1, -1):
        ax, ay, bx, by = edges[j]
        ix, iy = images[j + 1]
        rx, ry = p[0] - ix, p[1] - iy
        sx, sy = bx - ax, by - ay
        den = cross(rx, ry, sx, sy)
        rlen, slen = math.hypot(rx, ry), math.hypot(sx, sy)
        if rlen == 0.0 or abs(den) <= EPS_GEO * rlen * slen:
            return None
        apx, apy = ax - ix, ay - iy
        t = cross(apx, apy, sx, sy) / den
        u = cross(apx, apy, rx, ry) / den
        if not (0.0 < t < 1.0) or u < -EPS_GEO / slen or u > 1.0 + EPS_GEO / slen:
            return None
        u = min(1.0, max(0.0, u))
        q = (ax + u * sx, ay + u * sy)
        pts.append(q)
        p = q
    pts.reverse()
    # every leg must approach and leave each wall from the outside
    chain = [tuple(start), *pts, tuple(end)]
    for j, e in enumerate(edges):
        if not (in_front(chain[j], e) and in_front(chain[j + 2], e)):
            return None
    return pts


def _primitive_ignore(node: InteractionNode, scene: SceneModel) -> frozenset:
    if node.kind == REFLECTION:
        return frozenset((node.primitive_id,))
    return frozenset(scene.incident_edges(node.primitive_id))


def _leg_clear(p, q, a: Optional[InteractionNode], b: Optional[InteractionNode], scene: SceneModel) -> bool:
    ignore = frozenset()
    if a is not None:
        ignore |= _primitive_ignore(a, scene)
    if b is not None:
        ignore |= _primitive_ignore(b, scene)
    return not segment_hits_building(p, q, scene, ignore=ignore)


def _points_2d(sequence, tx, rx, scene: SceneModel) -> Optional[list[tuple[float, float]]]:
    """2D interaction points for a sequence (no clearance checks)."""
    pts: list = []
    start = tuple(tx)
    run: list[int] = []
    for node in sequence:
        if node.kind == REFLECTION:
            run.append(node.primitive_id)
            continue
        v = scene.vertices[node.primitive_id]
        if run:
            sol = solve_run(start, [scene.edges[e] for e in run], v)
            if sol is None:
                return None
            pts.extend(sol)
        pts.append(v)
        start = v
        run = []
    if run:
        sol = solve_run(start, [scene.edges[e] for e in run], rx)
        if sol is None:
            return None
        pts.extend(sol)
    return pts


def _lift(points2d, tx3, rx3, sequence, scene: SceneModel):
    """Heights by linear interpolation along the cumulative 2D length; None if
    an interaction point ends up above its building."""
    chain = [tuple(tx3[:2]), *points2d, tuple(rx3[:2])]
    seg = [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(chain[:-1], chain[1:])]
    total = sum(seg)
    out = []
    s = 0.0
    for i, (p, node) in enumerate(zip(points2d, sequence)):
        s += seg[i]
        z = tx3[2] + (rx3[2] - tx3[2]) * (s / total if total > 0 else 0.0)
        bid = scene.vertex_building[node.primitive_id] if node.kind == DIFFRACTION else scene.edge_building[node.primitive_id]
        if z > scene.buildings[bid].height:
            return None
        out.append((float(p[0]), float(p[1]), float(z)))
    return out


def resolve_reflection_geometry(sequence: Sequence[InteractionNode], tx, rx, scene: SceneModel):
    """3D interaction points for a sequence, or None when the image method has
    no solution on the edge segments or a point lies above its roof."""
    if not sequence:
        raise ValueError("empty sequence")
    p2 = _points_2d(sequence, tx[:2], rx[:2], scene)
    if p2 is None:
        return None
    return _lift(p2, tx, rx, sequence, scene)


def validate_path(path: PathCandidate, scene: SceneModel) -> bool:
    """Sub-segment clearance of a resolved candidate.  A 2D-clear leg never
    enters a footprint, so it also clears every prism; heights only matter at
    the interaction points, which _lift already bounds by the roof."""
    pts = [p[:2] for p in path.points]
    nodes = [None, *path.sequence, None]
    if not path.sequence:
        return los_3d(LinkEndpoints.from_3d(path.tx, path.rx), scene)
    return all(_leg_clear(pts[i], pts[i + 1], nodes[i], nodes[i + 1], scene) for i in range(len(pts) - 1))


# ---------------------------------------------------------------- visibility tree
def convex_vertices(scene: SceneModel) -> np.ndarray:
    """Vertices whose exterior wedge factor lies in (1, 2]."""
    out = np.zeros(scene.n_vertices, dtype=bool)
    for v in range(scene.n_vertices):
        p, q = scene.vertex_neighbors(v)
        n = wedge_factor(scene.vertices[v], scene.vertices[p], scene.vertices[q])
        out[v] = 1.0 + 1e-9 < n <= 2.0 + 1e-12
    return out


@dataclass
class _Node:
    seq: tuple[InteractionNode, ...]
    points: tuple  # resolved 2D points up to the anchor
    anchor: tuple[float, float]
    length: float  # unfolded length tx -> anchor
    run: tuple[int, ...] = ()  # pending reflection edges after the anchor
    image: Optional[tuple[float, float]] = None


@dataclass
class VisibilityTree:
    tx: tuple[float, float]
    depth: int
    nodes: list[_Node] = field(default_factory=list)
    by_vertex: dict[int, list[int]] = field(default_factory=dict)
    by_edge: dict[int, list[int]] = field(default_factory=dict)
    max_path_length: float = math.inf
    allow_diffraction: bool = True
    allow_reflection: bool = True

    def __len__(self):
        return len(self.nodes)


class _Successors:
    """Static successor candidates derived from vertex-to-vertex visibility."""

    def __init__(self, scene: SceneModel, adjacency: VisibilityAdjacency, convex: np.ndarray):
        self.scene = scene
        self.adj = adjacency
        self.convex = convex
        m = scene.n_vertices
        self.edges_at = [scene.incident_edges(v) for v in range(m)]
        self._edge_edges: dict[int, list[int]] = {}
        self._edge_verts: dict[int, list[int]] = {}

    def edges_seen_from_vertices(self, verts) -> set[int]:
        out: set[int] = set()
        for w in verts:
            out.update(self.edges_at[w])
        return out

    def verts_from_edge(self, e: int) -> list[int]:
        if e not in self._edge_verts:
            a, b = self._endpoints(e)
            vs = (self.adj.neighbors[a] | self.adj.neighbors[b]) - {a, b}
            self._edge_verts[e] = sorted(v for v in vs if self.convex[v])
        return self._edge_verts[e]

    def edges_from_edge(self, e: int) -> list[int]:
        if e not in self._edge_edges:
            a, b = self._endpoints(e)
            seen = self.adj.neighbors[a] | self.adj.neighbors[b] | {a, b}
            es = self.edges_seen_from_vertices(seen) - {e}
            self._edge_edges[e] = sorted(es)
        return self._edge_edges[e]

    def _endpoints(self, e: int) -> tuple[int, int]:
        return e, self.scene.vertex_neighbors(e)[1]


def build_visibility_tree(tx, attrs: VertexAttributes, adjacency: VisibilityAdjacency, scene: SceneModel,
                          depth: int = DEFAULT_MAX_DEPTH, *, max_path_length: Optional[float] = None,
                          diffraction: bool = True, reflection: bool = True) -> VisibilityTree:
    """Transmitter-rooted interaction tree up to ``depth`` interactions."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    tx = (float(tx[0]), float(tx[1]))
    if max_path_length is None:
        w, h = scene.extent
        max_path_length = 4.0 * math.hypot(w, h)
    tree = VisibilityTree(tx, depth, max_path_length=max_path_length,
                          allow_diffraction=diffraction, allow_reflection=reflection)
    if not scene.buildings:
        return tree
    convex = convex_vertices(scene)
    succ = _Successors(scene, adjacency, convex)
    edges = scene.edges
    verts = scene.vertices
    mat = [b.material_index for b in scene.buildings]
    vis0 = np.flatnonzero(attrs.visible).tolist()

    def add(node: _Node):
        idx = len(tree.nodes)
        tree.nodes.append(node)
        last = node.seq[-1]
        table = tree.by_vertex if last.kind == DIFFRACTION else tree.by_edge
        table.setdefault(last.primitive_id, []).append(idx)
        return idx

    frontier: list[_Node] = [_Node((), (), tx, 0.0)]
    for level in range(depth):
        nxt: list[_Node] = []
        for node in frontier:
            last = node.seq[-1] if node.seq else None
            if node.run:
                ek = edges[node.run[-1]]
                cand_v = succ.verts_from_edge(node.run[-1]) if diffraction else []
                cand_e = succ.edges_from_edge(node.run[-1]) if reflection else []
            else:
                if last is None:
                    seen = vis0
                else:
                    seen = sorted(adjacency.neighbors[last.primitive_id])
                cand_v = [v for v in seen if convex[v]] if diffraction else []
                cand_e = sorted(succ.edges_seen_from_vertices(seen)) if reflection else []
                if last is not None:
                    inc = set(scene.incident_edges(last.primitive_id))
                    cand_e = [e for e in cand_e if e not in inc]
            for v in cand_v:
                if last is not None and last.kind == DIFFRACTION and last.primitive_id == v:
                    continue
                pv = verts[v]
                # only corners grazed by the incoming ray diffract
                if not is_silhouette(v, node.image if node.run else node.anchor, scene):
                    continue
                dn = InteractionNode(DIFFRACTION, v, mat[scene.vertex_building[v]])
                if node.run:
                    if not _in_window(pv, node.image, ek):
                        continue
                    length = node.length + math.hypot(pv[0] - node.image[0], pv[1] - node.image[1])
                    if length > max_path_length:
                        continue
                    sol = solve_run(node.anchor, [edges[e] for e in node.run], pv)
                    if sol is None:
                        continue
                    run_nodes = node.seq[len(node.seq) - len(node.run):]
                    chain = [node.anchor, *sol, pv]
                    prev_anchor = node.seq[len(node.seq) - len(node.run) - 1] if len(node.seq) > len(node.run) else None
                    legs = [prev_anchor, *run_nodes, dn]
                    if not all(_leg_clear(chain[i], chain[i + 1], legs[i], legs[i + 1], scene)
                               for i in range(len(chain) - 1)):
                        continue
                    new = _Node(node.seq + (dn,), node.points + tuple(sol) + (pv,), pv, length)
                else:
                    # visibility of v from the anchor is already established
                    length = node.length + math.hypot(pv[0] - node.anchor[0], pv[1] - node.anchor[1])
                    if length > max_path_length:
                        continue
                    new = _Node(node.seq + (dn,), node.points + (pv,), pv, length)
                add(new)
                nxt.append(new)
            for e in cand_e:
                if node.run and e == node.run[-1]:
                    continue
                ed = edges[e]
                src = node.image if node.run else node.anchor
                if node.run:
                    if not _edge_meets_window(ed, node.image, ek):
                        continue
                    if not (in_front(ed[:2], ek) or in_front(ed[2:], ek)):
                        continue
                    if not (in_front(ek[:2], ed) or in_front(ek[2:], ed)):
                        continue
                elif not in_front(src, ed):
                    continue
                lb = node.length + _point_segment_dist(src, ed)
                if lb > max_path_length:
                    continue
                rn = InteractionNode(REFLECTION, e, mat[scene.edge_building[e]])
                new = _Node(node.seq + (rn,), node.points, node.anchor, node.length,
                            node.run + (e,), mirror(src, ed))
                add(new)
                nxt.append(new)
        frontier = nxt
        if not frontier:
            break
    return tree


def _point_segment_dist(p, e) -> float:
    from .scene import point_segment_distance
    return point_segment_distance(p[0], p[1], *e)


# ---------------------------------------------------------------- per receiver
def enumerate_paths(tx, rx, tree: VisibilityTree, scene: SceneModel) -> list[PathCandidate]:
    """All valid paths from tx to rx through the tree, deterministically ordered."""
    tx3 = tuple(float(c) for c in tx)
    rx3 = tuple(float(c) for c in rx)
    if tx3 == rx3:
        raise ValueError("tx and rx coincide")
    rx2 = rx3[:2]
    out: list[PathCandidate] = []
    if los_3d(LinkEndpoints.from_3d(tx3, rx3), scene):
        out.append(PathCandidate(tx3, rx3, (), []))
    edges = scene.edges
    vis_cache: dict[int, bool] = {}

    def sees(v: int) -> bool:
        if v not in vis_cache:
            vis_cache[v] = scene.vertices[v] != rx2 and not segment_hits_building(
                rx2, scene.vertices[v], scene, ignore=frozenset(scene.incident_edges(v)))
        return vis_cache[v]

    def finish(node: _Node, pts2):
        p3 = _lift(pts2, tx3, rx3, node.seq, scene)
        if p3 is None:
            return
        total = sum(math.dist(a, b) for a, b in zip([tx3[:2], *pts2], [*pts2, rx2]))
        if total > tree.max_path_length:
            return
        out.append(PathCandidate(tx3, rx3, node.seq, p3))

    for v in sorted(tree.by_vertex):
        if not sees(v):
            continue
        for idx in tree.by_vertex[v]:
            node = tree.nodes[idx]
            finish(node, list(node.points))
    for e in sorted(tree.by_edge):
        ed = edges[e]
        if not in_front(rx2, ed):
            continue
        a, b = e, scene.vertex_neighbors(e)[1]
        if not (sees(a) or sees(b)):
            continue
        for idx in tree.by_edge[e]:
            node = tree.nodes[idx]
            if not _in_window(rx2, node.image, ed):
                continue
            sol = solve_run(node.anchor, [edges[k] for k in node.run], rx2)
            if sol is None:
                continue
            k = len(node.run)
            run_nodes = node.seq[len(node.seq) - k:]
            prev_anchor = node.seq[len(node.seq) - k - 1] if len(node.seq) > k else None
            chain = [node.anchor, *sol, rx2]
            legs = [prev_anchor, *run_nodes, None]
            if not all(_leg_clear(chain[i], chain[i + 1], legs[i], legs[i + 1], scene)
                       for i in range(len(chain) - 1)):
                continue
            finish(node, list(node.points) + sol)
    out.sort(key=PathCandidate.key)
    return out


def path_interactions(path: PathCandidate, scene: SceneModel) -> list[Interaction]:
    """Frequency-independent interaction descriptors for field evaluation."""
    pts = path.points
    out = []
    for i, node in enumerate(path.sequence):
        p_in, p, p_out = pts[i], pts[i + 1], pts[i + 2]
        if node.kind == REFLECTION:
            out.append(describe_reflection(p_in, p, scene.edges[node.primitive_id], node.material_index))
        else:
            v = node.primitive_id
            prev, nxt = scene.vertex_neighbors(v)
            out.append(describe_diffraction(p_in, scene.vertices[v], p_out, scene.vertices[prev],
                                            scene.vertices[nxt], node.material_index))
    return out
