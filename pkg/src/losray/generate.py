"""Desk-scale scenario generation.

Two layouts are available: ``random`` scatters footprints by rejection
sampling, ``urban`` packs them into street blocks.  Footprints are convex
quadrilaterals by default; ``rectilinear=True`` also draws L and U shapes.
"""
from __future__ import annotations

import math

import numpy as np

from .scene import Building, SceneModel, point_in_polygon, validate_scene


def _quad(rng, cx, cy, w, h, tilt_deg=12.0, jitter=0.15):
    """Slightly rotated rectangle with jittered corners (stays convex)."""
    ang = math.radians(rng.uniform(-tilt_deg, tilt_deg))
    c, s = math.cos(ang), math.sin(ang)
    pts = []
    for ux, uy in ((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)):
        jx = ux * w * (1 + rng.uniform(-jitter, jitter) * 0.5)
        jy = uy * h * (1 + rng.uniform(-jitter, jitter) * 0.5)
        pts.append((cx + c * jx - s * jy, cy + s * jx + c * jy))
    return pts


def _rectilinear(rng, cx, cy, w, h):
    """Axis-aligned L or U footprint inside a w x h box centred at (cx, cy)."""
    x0, y0 = cx - w / 2, cy - h / 2
    x1, y1 = cx + w / 2, cy + h / 2
    t = rng.uniform(0.3, 0.45)
    if rng.random() < 0.5:
        xa, ya = x0 + t * w, y0 + t * h
        pts = [(x0, y0), (x1, y0), (x1, ya), (xa, ya), (xa, y1), (x0, y1)]
    else:
        xa, xb = x0 + t * w, x1 - t * w
        yb = y0 + rng.uniform(0.3, 0.5) * h
        pts = [(x0, y0), (x1, y0), (x1, y1), (xb, y1), (xb, yb), (xa, yb), (xa, y1), (x0, y1)]
    k = int(rng.integers(4))
    # random multiple-of-90-degree rotation about the centre
    for _ in range(k):
        pts = [(cx - (y - cy), cy + (x - cx)) for x, y in pts]
    return pts


def _bbox(pts, pad=0.0):
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad


def _round(pts, nd=3):
    return tuple((round(x, nd), round(y, nd)) for x, y in pts)


def generate_scene(n_buildings: int, grid: int | tuple[int, int] = 257, seed: int = 0, *,
                   resolution: float = 1.0, rectilinear: bool = False, layout: str = "random",
                   height_range=(10.0, 40.0), size_range=(8.0, 22.0), gap: float = 2.0,
                   max_tries: int = 200_000) -> SceneModel:
    """Deterministic random scene with ``n_buildings`` disjoint footprints."""
    H, W = (grid, grid) if isinstance(grid, int) else grid
    rng = np.random.default_rng(seed)
    w_m, h_m = W * resolution, H * resolution
    if layout == "urban":
        footprints = _urban_footprints(rng, n_buildings, w_m, h_m, rectilinear)
    elif layout == "random":
        footprints = []
        boxes = []
        tries = 0
        while len(footprints) < n_buildings:
            tries += 1
            if tries > max_tries:
                raise RuntimeError(f"could only place {len(footprints)} of {n_buildings} buildings")
            w = rng.uniform(*size_range)
            h = rng.uniform(*size_range)
            margin = 0.75 * max(w, h) + 1.0
            cx = rng.uniform(margin, w_m - margin)
            cy = rng.uniform(margin, h_m - margin)
            if rectilinear and rng.random() < 0.5:
                pts = _rectilinear(rng, cx, cy, w, h)
            else:
                pts = _quad(rng, cx, cy, w, h)
            bb = _bbox(pts, gap / 2)
            if any(bb[0] < o[2] and o[0] < bb[2] and bb[1] < o[3] and o[1] < bb[3] for o in boxes):
                continue
            boxes.append(bb)
            footprints.append(pts)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    buildings = tuple(
        Building(_round(pts), round(float(rng.uniform(*height_range)), 1), 0) for pts in footprints
    )
    scene = SceneModel(H, W, resolution, buildings)
    validate_scene(scene)
    return scene


def _urban_footprints(rng, n, w_m, h_m, rectilinear):
    if n == 0:
        return []
    per_block = 3
    lots_needed = n
    n_blocks = math.ceil(lots_needed / (per_block * per_block))
    # leave some lots empty so that the layout is not perfectly regular
    rows = max(1, math.ceil(math.sqrt(n_blocks * 1.15)))
    pitch = min(w_m, h_m) / rows
    street = max(4.0, 0.28 * pitch)
    block = pitch - street
    lot = block / per_block
    lots = []
    for bi in range(rows):
        for bj in range(rows):
            x0 = bj * pitch + street / 2
            y0 = bi * pitch + street / 2
            for li in range(per_block):
                for lj in range(per_block):
                    lots.append((x0 + (lj + 0.5) * lot, y0 + (li + 0.5) * lot))
    order = rng.permutation(len(lots))[:n]
    out = []
    for k in sorted(order.tolist()):
        cx, cy = lots[k]
        w = lot * rng.uniform(0.72, 0.88)
        h = lot * rng.uniform(0.72, 0.88)
        if rectilinear and rng.random() < 0.5:
            out.append(_rectilinear(rng, cx, cy, w, h))
        else:
            out.append(_quad(rng, cx, cy, w, h, tilt_deg=4.0, jitter=0.08))
    return out


def random_free_point(scene: SceneModel, rng, margin: float = 1.0, clearance: float = 0.5):
    """Uniform point in the grid, outside every footprint by ``clearance`` meters."""
    w_m, h_m = scene.extent
    while True:
        p = (float(rng.uniform(margin, w_m - margin)), float(rng.uniform(margin, h_m - margin)))
        ok = True
        for b in scene.buildings:
            x0, y0, x1, y1 = b.bbox()
            if x0 - clearance <= p[0] <= x1 + clearance and y0 - clearance <= p[1] <= y1 + clearance:
                if point_in_polygon(p[0], p[1], b.footprint) or _near_boundary(p, b, clearance):
                    ok = False
                    break
        if ok:
            return p


def _near_boundary(p, b, d):
    from .scene import point_segment_distance
    return any(point_segment_distance(p[0], p[1], *e) < d for e in b.edges())
