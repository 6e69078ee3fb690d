"""Exact 3D direct-path LoS for 2.5D prism scenes.

A straight 3D segment is blocked by a prism iff some stretch of its 2D shadow
lies inside the footprint while the segment height there is at or below the
roof.  Height is linear in the 2D parameter, so each footprint interval only
needs its two end heights checked.
"""
from __future__ import annotations

from dataclasses import dataclass

from .scene import Building, SceneModel, SceneError, polygon_intervals

DEFAULT_HEIGHT = 1.5


@dataclass(frozen=True)
class LinkEndpoints:
    tx: tuple[float, float]
    rx: tuple[float, float]
    h_tx: float = DEFAULT_HEIGHT
    h_rx: float = DEFAULT_HEIGHT

    def __post_init__(self):
        if not (self.h_tx > 0 and self.h_rx > 0):
            raise SceneError("endpoint heights must be positive")

    @classmethod
    def from_3d(cls, a, b) -> "LinkEndpoints":
        return cls((float(a[0]), float(a[1])), (float(b[0]), float(b[1])), float(a[2]), float(b[2]))


def footprint_ray_intervals(p, q, building: Building) -> list[tuple[float, float]]:
    """Sorted disjoint intervals of t in (0, 1) with p + t(q - p) strictly
    inside the footprint."""
    if tuple(p) == tuple(q):
        raise ValueError("degenerate segment")
    return polygon_intervals(tuple(p), tuple(q), building.footprint)


def _candidate_buildings(p, q, scene: SceneModel) -> list[int]:
    eids = scene.edge_index.query_segment(p, q)
    return sorted({scene.edge_building[e] for e in eids})


def blocking_building(link: LinkEndpoints, scene: SceneModel):
    """First building (lowest id) that blocks the link, or None."""
    p, q = link.tx, link.rx
    if p == q:
        return None
    for bid in _candidate_buildings(p, q, scene):
        b = scene.buildings[bid]
        for t0, t1 in footprint_ray_intervals(p, q, b):
            z0 = (1.0 - t0) * link.h_tx + t0 * link.h_rx
            z1 = (1.0 - t1) * link.h_tx + t1 * link.h_rx
            # touching the roof exactly counts as blocked
            if min(z0, z1) <= b.height:
                return bid
    return None


def los_3d(link: LinkEndpoints, scene: SceneModel) -> bool:
    return blocking_building(link, scene) is None


def segment_clear_3d(a, b, scene: SceneModel) -> bool:
    """los_3d for two 3D points (x, y, z)."""
    return los_3d(LinkEndpoints.from_3d(a, b), scene)
