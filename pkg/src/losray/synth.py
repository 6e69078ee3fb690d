"""Ray records, channel maps and the statistics computed from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .em import (
    DEFAULT_FREQUENCY,
    SOFT,
    Interaction,
    MaterialTable,
    batch_path_fields,
    describe_diffraction,
    describe_reflection,
)
from .scene import SceneModel, SceneParseError, point_segment_distance
from .tracer import (
    DIFFRACTION,
    REFLECTION,
    PathCandidate,
    VisibilityTree,
    enumerate_paths,
    in_front,
    path_interactions,
)

N_RAY = 8
RSS_FLOOR_DB = -200.0
K_FACTOR_CAP_DB = 60.0
APS_BIN_DEG = 2.0
PDP_BIN_S = 5e-9
EFFECTIVE_COUNT_DB = 20.0


@dataclass(frozen=True)
class RayRecord:
    complex_gain: complex
    aoa_azimuth: float
    aoa_elevation: float
    aod_azimuth: float
    aod_elevation: float
    delay: float
    trajectory: tuple[tuple[float, float, float], ...]
    interaction_kinds: tuple[str, ...] = ()
    material_indices: tuple[int, ...] = ()
    interactions: tuple[Interaction, ...] = field(default=(), compare=False, repr=False)

    @property
    def power(self) -> float:
        return abs(self.complex_gain) ** 2


def _direction(a, b) -> tuple[float, float]:
    dx, dy, dz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    return math.atan2(dy, dx), math.atan2(dz, math.hypot(dx, dy))


def _sort_key(r: RayRecord):
    return (-abs(r.complex_gain), r.delay, r.trajectory)


def sort_rays(rays: Iterable[RayRecord]) -> list[RayRecord]:
    return sorted(rays, key=_sort_key)


def rays_from_paths(paths: Sequence[PathCandidate], interactions: Sequence[Sequence[Interaction]],
                    materials: Optional[MaterialTable] = None, frequency: float = DEFAULT_FREQUENCY,
                    polarization: str = SOFT) -> list[RayRecord]:
    if not paths:
        return []
    gains, delays = batch_path_fields([p.points for p in paths], interactions, materials, frequency, polarization)
    out = []
    for p, inter, g, tau in zip(paths, interactions, gains, delays):
        pts = tuple(tuple(float(c) for c in q) for q in p.points)
        aod = _direction(pts[0], pts[1])
        aoa = _direction(pts[-1], pts[-2])
        out.append(RayRecord(complex(g), aoa[0], aoa[1], aod[0], aod[1], float(tau), pts,
                             tuple(n.kind for n in p.sequence),
                             tuple(n.material_index for n in p.sequence), tuple(inter)))
    return out


@dataclass
class TraceContext:
    scene: SceneModel
    tree: VisibilityTree
    materials: Optional[MaterialTable] = None
    frequency: float = DEFAULT_FREQUENCY
    polarization: str = SOFT
    n_ray: int = N_RAY


def trace_all(tx, rx, ctx: TraceContext) -> list[RayRecord]:
    """Every valid ray between tx and rx, strongest first."""
    paths = enumerate_paths(tx, rx, ctx.tree, ctx.scene)
    inter = [path_interactions(p, ctx.scene) for p in paths]
    return sort_rays(rays_from_paths(paths, inter, ctx.materials, ctx.frequency, ctx.polarization))


def trace_point(tx, rx, ctx: TraceContext) -> list[RayRecord]:
    return trace_all(tx, rx, ctx)[:ctx.n_ray]


def retained_energy_fraction(rays: Sequence[RayRecord], n_ray: int = N_RAY) -> float:
    p = np.array([r.power for r in sort_rays(rays)])
    total = p.sum()
    return 1.0 if total == 0 else float(p[:n_ray].sum() / total)


# ---------------------------------------------------------------- maps
def rss_value(rays: Sequence[RayRecord], tx_power_dbm: float = 0.0, floor: float = RSS_FLOOR_DB) -> float:
    p = sum(r.power for r in rays)
    if p <= 0.0:
        return floor + tx_power_dbm
    return 10.0 * math.log10(p) + tx_power_dbm


def rss_map(ray_sets: dict, shape: tuple[int, int], tx_power_dbm: float = 0.0,
            floor: float = RSS_FLOOR_DB) -> np.ndarray:
    """H x W dB grid from {(row, col): rays}; pixels never evaluated are NaN."""
    out = np.full(shape, np.nan)
    for (i, j), rays in ray_sets.items():
        out[i, j] = rss_value(rays, tx_power_dbm, floor)
    return out


def coherent_sum(rays: Sequence[RayRecord], frequency: float) -> complex:
    if not rays:
        return 0j
    g = np.array([r.complex_gain for r in rays])
    tau = np.array([r.delay for r in rays])
    return complex(np.sum(g * np.exp(-2j * np.pi * frequency * tau)))


@dataclass
class Profile:
    centers: np.ndarray
    power: np.ndarray
    stats: dict


def aps_profile(rays: Sequence[RayRecord], bin_width: float = APS_BIN_DEG) -> Profile:
    """Power over AoA azimuth bins (degrees) with MDoA and angular spread."""
    edges = np.arange(-180.0, 180.0 + bin_width / 2, bin_width)
    p = np.array([r.power for r in rays], dtype=float)
    az = np.array([r.aoa_azimuth for r in rays], dtype=float)
    deg = (np.degrees(az) + 180.0) % 360.0 - 180.0
    hist, _ = np.histogram(deg, bins=edges, weights=p)
    stats = {"mdoa_deg": float("nan"), "as_deg": float("nan")}
    if p.sum() > 0:
        z = np.sum(p * np.exp(1j * az)) / p.sum()
        R = min(1.0, abs(z))
        stats["mdoa_deg"] = math.degrees(math.atan2(z.imag, z.real))
        stats["as_deg"] = math.degrees(math.sqrt(-2.0 * math.log(R))) if R > 0 else float("inf")
    return Profile(0.5 * (edges[:-1] + edges[1:]), hist, stats)


def pdp_profile(rays: Sequence[RayRecord], bin_width: float = PDP_BIN_S,
                effcount_threshold: float = EFFECTIVE_COUNT_DB) -> Profile:
    """Power over delay bins with delay spread, median delay, K-factor and
    effective ray count."""
    p = np.array([r.power for r in rays], dtype=float)
    tau = np.array([r.delay for r in rays], dtype=float)
    stats = {"ds_s": float("nan"), "median_delay_s": float("nan"),
             "k_factor_db": float("nan"), "effective_count": 0}
    if len(p) == 0 or p.sum() <= 0:
        return Profile(np.zeros(0), np.zeros(0), stats)
    nb = int(math.floor(tau.max() / bin_width)) + 1
    edges = np.arange(nb + 1) * bin_width
    hist, _ = np.histogram(tau, bins=edges, weights=p)
    w = p / p.sum()
    mean = float(np.sum(w * tau))
    stats["ds_s"] = math.sqrt(float(np.sum(w * (tau - mean) ** 2)))
    order = np.argsort(tau, kind="stable")
    cum = np.cumsum(w[order])
    stats["median_delay_s"] = float(tau[order][np.searchsorted(cum, 0.5 - 1e-12)])
    strongest = p.max()
    rest = p.sum() - strongest
    k = K_FACTOR_CAP_DB if rest <= 0 else min(K_FACTOR_CAP_DB, 10.0 * math.log10(strongest / rest))
    stats["k_factor_db"] = k
    stats["effective_count"] = int(np.count_nonzero(p >= strongest * 10.0 ** (-effcount_threshold / 10.0)))
    return Profile(0.5 * (edges[:-1] + edges[1:]), hist, stats)


def shape_metrics(pred, ref) -> tuple[float, float]:
    """(cosine similarity, RMSE) of two histograms after unit-sum normalization."""
    a = np.asarray(pred, dtype=float)
    b = np.asarray(ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError("histograms must share bins")
    sa, sb = a.sum(), b.sum()
    if sa <= 0 or sb <= 0:
        return float("nan"), float("nan")
    a = a / sa
    b = b / sb
    cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return cos, float(np.sqrt(np.mean((a - b) ** 2)))


def error_metrics(pred, ref, mask=None) -> dict:
    p = np.asarray(pred, dtype=float)
    r = np.asarray(ref, dtype=float)
    m = np.isfinite(p) & np.isfinite(r)
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    p, r = p[m], r[m]
    d = p - r
    mse = float(np.mean(d * d))
    denom = float(np.mean(r * r))
    corr = float(np.corrcoef(p, r)[0, 1]) if p.size > 1 and p.std() > 0 and r.std() > 0 else float("nan")
    return {
        "bias": float(np.mean(d)),
        "mae": float(np.mean(np.abs(d))),
        "rmse": math.sqrt(mse),
        "mse": mse,
        "nmse": mse / denom if denom > 0 else float("nan"),
        "correlation": corr,
    }


# ---------------------------------------------------------------- beams
@dataclass(frozen=True)
class BeamPattern:
    """Gaussian main lobe in dB: -12 (delta / bw)^2 clipped at the floor.

    ``beamwidth_deg=None`` is the 0 dB omnidirectional pattern.
    """
    beamwidth_deg: Optional[float] = None
    boresight_azimuth: float = 0.0
    boresight_elevation: float = 0.0
    floor_db: float = -30.0
    peak_db: float = 0.0

    @classmethod
    def omni(cls) -> "BeamPattern":
        return cls(None)

    def gain_db(self, azimuth, elevation=0.0):
        if self.beamwidth_deg is None:
            return np.zeros(np.broadcast(azimuth, elevation).shape) + self.peak_db
        az = np.asarray(azimuth, dtype=float)
        el = np.asarray(elevation, dtype=float)
        b0, e0 = self.boresight_azimuth, self.boresight_elevation
        c = np.sin(el) * math.sin(e0) + np.cos(el) * math.cos(e0) * np.cos(az - b0)
        delta = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
        return self.peak_db - np.minimum(12.0 * (delta / self.beamwidth_deg) ** 2, -self.floor_db)


def apply_beam(rays: Sequence[RayRecord], pattern: BeamPattern) -> list[RayRecord]:
    if pattern.beamwidth_deg is None and pattern.peak_db == 0.0:
        return list(rays)
    out = []
    for r in rays:
        g = float(pattern.gain_db(r.aod_azimuth, r.aod_elevation))
        out.append(replace(r, complex_gain=r.complex_gain * 10.0 ** (g / 20.0)))
    return sort_rays(out)


# ---------------------------------------------------------------- retarget and MIMO
def retarget_frequency(rays: Sequence[RayRecord], frequency: float, materials: Optional[MaterialTable] = None,
                       polarization: str = SOFT) -> list[RayRecord]:
    """Re-evaluate gains along stored trajectories at a new frequency."""
    if not rays:
        return []
    gains, _ = batch_path_fields([r.trajectory for r in rays], [r.interactions for r in rays],
                                 materials, frequency, polarization)
    return sort_rays(replace(r, complex_gain=complex(g)) for r, g in zip(rays, gains))


def steering_vector(n: int, azimuth: float, elevation: float, spacing: float = 0.5) -> np.ndarray:
    """Uniform linear array along y with element spacing in wavelengths."""
    m = np.arange(n)
    return np.exp(2j * np.pi * spacing * m * math.cos(elevation) * math.sin(azimuth))


def mimo_matrix(rays: Sequence[RayRecord], n_tx: int, n_rx: int, frequency: float,
                tx_spacing: float = 0.5, rx_spacing: float = 0.5) -> np.ndarray:
    H = np.zeros((n_rx, n_tx), dtype=complex)
    for r in rays:
        aR = steering_vector(n_rx, r.aoa_azimuth, r.aoa_elevation, rx_spacing)
        aT = steering_vector(n_tx, r.aod_azimuth, r.aod_elevation, tx_spacing)
        H += r.complex_gain * np.exp(-2j * np.pi * frequency * r.delay) * np.outer(aR, aT.conj())
    return H


# ---------------------------------------------------------------- ray files
def _fmt(x: float) -> str:
    return repr(float(x))


def format_rays(ray_sets: dict) -> str:
    lines = []
    for (i, j) in sorted(ray_sets):
        for rank, r in enumerate(ray_sets[(i, j)]):
            parts = [str(j), str(i), str(rank), _fmt(r.complex_gain.real), _fmt(r.complex_gain.imag),
                     _fmt(r.delay), _fmt(r.aoa_azimuth), _fmt(r.aoa_elevation), _fmt(r.aod_azimuth),
                     _fmt(r.aod_elevation), str(len(r.interaction_kinds))]
            for kind, p, mat in zip(r.interaction_kinds, r.trajectory[1:-1], r.material_indices):
                parts += [kind, _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), str(mat)]
            lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def write_rays(ray_sets: dict, path) -> None:
    Path(path).write_text(format_rays(ray_sets))


def _vertex_lookup(scene: SceneModel) -> dict:
    return {v: i for i, v in enumerate(scene.vertices)}


def _edge_at(p, prev, nxt, scene: SceneModel) -> int:
    for e in sorted(scene.edge_index.query_disk(p[:2], 1e-6)):
        ed = scene.edges[e]
        if point_segment_distance(p[0], p[1], *ed) <= 1e-6 and in_front(prev[:2], ed) and in_front(nxt[:2], ed):
            return e
    raise ValueError(f"no reflecting edge at {p}")


def interactions_from_trajectory(trajectory, kinds, materials, scene: SceneModel) -> tuple[Interaction, ...]:
    """Rebuild interaction descriptors from stored points and the scene."""
    lookup = _vertex_lookup(scene)
    out = []
    for k, (kind, mat) in enumerate(zip(kinds, materials)):
        p_in, p, p_out = trajectory[k], trajectory[k + 1], trajectory[k + 2]
        if kind == REFLECTION:
            e = _edge_at(p, p_in, p_out, scene)
            out.append(describe_reflection(p_in, p, scene.edges[e], mat))
        elif kind == DIFFRACTION:
            v = lookup.get((p[0], p[1]))
            if v is None:
                raise ValueError(f"diffraction point {p[:2]} is not a vertex")
            prev, nxt = scene.vertex_neighbors(v)
            out.append(describe_diffraction(p_in, scene.vertices[v], p_out, scene.vertices[prev],
                                            scene.vertices[nxt], mat))
        else:
            raise ValueError(f"unknown interaction kind {kind!r}")
    return tuple(out)


def read_rays(path, scene: SceneModel, tx3, rx_height: float) -> dict:
    return parse_ray_text(Path(path).read_text(), scene, tx3, rx_height)


def parse_ray_text(text: str, scene: SceneModel, tx3, rx_height: float) -> dict:
    out: dict = {}
    dr = scene.resolution
    tx3 = tuple(float(c) for c in tx3)
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split()
        if not tok:
            continue
        try:
            j, i, rank = int(tok[0]), int(tok[1]), int(tok[2])
            g = complex(float(tok[3]), float(tok[4]))
            vals = [float(t) for t in tok[5:10]]
            n = int(tok[10])
            body = tok[11:]
            if len(body) != 5 * n:
                raise ValueError("interaction count mismatch")
            kinds, pts, mats = [], [], []
            for k in range(n):
                kind, x, y, z, mat = body[5 * k:5 * k + 5]
                kinds.append(kind)
                pts.append((float(x), float(y), float(z)))
                mats.append(int(mat))
        except (ValueError, IndexError) as exc:
            raise SceneParseError(f"line {lineno}: bad ray record") from exc
        rx3 = ((j + 0.5) * dr, (i + 0.5) * dr, float(rx_height))
        traj = (tx3, *pts, rx3)
        inter = interactions_from_trajectory(traj, kinds, mats, scene)
        rec = RayRecord(g, vals[1], vals[2], vals[3], vals[4], vals[0], traj, tuple(kinds), tuple(mats), inter)
        lst = out.setdefault((i, j), [])
        if rank != len(lst):
            raise SceneParseError(f"line {lineno}: ray ranks out of order")
        lst.append(rec)
    return out


def write_profile(profile: Profile, path, tx_power_dbm: float = 0.0) -> None:
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(profile.power) + tx_power_dbm
    lines = [f"{_fmt(c)},{_fmt(v)}" for c, v in zip(profile.centers, db)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def write_metrics(metrics: dict, path) -> None:
    lines = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items()]
    Path(path).write_text("\n".join(lines) + "\n")
