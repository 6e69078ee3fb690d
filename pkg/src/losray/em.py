"""Field coefficients along resolved ray paths.

Free-space spreading (anchored to Friis), Fresnel reflection off lossy
dielectric walls, four-term UTD wedge diffraction with lossy faces, the
shadow-boundary magnitude cap and the forward-scatter attenuation law.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import modfresnelm

from .scene import SceneParseError

log = logging.getLogger(__name__)

C0 = 299_792_458.0
EPS0 = 8.8541878128e-12
DEFAULT_FREQUENCY = 3.5e9
POLE_WINDOW = math.radians(0.05)
FORWARD_SCATTER_LIMIT = math.radians(30.0)
BOUNDARY_LOSS_DB = 20.0 * math.log10(2.0)  # 6.02 dB, |E_d| = |E_i| / 2
MAX_FORWARD_LOSS_DB = 30.0

SOFT = "soft"
HARD = "hard"


@dataclass(frozen=True)
class Material:
    epsilon_r: float = 5.31
    sigma: float = 0.0326

    def __post_init__(self):
        if self.epsilon_r < 1.0 or self.sigma < 0.0:
            raise ValueError("need epsilon_r >= 1 and sigma >= 0")

    def permittivity(self, frequency: float) -> complex:
        return complex(self.epsilon_r, -self.sigma / (2.0 * math.pi * frequency * EPS0))


DEFAULT_MATERIAL = Material()


@dataclass
class MaterialTable:
    """Materials per frequency block; lookups use the nearest block."""
    blocks: dict[float, dict[int, Material]] = field(default_factory=dict)
    default: Material = DEFAULT_MATERIAL

    def get(self, index: int, frequency: float) -> Material:
        if not self.blocks:
            return self.default
        f = min(self.blocks, key=lambda b: (abs(b - frequency), b))
        return self.blocks[f].get(index, self.default)


def parse_materials(text: str) -> MaterialTable:
    table = MaterialTable()
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) == 1:
                current = float(parts[0])
                if current <= 0:
                    raise ValueError
                table.blocks.setdefault(current, {})
            elif len(parts) == 3:
                if current is None:
                    raise SceneParseError(f"line {lineno}: material before any frequency header")
                table.blocks[current][int(parts[0])] = Material(float(parts[1]), float(parts[2]))
            else:
                raise ValueError
        except ValueError as exc:
            raise SceneParseError(f"line {lineno}: bad material line {raw!r}") from exc
    return table


def load_materials(path) -> MaterialTable:
    return parse_materials(Path(path).read_text())


def wavenumber(frequency: float) -> float:
    return 2.0 * math.pi * frequency / C0


# ---------------------------------------------------------------- transition
def fresnel_transition(X: float) -> complex:
    """F(X) = 2j sqrt(X) exp(jX) * integral_{sqrt X}^inf exp(-j t^2) dt."""
    if X < 0:
        raise ValueError("X must be non-negative")
    if X == 0.0:
        return 0j
    x = math.sqrt(X)
    if X > 1e8:
        # leading asymptotic terms; the integral tail underflows in precision
        return 1.0 + 0.5j / X - 0.75 / X**2
    tail = complex(modfresnelm(x)[0])
    return 2j * x * cmath.exp(1j * X) * tail


# ---------------------------------------------------------------- reflection
def fresnel_reflection(material: Material, frequency: float, incidence_angle: float,
                       polarization: str = SOFT) -> complex:
    """Plane-wave reflection coefficient of a lossy half-space.

    ``soft`` is the perpendicular (TE) coefficient.  ``hard`` is the parallel
    coefficient in the electric-field convention, equal to the soft one at
    normal incidence.
    """
    if not 0.0 <= incidence_angle < 0.5 * math.pi + 1e-12:
        raise ValueError("incidence angle must be in [0, pi/2)")
    eps = material.permittivity(frequency)
    c = math.cos(incidence_angle)
    s2 = math.sin(incidence_angle) ** 2
    root = cmath.sqrt(eps - s2)
    if polarization == SOFT:
        return (c - root) / (c + root)
    if polarization == HARD:
        return (root - eps * c) / (root + eps * c)
    raise ValueError(f"unknown polarization {polarization!r}")


def scalar_reflection(material: Material, frequency: float, incidence_angle: float,
                      polarization: str = SOFT) -> complex:
    """Reflection factor applied to the scalar field carried along a ray.

    For hard polarization the carried quantity is the magnetic field, whose
    coefficient is the negative of the electric-field one (PEC gives +1).
    """
    g = fresnel_reflection(material, frequency, min(incidence_angle, 0.5 * math.pi - 1e-12), polarization)
    return g if polarization == SOFT else -g


# ---------------------------------------------------------------- diffraction
@dataclass(frozen=True)
class WedgeGeometry:
    n: float
    phi_prime: float
    phi: float
    L: float
    k: float

    def __post_init__(self):
        if not 1.0 - 1e-12 <= self.n <= 2.0 + 1e-12:
            raise ValueError(f"wedge factor n={self.n} outside [1, 2]")
        lim = self.n * math.pi + 1e-9
        if not (-1e-9 <= self.phi_prime <= lim and -1e-9 <= self.phi <= lim):
            raise ValueError("wedge angles outside [0, n pi]")
        if self.L <= 0 or self.k <= 0:
            raise ValueError("L and k must be positive")


def _cot_f(n: float, beta: float, s: int, kL: float, pole_window: float) -> complex:
    """cot((pi + s beta) / 2n) * F(kL a^s(beta)) with the pole regularized."""
    u = math.pi + s * beta
    eps = u - 2.0 * math.pi * n * round(u / (2.0 * math.pi * n))
    if abs(eps) < pole_window:
        sgn = 1.0 if eps >= 0.0 else -1.0
        e4 = cmath.exp(0.25j * math.pi)
        return n * (math.sqrt(2.0 * math.pi * kL) * sgn - 2.0 * kL * eps * e4) * e4
    a = 2.0 * math.sin(0.5 * eps) ** 2
    return (1.0 / math.tan(u / (2.0 * n))) * fresnel_transition(kL * a)


def face_reflections(geom: WedgeGeometry, material: Material, frequency: float,
                     polarization: str = SOFT) -> tuple[complex, complex]:
    """Reflection factors of the 0-face and n-face, evaluated at the grazing
    angles of the incident and diffracted rays respectively."""
    g0 = min(geom.phi_prime, 0.5 * math.pi)
    gn = min(max(geom.n * math.pi - geom.phi, 0.0), 0.5 * math.pi)
    r0 = scalar_reflection(material, frequency, 0.5 * math.pi - g0, polarization)
    rn = scalar_reflection(material, frequency, 0.5 * math.pi - gn, polarization)
    return r0, rn


def utd_terms(geom: WedgeGeometry, r0: complex, rn: complex,
              pole_window: float = POLE_WINDOW) -> tuple[complex, complex, complex, complex]:
    n, kL = geom.n, geom.k * geom.L
    pre = -cmath.exp(-0.25j * math.pi) / (2.0 * n * math.sqrt(2.0 * math.pi * geom.k))
    bm = geom.phi - geom.phi_prime
    bp = geom.phi + geom.phi_prime
    return (
        pre * _cot_f(n, bm, +1, kL, pole_window),
        pre * _cot_f(n, bm, -1, kL, pole_window),
        pre * r0 * _cot_f(n, bp, -1, kL, pole_window),
        pre * rn * _cot_f(n, bp, +1, kL, pole_window),
    )


def utd_diffraction(geom: WedgeGeometry, material: Material = DEFAULT_MATERIAL,
                    frequency: float = DEFAULT_FREQUENCY, polarization: str = SOFT,
                    pole_window: float = POLE_WINDOW) -> complex:
    """Four-term wedge diffraction coefficient (units sqrt(m))."""
    r0, rn = face_reflections(geom, material, frequency, polarization)
    return sum(utd_terms(geom, r0, rn, pole_window))


def _cot_f_array(n, beta, s, kL, pole_window):
    u = np.pi + s * beta
    eps = u - 2.0 * np.pi * n * np.round(u / (2.0 * np.pi * n))
    e4 = np.exp(0.25j * np.pi)
    near = np.abs(eps) < pole_window
    sgn = np.where(eps >= 0.0, 1.0, -1.0)
    limit = n * (np.sqrt(2.0 * np.pi * kL) * sgn - 2.0 * kL * eps * e4) * e4
    X = kL * 2.0 * np.sin(0.5 * eps) ** 2
    x = np.sqrt(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = 2j * x * np.exp(1j * X) * modfresnelm(x)[0]
        direct = F / np.tan(u / (2.0 * n))
    return np.where(near, limit, direct), eps


def utd_coefficients(n, phi_prime, phi, L, k, r0, rn, pole_window: float = POLE_WINDOW):
    """Vectorized four-term coefficient for arrays of wedge geometries.

    Returns (D, min_eps) where min_eps is the smallest distance of any term
    from its pole, handy for excluding the regularized window.
    """
    n, phi_prime, phi, L = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (n, phi_prime, phi, L)))
    kL = k * L
    pre = -np.exp(-0.25j * np.pi) / (2.0 * n * np.sqrt(2.0 * np.pi * k))
    bm = phi - phi_prime
    bp = phi + phi_prime
    t1, e1 = _cot_f_array(n, bm, +1, kL, pole_window)
    t2, e2 = _cot_f_array(n, bm, -1, kL, pole_window)
    t3, e3 = _cot_f_array(n, bp, -1, kL, pole_window)
    t4, e4 = _cot_f_array(n, bp, +1, kL, pole_window)
    D = pre * (t1 + t2 + r0 * t3 + rn * t4)
    min_eps = np.min(np.abs(np.stack([e1, e2, e3, e4])), axis=0)
    return D, min_eps


def boundary_coefficient(L: float) -> float:
    """|D| at which the diffracted field equals half the incident field."""
    return 0.5 * math.sqrt(L)


def clamp_diffracted(e_d: complex, e_i_magnitude: float) -> complex:
    if e_i_magnitude < 0:
        raise ValueError("incident magnitude must be non-negative")
    cap = 0.5 * e_i_magnitude
    m = abs(e_d)
    if m <= cap:
        return e_d
    return e_d * (cap / m)


def forward_scatter_loss(theta: float) -> float:
    """Attenuation (dB) of the diffracted field relative to the incident one
    for small deflection angles; continuous with the cap at 30 degrees."""
    if theta < 0 or theta > FORWARD_SCATTER_LIMIT + 1e-12:
        raise ValueError("forward-scatter law only defined for 0 <= theta <= 30 deg")
    deg = math.degrees(theta)
    return BOUNDARY_LOSS_DB + (MAX_FORWARD_LOSS_DB - BOUNDARY_LOSS_DB) / 30.0 * (30.0 - deg)


def deflection_angle(phi_prime: float, phi: float) -> float:
    """Angle between the incident propagation direction and the diffracted ray."""
    d = phi - phi_prime - math.pi
    return abs(math.remainder(d, 2.0 * math.pi))


# ---------------------------------------------------------------- interactions
@dataclass(frozen=True)
class Interaction:
    """Frequency-independent description of one interaction.

    Reflections carry the incidence angle from the wall normal; diffractions
    carry the wedge factor and both angles measured from the 0-face.
    """
    kind: str  # "R" or "D"
    material_index: int = 0
    theta: float = 0.0
    n: float = 2.0
    phi_prime: float = 0.0
    phi: float = 0.0


def describe_reflection(p_in, p_ref, edge, material_index: int = 0) -> Interaction:
    """Incidence angle at a vertical wall with 2D edge (ax, ay, bx, by)."""
    ax, ay, bx, by = edge
    tx, ty = bx - ax, by - ay
    tl = math.hypot(tx, ty)
    nx, ny = ty / tl, -tx / tl
    d = [b - a for a, b in zip(p_in, p_ref)]
    dl = math.sqrt(sum(c * c for c in d))
    c = min(1.0, abs(d[0] * nx + d[1] * ny) / dl)
    return Interaction("R", material_index, theta=math.acos(c))


def _cw_angle(ux, uy, vx, vy) -> float:
    """Clockwise rotation from u to v in [0, 2 pi)."""
    return (-math.atan2(ux * vy - uy * vx, ux * vx + uy * vy)) % (2.0 * math.pi)


def wedge_factor(vertex, prev_pt, next_pt) -> float:
    """n for the exterior wedge at a vertex of a CCW footprint."""
    ux, uy = next_pt[0] - vertex[0], next_pt[1] - vertex[1]
    wx, wy = prev_pt[0] - vertex[0], prev_pt[1] - vertex[1]
    return _cw_angle(ux, uy, wx, wy) / math.pi


def describe_diffraction(p_in, vertex, p_out, prev_pt, next_pt, material_index: int = 0) -> Interaction:
    """Wedge angles at a footprint vertex; the 0-face runs towards the next
    vertex, angles grow clockwise through the exterior."""
    ux, uy = next_pt[0] - vertex[0], next_pt[1] - vertex[1]
    n = wedge_factor(vertex, prev_pt, next_pt)
    lim = n * math.pi
    php = _cw_angle(ux, uy, p_in[0] - vertex[0], p_in[1] - vertex[1])
    ph = _cw_angle(ux, uy, p_out[0] - vertex[0], p_out[1] - vertex[1])
    return Interaction("D", material_index, n=n, phi_prime=min(php, lim), phi=min(ph, lim))


# ---------------------------------------------------------------- path field
@dataclass
class FieldContribution:
    amplitude: complex
    coefficients: list[complex]
    delay: float


def _lengths(points: Sequence[Sequence[float]]) -> list[float]:
    p = np.asarray(points, dtype=float)
    return [float(x) for x in np.linalg.norm(np.diff(p, axis=0), axis=1)]


def diffraction_factor(inter: Interaction, s_in: float, s_out: float, k: float,
                       material: Material, frequency: float, polarization: str) -> complex:
    """D * sqrt(s'/(s(s+s'))) after the cap or the forward-scatter law."""
    L = s_in * s_out / (s_in + s_out)
    geom = WedgeGeometry(inter.n, inter.phi_prime, inter.phi, L, k)
    D = utd_diffraction(geom, material, frequency, polarization)
    spread = math.sqrt(s_in / (s_out * (s_in + s_out)))
    e_i = s_in / (s_in + s_out)  # incident field carried on to the observer
    theta = deflection_angle(inter.phi_prime, inter.phi)
    if theta < FORWARD_SCATTER_LIMIT:
        mag = e_i * 10.0 ** (-forward_scatter_loss(theta) / 20.0)
        phase = D / abs(D) if D != 0 else -cmath.exp(-0.25j * math.pi)
        return mag * phase
    return clamp_diffracted(D * spread, e_i)


def path_field(points: Sequence[Sequence[float]], interactions: Sequence[Interaction],
               materials: Optional[MaterialTable] = None, frequency: float = DEFAULT_FREQUENCY,
               polarization: str = SOFT) -> FieldContribution:
    """Complex path gain relative to an isotropic unit transmitter.

    The propagation phase exp(-j 2 pi f tau) is not included; it is applied by
    whoever combines paths (coherent sums, MIMO matrices).

    ``points`` holds tx, the interaction points and rx (3D).  Reflections keep
    the spherical spreading of the unfolded run; each diffraction restarts it
    with the edge as the new caustic.
    """
    if len(points) != len(interactions) + 2:
        raise ValueError("need one point per interaction plus both endpoints")
    materials = materials or MaterialTable()
    k = wavenumber(frequency)
    seg = _lengths(points)
    total = sum(seg)
    # unfolded run lengths between consecutive diffraction points
    runs = [seg[0]]
    for i, inter in enumerate(interactions):
        if inter.kind == "D":
            runs.append(seg[i + 1])
        else:
            runs[-1] += seg[i + 1]
    coeffs: list[complex] = []
    amp = complex(C0 / frequency / (4.0 * math.pi * runs[0]))
    r = 0
    for inter in interactions:
        mat = materials.get(inter.material_index, frequency)
        if inter.kind == "R":
            c = scalar_reflection(mat, frequency, inter.theta, polarization)
        elif inter.kind == "D":
            c = diffraction_factor(inter, runs[r], runs[r + 1], k, mat, frequency, polarization)
            r += 1
        else:
            raise ValueError(f"unknown interaction kind {inter.kind!r}")
        coeffs.append(c)
        amp *= c
    return FieldContribution(amp, coeffs, total / C0)


def _fresnel_array(eps, theta, polarization):
    c = np.cos(theta)
    root = np.sqrt(eps - np.sin(theta) ** 2)
    if polarization == SOFT:
        return (c - root) / (c + root)
    if polarization == HARD:
        return -(root - eps * c) / (root + eps * c)
    raise ValueError(f"unknown polarization {polarization!r}")


def batch_path_fields(points_list: Sequence[Sequence[Sequence[float]]],
                      interactions_list: Sequence[Sequence[Interaction]],
                      materials: Optional[MaterialTable] = None, frequency: float = DEFAULT_FREQUENCY,
                      polarization: str = SOFT) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized path_field for many paths: (complex amplitudes, delays)."""
    materials = materials or MaterialTable()
    k = wavenumber(frequency)
    P = len(points_list)
    totals = np.zeros(P)
    first_run = np.zeros(P)
    r_eps, r_theta, r_path = [], [], []
    d_eps, d_n, d_php, d_ph, d_sin, d_sout, d_path = [], [], [], [], [], [], []
    eps_cache: dict[int, complex] = {}

    def eps_of(idx):
        if idx not in eps_cache:
            eps_cache[idx] = materials.get(idx, frequency).permittivity(frequency)
        return eps_cache[idx]

    for i, (pts, inters) in enumerate(zip(points_list, interactions_list)):
        seg = [math.dist(a, b) for a, b in zip(pts[:-1], pts[1:])]
        totals[i] = sum(seg)
        runs = [seg[0]]
        for j, it in enumerate(inters):
            if it.kind == "D":
                runs.append(seg[j + 1])
            else:
                runs[-1] += seg[j + 1]
        first_run[i] = runs[0]
        r = 0
        for it in inters:
            if it.kind == "R":
                r_eps.append(eps_of(it.material_index))
                r_theta.append(min(it.theta, 0.5 * math.pi - 1e-12))
                r_path.append(i)
            else:
                d_eps.append(eps_of(it.material_index))
                d_n.append(it.n)
                d_php.append(it.phi_prime)
                d_ph.append(it.phi)
                d_sin.append(runs[r])
                d_sout.append(runs[r + 1])
                d_path.append(i)
                r += 1
    amp = ((C0 / frequency) / (4.0 * math.pi * first_run)).astype(complex)
    if r_path:
        g = _fresnel_array(np.asarray(r_eps), np.asarray(r_theta), polarization)
        np.multiply.at(amp, np.asarray(r_path), g)
    if d_path:
        n = np.asarray(d_n)
        php = np.asarray(d_php)
        ph = np.asarray(d_ph)
        s_in = np.asarray(d_sin)
        s_out = np.asarray(d_sout)
        eps = np.asarray(d_eps)
        L = s_in * s_out / (s_in + s_out)
        g0 = np.minimum(php, 0.5 * np.pi)
        gn = np.clip(n * np.pi - ph, 0.0, 0.5 * np.pi)
        r0 = _fresnel_array(eps, np.minimum(0.5 * np.pi - g0, 0.5 * np.pi - 1e-12), polarization)
        rn = _fresnel_array(eps, np.minimum(0.5 * np.pi - gn, 0.5 * np.pi - 1e-12), polarization)
        D, _ = utd_coefficients(n, php, ph, L, k, r0, rn)
        spread = np.sqrt(s_in / (s_out * (s_in + s_out)))
        e_i = s_in / (s_in + s_out)
        ed = D * spread
        mag = np.abs(ed)
        cap = 0.5 * e_i
        with np.errstate(divide="ignore", invalid="ignore"):
            ed = np.where(mag > cap, ed * (cap / mag), ed)
        theta = np.abs(np.remainder(ph - php - np.pi + np.pi, 2.0 * np.pi) - np.pi)
        fwd = theta < FORWARD_SCATTER_LIMIT
        if fwd.any():
            loss = BOUNDARY_LOSS_DB + (MAX_FORWARD_LOSS_DB - BOUNDARY_LOSS_DB) / 30.0 * (30.0 - np.degrees(theta))
            absd = np.abs(D)
            with np.errstate(divide="ignore", invalid="ignore"):
                phase = np.where(absd > 0, D / absd, -np.exp(-0.25j * np.pi))
            ed = np.where(fwd, e_i * 10.0 ** (-loss / 20.0) * phase, ed)
        np.multiply.at(amp, np.asarray(d_path), ed)
    return amp, totals / C0
