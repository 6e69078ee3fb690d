import cmath
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from losray.em import (BOUNDARY_LOSS_DB, C0, HARD, SOFT, Interaction, Material, MaterialTable, WedgeGeometry,
                       _cot_f, batch_path_fields, boundary_coefficient, clamp_diffracted, describe_diffraction,
                       describe_reflection, forward_scatter_loss, fresnel_reflection, fresnel_transition,
                       parse_materials, path_field, utd_coefficients, utd_diffraction, wavenumber, wedge_factor)
from losray.scene import SceneParseError

mp.mp.dps = 30


def transition_oracle(X):
    """2j sqrt(X) exp(jX) * integral_{sqrt X}^inf exp(-j t^2) dt, via mpmath."""
    X = mp.mpf(X)
    x = mp.sqrt(X)
    a = x * mp.sqrt(2 / mp.pi)
    scale = mp.sqrt(mp.pi / 2)
    tail = scale * ((mp.mpf(1) / 2 - mp.fresnelc(a)) - 1j * (mp.mpf(1) / 2 - mp.fresnels(a)))
    return complex(2j * x * mp.exp(1j * X) * tail)


def fresnel_oracle(eps_r, sigma, f, angle, pol):
    eps = mp.mpc(eps_r, -sigma / (2 * mp.pi * f * mp.mpf(8.8541878128e-12)))
    c = mp.cos(angle)
    root = mp.sqrt(eps - mp.sin(angle) ** 2)
    if pol == SOFT:
        return complex((c - root) / (c + root))
    return complex((root - eps * c) / (root + eps * c))


def test_transition_special_values():
    assert fresnel_transition(0.0) == 0
    assert 0.95 <= abs(fresnel_transition(10.0)) <= 1.0
    assert 1 - 1e-3 <= abs(fresnel_transition(1000.0)) <= 1.0
    with pytest.raises(ValueError):
        fresnel_transition(-1.0)


@pytest.mark.parametrize("X", [1e-8, 1e-4, 0.01, 0.3, 1.0, 3.0, 5.5, 10.0, 100.0, 1e4, 1e6, 1e9])
def test_transition_matches_oracle(X):
    assert abs(fresnel_transition(X) - transition_oracle(X)) <= 1e-6 * abs(transition_oracle(X))


def test_reflection_closed_forms():
    m = Material(4.0, 0.0)
    for pol in (SOFT, HARD):
        assert fresnel_reflection(m, 3.5e9, 0.0, pol) == pytest.approx(-1 / 3, abs=1e-15)
    pec = Material(1.0, 1e12)
    assert fresnel_reflection(pec, 3.5e9, 0.3, SOFT) == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("pol", [SOFT, HARD])
def test_reflection_default_material_oracle(pol):
    m = Material()
    got = fresnel_reflection(m, 3.5e9, math.pi / 4, pol)
    ref = fresnel_oracle(m.epsilon_r, m.sigma, 3.5e9, mp.pi / 4, pol)
    assert abs(got - ref) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(0.0, 10.0), st.floats(1e8, 1e11), st.floats(0.0, 1.5707),
       st.sampled_from([SOFT, HARD]))
def test_reflection_passive(er, sig, f, ang, pol):
    assert abs(fresnel_reflection(Material(er, sig), f, ang, pol)) <= 1.0 + 1e-12


def test_material_table():
    t = parse_materials("3.5e9\n0 5.0 0.01\n1 3.0 0.0\n28e9\n0 6.0 0.2\n")
    assert t.get(0, 3.0e9) == Material(5.0, 0.01)
    assert t.get(0, 30e9) == Material(6.0, 0.2)
    assert t.get(7, 3.5e9) == t.default
    with pytest.raises(SceneParseError):
        parse_materials("0 5.0 0.01\n")


def test_pole_branch_gives_half_field():
    k = wavenumber(3.5e9)
    for L in (10.0, 50.0, 100.0):
        for n in (1.5, 2.0):
            pre = 1.0 / (2.0 * n * math.sqrt(2.0 * math.pi * k))
            term = pre * abs(_cot_f(n, math.pi, -1, k * L, math.radians(0.05)))
            assert term == pytest.approx(boundary_coefficient(L), rel=1e-12)


def test_pole_branch_continuous_with_direct():
    # just outside the window the direct product agrees with the limit form
    k = wavenumber(3.5e9)
    w = math.radians(0.05)
    for n in (1.5, 2.0):
        inside = _cot_f(n, math.pi - 0.999 * w, -1, k * 30.0, w)
        outside = _cot_f(n, math.pi - 1.001 * w, -1, k * 30.0, w)
        assert abs(inside - outside) < 0.01 * abs(inside)


def test_far_from_boundaries_below_cap():
    k = wavenumber(3.5e9)
    g = WedgeGeometry(1.5, math.radians(40), math.radians(160), 20.0, k)
    assert abs(utd_diffraction(g)) < boundary_coefficient(20.0)


def test_wedge_validation():
    with pytest.raises(ValueError):
        WedgeGeometry(2.5, 0.1, 0.2, 1.0, 1.0)
    with pytest.raises(ValueError):
        WedgeGeometry(1.5, 0.1, 5.0, 1.0, 1.0)


def test_vectorized_coefficients_match_scalar():
    rng = np.random.default_rng(0)
    k = wavenumber(3.5e9)
    for _ in range(200):
        n = rng.uniform(1.0, 2.0)
        php, ph = rng.uniform(0, n * math.pi, 2)
        L = rng.uniform(1, 200)
        g = WedgeGeometry(n, php, ph, L, k)
        d1 = utd_diffraction(g, Material(), 3.5e9, SOFT)
        from losray.em import face_reflections
        r0, rn = face_reflections(g, Material(), 3.5e9, SOFT)
        d2, _ = utd_coefficients(n, php, ph, L, k, r0, rn)
        assert abs(d1 - complex(d2)) <= 1e-9 * max(abs(d1), 1e-12)


def test_clamp_examples():
    assert clamp_diffracted(0.3 + 0j, 1.0) == 0.3
    z = clamp_diffracted(0.9 * cmath.exp(0.7j), 1.0)
    assert abs(z) == pytest.approx(0.5)
    assert cmath.phase(z) == pytest.approx(0.7)
    assert clamp_diffracted(0j, 1.0) == 0


@settings(max_examples=200)
@given(st.floats(0, 1e3), st.floats(-math.pi, math.pi), st.floats(0, 1e3))
def test_clamp_bounded(m, ph, ei):
    assert abs(clamp_diffracted(m * cmath.exp(1j * ph), ei)) <= 0.5 * ei * (1 + 1e-12)


def test_forward_scatter_values():
    assert forward_scatter_loss(0.0) == pytest.approx(30.0)
    assert forward_scatter_loss(math.radians(15)) == pytest.approx(18.0103, abs=1e-4)
    assert forward_scatter_loss(math.radians(30) - 1e-12) == pytest.approx(BOUNDARY_LOSS_DB, abs=1e-9)
    assert BOUNDARY_LOSS_DB == pytest.approx(6.0206, abs=1e-4)
    with pytest.raises(ValueError):
        forward_scatter_loss(math.radians(30.5))


def test_friis_direct_path():
    f = 3.5e9
    fc = path_field([(0, 0, 1.5), (100, 0, 1.5)], [], frequency=f)
    gain_db = 20 * math.log10(abs(fc.amplitude))
    assert gain_db == pytest.approx(-20 * math.log10(4 * math.pi * 100 * f / C0), abs=1e-9)
    assert gain_db == pytest.approx(-83.3, abs=0.05)


def test_delay_300m():
    fc = path_field([(0, 0, 1.5), (300, 0, 1.5)], [])
    assert fc.delay == pytest.approx(1.0007e-6, rel=1e-4)


def test_pec_reflection_unfolded():
    f = 3.5e9
    mats = MaterialTable({f: {0: Material(1.0, 1e12)}})
    pts = [(0, 0, 1.5), (30, 40, 1.5), (60, 0, 1.5)]
    inter = describe_reflection(pts[0], pts[1], (0.0, 40.0, 100.0, 40.0))
    fc = path_field(pts, [inter], mats, f)
    direct = path_field([(0, 0, 1.5), (100, 0, 1.5)], [], frequency=f)
    assert abs(fc.amplitude) == pytest.approx(abs(direct.amplitude), rel=1e-6)
    assert cmath.phase(fc.amplitude / direct.amplitude) == pytest.approx(math.pi, abs=1e-5)


def test_wedge_angles_square_corner():
    # CCW unit square, corner (1, 0): prev (0, 0), next (1, 1)
    assert wedge_factor((1, 0), (0, 0), (1, 1)) == pytest.approx(1.5)
    it = describe_diffraction((-1, -1), (1, 0), (3, 0.5), (0, 0), (1, 1))
    assert 0 <= it.phi_prime <= 1.5 * math.pi and 0 <= it.phi <= 1.5 * math.pi


def test_batch_matches_scalar_paths():
    rng = np.random.default_rng(3)
    pts_list, inter_list = [], []
    for _ in range(50):
        p0 = (0.0, 0.0, 1.5)
        v = (rng.uniform(20, 40), rng.uniform(-5, 5), 1.5)
        p1 = (rng.uniform(50, 90), rng.uniform(10, 40), 1.5)
        it = describe_diffraction(p0, v, p1, (v[0] - 5, v[1]), (v[0], v[1] + 5))
        pts_list.append([p0, v, p1])
        inter_list.append([it])
        p2 = (rng.uniform(10, 50), 20.0, 1.5)
        it2 = describe_reflection(p0, p2, (0.0, 20.0, 100.0, 20.0))
        pts_list.append([p0, p2, (rng.uniform(60, 90), 5.0, 1.5)])
        inter_list.append([it2])
    for pol in (SOFT, HARD):
        amps, delays = batch_path_fields(pts_list, inter_list, None, 3.5e9, pol)
        ref = np.array([path_field(p, i, None, 3.5e9, pol).amplitude for p, i in zip(pts_list, inter_list)])
        assert np.max(np.abs(amps - ref)) <= 1e-9 * np.max(np.abs(ref))
