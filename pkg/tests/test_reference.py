import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation
from scipy.special import spherical_in, spherical_kn

from tdscatter.potentials import MaterialParams
from tdscatter.reference import (Multipole, SphereScenario, bessel_ik, incident_field,
                                 multipole_fields, sphere_interior_field,
                                 sphere_scattered_field)


def test_bessel_closed_forms():
    z = np.array([0.3, 1.0, 2.5 + 1.5j, 7.0 - 3j])
    i, di, k, dk = bessel_ik(2, z)
    assert np.allclose(i[0], np.sinh(z) / z, rtol=1e-14)
    assert np.allclose(k[0], 0.5 * np.pi * np.exp(-z) / z, rtol=1e-14)
    assert np.allclose(i[1], (z * np.cosh(z) - np.sinh(z)) / z ** 2, rtol=1e-12)
    assert np.allclose(k[1], 0.5 * np.pi * np.exp(-z) * (1 / z + 1 / z ** 2), rtol=1e-14)
    assert np.allclose(di[0], i[1], rtol=1e-14)
    assert i[0][1] == pytest.approx(np.sinh(1.0), rel=1e-15)


@pytest.mark.parametrize("n", [0, 1, 4, 12])
def test_bessel_against_scipy(n):
    z = np.array([0.05, 0.7, 3.0, 25.0])
    i, di, k, dk = bessel_ik(n, z)
    assert np.allclose(i[n].real, spherical_in(n, z), rtol=1e-12)
    assert np.allclose(di[n].real, spherical_in(n, z, derivative=True), rtol=1e-11)
    assert np.allclose(k[n].real, spherical_kn(n, z), rtol=1e-12)
    assert np.allclose(dk[n].real, spherical_kn(n, z, derivative=True), rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 40.0), st.floats(-30.0, 30.0), st.integers(0, 15))
def test_bessel_wronskian(re, im, n):
    z = complex(re, im)
    i, di, k, dk = bessel_ik(n, z, scaled=True)
    # i_n k_n' - i_n' k_n = -pi / (2 z^2); the exponential scalings cancel
    w = i[n] * dk[n] - di[n] * k[n]
    assert abs(w + np.pi / (2 * z ** 2)) < 1e-9 * abs(np.pi / (2 * z ** 2))


def test_bessel_rejects_left_half_plane():
    with pytest.raises(ValueError):
        bessel_ik(1, -1.0)
    with pytest.raises(ValueError):
        bessel_ik(-1, 1.0)


def _fd_curl(f, x, h=1e-5):
    J = np.empty((3, 3), complex)
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        J[:, a] = (f(x + e) - f(x - e)) / (2 * h)
    return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


@pytest.mark.parametrize("kind,parity,radial", [("M", "e", "i"), ("N", "o", "k"),
                                                ("N", "e", "i"), ("M", "o", "k")])
def test_multipole_curls(kind, parity, radial):
    kappa = 1.3 + 0.6j
    x = np.array([0.4, -0.7, 0.9])
    F = lambda p: multipole_fields(2, kind, parity, radial, kappa, p[None])[0][0]
    C = lambda p: multipole_fields(2, kind, parity, radial, kappa, p[None])[1][0]
    assert np.allclose(_fd_curl(F, x), C(x), rtol=1e-7, atol=1e-9)
    # modified vector Helmholtz equation: curl curl F = -kappa^2 F
    assert np.allclose(_fd_curl(C, x), -kappa ** 2 * F(x), rtol=1e-7, atol=1e-9)
    with pytest.raises(ValueError):
        multipole_fields(1, "X", parity, radial, kappa, x[None])


def _sphere_points(n, r, seed=0):
    v = np.random.default_rng(seed).standard_normal((n, 3))
    return r * v / np.linalg.norm(v, axis=1)[:, None]


@pytest.mark.parametrize("mode", [Multipole(1, "N", "e"), Multipole(2, "M", "o", 0.5 - 1j)])
def test_transmission_conditions(mode):
    mat = MaterialParams(eps=3.0, mu=1.7)
    sc = SphereScenario(mat=mat, s=0.8 + 1.2j, incident=(mode,))
    n = _sphere_points(12, 1.0)
    Ei, Ci = incident_field(sc, n)
    Es, Cs = sphere_scattered_field(sc, n * (1 + 1e-12))
    Et, Ct = sphere_interior_field(sc, n * (1 - 1e-12))
    tang = lambda v: np.cross(n, v)
    scale = np.abs(Ei).max()
    assert np.abs(tang(Ei + Es) - tang(Et)).max() < 1e-9 * scale
    assert np.abs(tang(Ci + Cs) / mat.mu0 - tang(Ct) / 1.7).max() < 1e-9 * np.abs(Ci).max()


def test_no_contrast_gives_no_scattering():
    sc = SphereScenario(mat=MaterialParams(), s=1.5 + 0.3j,
                        incident=(Multipole(1, "N", "e"), Multipole(3, "M", "o")))
    x = _sphere_points(5, 2.0)
    Es, _ = sphere_scattered_field(sc, x)
    assert np.abs(Es).max() < 1e-13
    Et, _ = sphere_interior_field(sc, 0.5 * x / 2)
    Ei, _ = incident_field(sc, 0.5 * x / 2)
    assert np.allclose(Et, Ei, rtol=1e-12, atol=1e-14)


def test_perfect_conductor_kills_tangential_field():
    sc = SphereScenario(radius=0.8, s=2.0 - 1j, pec=True, plane_wave=([1, 1, 0], [0, 0, 1]),
                        L=30)
    n = _sphere_points(10, 1.0, seed=3)
    x = 0.8 * (1 + 1e-12) * n
    Ei, _ = incident_field(sc, x)
    Es, _ = sphere_scattered_field(sc, x)
    assert np.abs(np.cross(n, Ei + Es)).max() < 1e-8 * np.abs(Ei).max()
    with pytest.raises(ValueError):
        sphere_interior_field(sc, [[0, 0, 0.1]])


def test_plane_wave_expansion():
    s = 1.0 + 0.5j
    d, p = np.array([0.0, 0.6, 0.8]), np.array([1.0, 0.0, 0.0])
    sc = SphereScenario(s=s, plane_wave=(d, p), L=25)
    x = np.array([[0.3, 0.2, 1.5], [-2.0, 1.0, 0.4], [0.1, -0.1, -0.6]])
    E, C = incident_field(sc, x)
    phase = np.exp(-s * x @ d)
    assert np.allclose(E, phase[:, None] * p, rtol=1e-10, atol=1e-12)
    assert np.allclose(C, -s * phase[:, None] * np.cross(d, p), rtol=1e-10, atol=1e-12)
    with pytest.raises(ValueError):
        SphereScenario(plane_wave=(d, d))._frame()


def test_scattering_is_rotation_invariant():
    mat = MaterialParams(eps=2.0)
    d, p = np.array([0, 0, 1.0]), np.array([1.0, 0, 0])
    R = Rotation.from_euler("zyx", [0.4, -1.1, 2.0]).as_matrix()
    x = np.array([[0.5, 1.8, -1.0], [2.0, 0.1, 0.3]])
    E1, _ = sphere_scattered_field(SphereScenario(mat=mat, s=1.2, plane_wave=(d, p)), x)
    E2, _ = sphere_scattered_field(SphereScenario(mat=mat, s=1.2, plane_wave=(R @ d, R @ p)),
                                   x @ R.T)
    assert np.allclose(E2, E1 @ R.T, rtol=1e-10, atol=1e-13)


def test_series_truncation():
    mat = MaterialParams(eps=2.0)
    pw = ([0, 0, 1], [1, 0, 0])
    x = np.array([[0.3, 0.2, 1.5], [-2.0, 1.0, 0.4]])
    a, _ = sphere_scattered_field(SphereScenario(mat=mat, s=1 + 0.5j, plane_wave=pw, L=20), x)
    b, _ = sphere_scattered_field(SphereScenario(mat=mat, s=1 + 0.5j, plane_wave=pw, L=40), x)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-14)
    with pytest.raises(ArithmeticError):
        sphere_scattered_field(SphereScenario(mat=mat, s=1 + 0.5j, plane_wave=pw, L=3), x)
    with pytest.raises(ValueError):
        sphere_scattered_field(SphereScenario(mat=mat), [[0, 0, 0.5]])
