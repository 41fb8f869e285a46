import numpy as np
import pytest

from tdscatter.geometry import (CurlConformingSurfaceSpace, Density, DivConformingSpace,
                                icosphere)
from tdscatter.potentials import (BioMatrices, LaplaceParameter, MaterialParams, QuadConfig,
                                  _Accumulator, _assemble_singular, _assembly_plan,
                                  assemble_bios, calderon, eval_scattered, layer_potentials,
                                  verify_jump, yukawa)
from tdscatter.quadrature import gauss_triangle
from tdscatter.reference import multipole_fields


def test_yukawa_values():
    assert yukawa([0, 0, 0], [0, 0, 1], 1.0) == pytest.approx(np.exp(-1) / (4 * np.pi))
    st = 2 + 3j
    assert yukawa([1, 2, 3], [1, 2, 5], st) == pytest.approx(np.exp(-2 * st) / (8 * np.pi))
    with pytest.raises(ValueError):
        yukawa([0, 0, 0], [0, 0, 0], 1.0)


def test_parameter_validation():
    with pytest.raises(ValueError):
        LaplaceParameter(0.0 + 1j)
    lp = LaplaceParameter(0.5 + 2j)
    assert lp.sigma == 0.5 and lp.sigma_under == 0.5
    assert LaplaceParameter(3.0).sigma_under == 1.0
    with pytest.raises(ValueError):
        MaterialParams(eps=-1.0)


def _brute_force_regular(sm, ds, st, order=12):
    """V and K contributions of all panel pairs without shared vertices by a
    plain tensor Gauss rule."""
    p, w = gauss_triangle(order)
    x = sm.map_points(p)
    W = w[None] * 2 * sm.areas[:, None]
    T = sm.n_triangles
    shared = (sm.triangles[:, None, :, None] == sm.triangles[None, :, None, :]).sum((2, 3))
    V = np.zeros((ds.dim, ds.dim), complex)
    K = np.zeros((ds.dim, ds.dim), complex)
    for a in range(T):
        fa = ds.values(np.full(len(p), a), x[a])
        for b in range(T):
            if shared[a, b]:
                continue
            d = x[a][:, None] - x[b][None]
            r = np.linalg.norm(d, axis=2)
            G = np.exp(-st * r) / (4 * np.pi * r)
            g = -G * (1 + st * r) / r ** 2
            fb = ds.values(np.full(len(p), b), x[b])
            ww = W[a][:, None] * W[b][None]
            for i in range(3):
                for j in range(3):
                    I, J = sm.tri_edges[a, i], sm.tri_edges[b, j]
                    V[I, J] += (-(ww * G).sum() * ds.div[a, i] * ds.div[b, j]
                                - st ** 2 * (ww * G * (fa[:, i] @ fb[:, j].T)).sum())
                    cr = np.cross(g[..., None] * d, fb[None, :, j, :])
                    K[I, J] += (ww * np.einsum("pqk,pk->pq", cr, fa[:, i])).sum()
    return V, K


def test_assembly_matches_brute_force_on_regular_pairs():
    sm = icosphere(0)
    ds = DivConformingSpace(sm)
    st = 1.0 + 0.5j
    quad = QuadConfig(regular_order=12, near_order=12)
    B = assemble_bios(sm, ds, st, quad)
    acc = _Accumulator(sm, ds, st)
    _assemble_singular(acc, _assembly_plan(sm, quad), quad.singular_order)
    Vs, Ks = acc.matrices()
    Vref, Kref = _brute_force_regular(sm, ds, st)
    assert np.abs(B.V - Vs - Vref).max() < 1e-12 * np.abs(Vref).max()
    assert np.abs(B.K - Ks - Kref).max() < 1e-12 * np.abs(Kref).max()
    # default orders stay within the regular-pair quadrature error
    D = assemble_bios(sm, ds, st)
    assert np.abs(D.V - B.V).max() < 1e-5 * np.abs(B.V).max()


def test_operator_symmetries():
    sm = icosphere(1)
    ds = DivConformingSpace(sm)
    B = assemble_bios(sm, ds, 1.3 + 0.7j)
    assert np.abs(B.V - B.V.T).max() < 1e-7 * np.abs(B.V).max()
    assert np.allclose(B.Vt, -B.V) and np.allclose(B.Kt, -B.K)
    real = assemble_bios(sm, ds, 1.3)
    assert np.abs(real.V.imag).max() == 0 and np.abs(real.K.imag).max() == 0


def test_bio_dump_roundtrip(tmp_path):
    sm = icosphere(0)
    B = assemble_bios(sm, DivConformingSpace(sm), 1.0 + 1j)
    B.dump(tmp_path / "bio.bin")
    V, K, Q, G = BioMatrices.load_dump(tmp_path / "bio.bin")
    assert np.array_equal(V, B.V) and np.array_equal(K, B.K)
    assert np.array_equal(Q, B.Q) and np.array_equal(G, B.G)


def test_layer_potentials_match_direct_quadrature():
    sm = icosphere(1)
    ds = DivConformingSpace(sm)
    st = 0.8 + 1.1j
    c = np.random.default_rng(0).standard_normal(ds.dim)
    pts = np.array([[0.0, 0.0, 3.0], [2.0, -1.0, 0.5]])
    S, D = layer_potentials(ds, c, pts, st)
    p, w = gauss_triangle(12)
    x = sm.map_points(p).reshape(-1, 3)
    W = (w[None] * 2 * sm.areas[:, None]).ravel()
    idx = np.repeat(np.arange(sm.n_triangles), len(w))
    f = ds.evaluate(c, idx, x)
    divf = ds.evaluate_div(c, idx)
    for k, xp in enumerate(pts):
        d = xp - x
        r = np.linalg.norm(d, axis=1)
        G = np.exp(-st * r) / (4 * np.pi * r)
        g = -G * (1 + st * r) / r ** 2
        curl = np.sum(W[:, None] * np.cross(g[:, None] * d, f), axis=0)
        # grad int G div f - st^2 int G f
        single = np.sum(W[:, None] * (g * divf)[:, None] * d, axis=0) \
            - st ** 2 * np.sum(W[:, None] * G[:, None] * f, axis=0)
        assert np.linalg.norm(D[k] - curl) < 1e-5 * np.linalg.norm(curl)
        assert np.linalg.norm(S[k] - single) < 1e-5 * np.linalg.norm(single)


def test_evaluation_near_surface_rejected():
    sm = icosphere(1)
    ds = DivConformingSpace(sm)
    with pytest.raises(ValueError):
        layer_potentials(ds, np.ones(ds.dim), sm.centroids[:1] * 1.01, 1.0)


def _exact_traces(s, mat, L):
    """Cauchy data of a radiating multipole on icosphere(L)."""
    F = lambda p: multipole_fields(1, "N", "e", "k", s, p)
    sm = icosphere(L)
    ds = DivConformingSpace(sm)
    cs = CurlConformingSurfaceSpace(ds)

    def mt(x):
        E, _ = F(x)
        n = x / np.linalg.norm(x, axis=1)[:, None]
        return E - np.sum(E * n, 1)[:, None] * n

    def jt(x):
        _, C = F(x)
        n = x / np.linalg.norm(x, axis=1)[:, None]
        return np.cross(n, C) / (s * mat.mu0)

    return F, ds, Density(ds.interpolate(jt), "div"), Density(cs.interpolate(mt), "curl")


def test_representation_reproduces_radiating_field():
    """Exterior representation from exact traces reproduces a radiating field
    outside and vanishes inside, with second-order convergence."""
    s = 1.0 + 0.5j
    mat = MaterialParams()
    out = np.array([[0, 0, 2.5], [1.8, 0.5, -1.0], [0, -3, 0.2]])
    inside = np.array([[0, 0, 0.2], [0.3, -0.2, 0.1]])
    errs, ext = [], []
    for L in (1, 2):
        F, ds, j, m = _exact_traces(s, mat, L)
        Eo, Co = eval_scattered(j, m, out, s, mat, ds)
        Ei, _ = eval_scattered(j, m, inside, s, mat, ds)
        Ex, Cx = F(out)
        errs.append(np.linalg.norm(Eo - Ex) / np.linalg.norm(Ex))
        ext.append(np.linalg.norm(Ei) / np.linalg.norm(Ex))
        assert np.linalg.norm(Co - Cx) / np.linalg.norm(Cx) < 0.07
    assert errs[1] < 0.02 and errs[0] / errs[1] > 3
    assert ext[1] < 0.05 and ext[0] / ext[1] > 3


def test_eval_scattered_checks_density_kinds():
    s, mat = 1.0, MaterialParams()
    _, ds, j, m = _exact_traces(s, mat, 0)
    with pytest.raises(ValueError):
        eval_scattered(m, j, [[0, 0, 3.0]], s, mat, ds)


def test_jump_relations_converge():
    sm_levels = (1, 2)
    reports = []
    for L in sm_levels:
        sm = icosphere(L)
        ds = DivConformingSpace(sm)
        cs = CurlConformingSurfaceSpace(ds)

        def tangential(a):
            def f(x):
                n = x / np.linalg.norm(x, axis=1)[:, None]
                v = a(x)
                return v - np.sum(v * n, 1)[:, None] * n
            return f

        j = Density(ds.interpolate(tangential(lambda x: np.array([1.0, 0.3, -0.2])
                                              + 0.5 * x[:, [1, 2, 0]])), "div")
        m = Density(cs.interpolate(tangential(lambda x: np.array([0.2, 1.0, 0.5])
                                              * np.cos(x[:, [2, 0, 1]]))), "curl")
        reports.append(verify_jump(j, m, 1 + 1j, sm, ds).defects)
    for key in reports[0]:
        assert reports[0][key] / reports[1][key] > 1.3, key
    for key in ("D", "Dt", "curlE"):
        assert reports[1][key] < 0.1


def test_calderon_bc_level_zero():
    sm = icosphere(0)
    ds = DivConformingSpace(sm)
    C = calderon(sm, ds, 1.0)
    assert np.linalg.cond(C.mass) < 10
    assert 0 < C.idempotency_defect() < 0.3
    with pytest.raises(ValueError):
        calderon(sm, ds, 1.0, test="nope")
