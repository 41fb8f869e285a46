import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdscatter.geometry import EdgeElementSpace, ball_mesh, reference_tet_mesh
from tdscatter.interior_fem import (assemble_interior, assemble_load, bilinear_form,
                                    energy_identity_defects, energy_norm)
from tdscatter.potentials import MaterialParams
from tdscatter.quadrature import gauss_tet


@pytest.fixture(scope="module")
def ball():
    vm = ball_mesh(1)
    fem = EdgeElementSpace(vm)
    return vm, fem, assemble_interior(vm, fem, MaterialParams())


def _quadrature_matrices(vm, fem):
    """Element matrices by direct quadrature of the basis functions."""
    p, w = gauss_tet(2)
    bary = np.column_stack([1 - p.sum(1), p])
    n = fem.dim
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for t in range(vm.n_tets):
        vals = fem.values(np.full(len(w), t), bary)           # (Q, 6, 3)
        loc = np.einsum("qik,qjk,q->ij", vals, vals, w) * 6 * vm.volumes[t]
        c = fem.curls(t)
        e = vm.tet_edges[t]
        M[np.ix_(e, e)] += loc
        K[np.ix_(e, e)] += (c @ c.T) * vm.volumes[t]
    return M, K


def test_reference_tet_matrices_match_quadrature():
    vm = reference_tet_mesh()
    fem = EdgeElementSpace(vm)
    im = assemble_interior(vm, fem, MaterialParams())
    M, K = _quadrature_matrices(vm, fem)
    assert np.allclose(im.mass.toarray(), M, atol=1e-15)
    assert np.allclose(im.stiffness.toarray(), K, atol=1e-14)


def test_ball_matrices_match_quadrature(ball):
    vm, fem, im = ball
    M, K = _quadrature_matrices(vm, fem)
    assert np.abs(im.mass.toarray() - M).max() < 1e-14
    assert np.abs(im.stiffness.toarray() - K).max() < 1e-12


def test_constant_field_form(ball):
    vm, fem, im = ball
    u0 = np.array([1.0, -2.0, 0.5])
    u = fem.interpolate(lambda x: np.broadcast_to(u0, x.shape))
    s = 0.7 + 1.3j
    vol = vm.volumes.sum()
    assert bilinear_form(u, u, s, im) == pytest.approx(s ** 2 * (u0 @ u0) * vol, rel=1e-12)
    assert energy_norm(u, s, im) == pytest.approx(abs(s) * np.linalg.norm(u0) * np.sqrt(vol),
                                                  rel=1e-12)


def test_gradient_fields_only_see_mass(ball):
    vm, fem, im = ball
    u = fem.interpolate_gradient(lambda x: x[:, 0] ** 2 - x[:, 1] * x[:, 2])
    s = 2.0 + 0.5j
    assert bilinear_form(u, u, s, im) == pytest.approx(s ** 2 * (u @ im.mass @ u), rel=1e-12)


def test_weighted_mass_scales_with_material():
    vm = ball_mesh(0)
    fem = EdgeElementSpace(vm)
    im = assemble_interior(vm, fem, MaterialParams(eps=2.0, mu=1.5))
    assert np.allclose(im.weighted_mass.toarray(), 3.0 * im.mass.toarray())
    s = 1.0 + 1j
    op = im.operator(s).toarray()
    assert np.allclose(op, im.stiffness.toarray() + s ** 2 * 3.0 * im.mass.toarray())
    with pytest.raises(ValueError):
        assemble_interior(ball_mesh(0), fem, MaterialParams())


def test_load_of_constant_current(ball):
    vm, fem, im = ball
    c = np.array([0.2, 1.0, -0.4])
    s, mu = 1.5 - 0.5j, 2.0
    load = assemble_load(lambda x: np.broadcast_to(c, x.shape).astype(complex), fem, s,
                         MaterialParams(mu=mu))
    # the interpolant of a constant is exact, so (c, w_k) = (M u_c)_k
    uc = fem.interpolate(lambda x: np.broadcast_to(c, x.shape))
    assert np.allclose(load, -s * mu * (im.mass @ uc), atol=1e-14)
    assert np.array_equal(assemble_load(None, fem, s, MaterialParams()), np.zeros(fem.dim))


def test_energy_identity_suite(ball):
    _, _, im = ball
    ident, cont = energy_identity_defects(im, draws=200, rng=1)
    assert ident < 1e-12
    assert cont <= 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10.0), st.floats(-20.0, 20.0), st.integers(0, 2 ** 31))
def test_coercivity_identity_property(sr, si, seed):
    vm = ball_mesh(0)
    fem = EdgeElementSpace(vm)
    im = assemble_interior(vm, fem, MaterialParams())
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(fem.dim) + 1j * rng.standard_normal(fem.dim)
    s = complex(sr, si)
    lhs = (np.conj(s) * bilinear_form(u, np.conj(u), s, im)).real
    assert lhs == pytest.approx(sr * energy_norm(u, s, im) ** 2, rel=1e-12)
