from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdscatter.quadrature import (PanelPairClass, classify_pair, gauss_line, gauss_tet,
                                  gauss_triangle, singular_pair_rule, tensor_triangle_rule)


def tri_monomial(a, b):
    # integral of x^a y^b over the reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def tet_monomial(a, b, c):
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_gauss_line_exact_to_degree(n):
    x, w = gauss_line(n)
    for k in range(2 * n):
        assert np.dot(w, x ** k) == pytest.approx(1.0 / (k + 1), rel=1e-13)


@pytest.mark.parametrize("order", range(1, 21))
def test_triangle_rule_exactness(order):
    p, w = gauss_triangle(order)
    assert w.sum() == pytest.approx(0.5, rel=1e-13)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            val = np.dot(w, p[:, 0] ** a * p[:, 1] ** b)
            assert val == pytest.approx(tri_monomial(a, b), rel=1e-10, abs=1e-15)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 6, 9])
def test_tet_rule_exactness(order):
    p, w = gauss_tet(order)
    assert w.sum() == pytest.approx(1 / 6, rel=1e-13)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            for c in range(order + 1 - a - b):
                val = np.dot(w, p[:, 0] ** a * p[:, 1] ** b * p[:, 2] ** c)
                assert val == pytest.approx(tet_monomial(a, b, c), rel=1e-10, abs=1e-15)


def test_rules_reject_unsupported_orders():
    for bad in (0, 21, 2.5):
        with pytest.raises(ValueError):
            gauss_triangle(bad)
    with pytest.raises(ValueError):
        gauss_tet(17)
    with pytest.raises(ValueError):
        singular_pair_rule(PanelPairClass.DISJOINT)


def test_rules_are_read_only():
    p, w = gauss_triangle(4)
    with pytest.raises(ValueError):
        w[0] = 1.0


def test_classify_pair():
    assert classify_pair([0, 1, 2], [3, 4, 5]) == PanelPairClass.DISJOINT
    assert classify_pair([0, 1, 2], [2, 4, 5]) == PanelPairClass.VERTEX
    assert classify_pair([0, 1, 2], [1, 2, 5]) == PanelPairClass.EDGE
    assert classify_pair([0, 1, 2], [2, 0, 1]) == PanelPairClass.COINCIDENT


@pytest.mark.parametrize("cls", [1, 2, 3])
def test_singular_rules_integrate_polynomials(cls):
    X, Y, W = singular_pair_rule(cls, 5)
    assert W.sum() == pytest.approx(0.25, rel=1e-13)
    # products of reference-triangle monomials in both panels
    for (a, b, c, d) in [(1, 0, 0, 1), (2, 1, 0, 0), (0, 2, 1, 1), (1, 1, 1, 1)]:
        val = np.sum(W * X[:, 0] ** a * X[:, 1] ** b * Y[:, 0] ** c * Y[:, 1] ** d)
        assert val == pytest.approx(tri_monomial(a, b) * tri_monomial(c, d), rel=1e-12)


def test_singular_rule_smooth_coupled_integrand():
    # |x - y|^2 over the reference triangle with itself: 2 (E|x|^2 - |E x|^2) / 4
    X, Y, W = singular_pair_rule(PanelPairClass.COINCIDENT, 4)
    val = np.sum(W * np.sum((X - Y) ** 2, axis=1))
    assert val == pytest.approx(1.0 / 18.0, rel=1e-13)


def _pair_integral(Tx, Ty, cls, n):
    X, Y, W = singular_pair_rule(cls, n)
    m = lambda T, p: T[0] + p[:, :1] * (T[1] - T[0]) + p[:, 1:] * (T[2] - T[0])
    area = lambda T: 0.5 * abs((T[1, 0] - T[0, 0]) * (T[2, 1] - T[0, 1])
                               - (T[1, 1] - T[0, 1]) * (T[2, 0] - T[0, 0]))
    r = np.linalg.norm(m(Tx, X) - m(Ty, Y), axis=1)
    return np.sum(W / r) * 4 * area(Tx) * area(Ty)


# Reference values of the double integral of 1/|x - y|: the inner integral in
# closed form (planar triangle potential), the outer one by adaptive
# quadrature to 1e-12.
REF = np.array([[0, 0], [1, 0], [0, 1.0]])
SINGULAR_CASES = [
    ("coincident", REF, PanelPairClass.COINCIDENT, 1.0030658847731808),
    ("edge", np.array([[0, 0], [1, 0], [0.3, -0.8]]), PanelPairClass.EDGE, 0.3608684560747718),
    ("vertex", np.array([[0, 0], [-1, 0.2], [-0.3, -1.0]]), PanelPairClass.VERTEX,
     0.2773906486882255),
]


@pytest.mark.parametrize("name,Ty,cls,exact", SINGULAR_CASES, ids=[c[0] for c in SINGULAR_CASES])
def test_singular_rule_coulomb_kernel(name, Ty, cls, exact):
    errs = [abs(_pair_integral(REF, Ty, cls, n) - exact) / exact for n in (3, 5, 8)]
    assert errs[2] < 2e-7
    assert errs[0] > errs[1] > errs[2]


def test_tensor_rule_matches_product():
    X, Y, W = tensor_triangle_rule(3)
    assert W.sum() == pytest.approx(0.25, rel=1e-13)
    val = np.sum(W * X[:, 0] * Y[:, 1] ** 2)
    assert val == pytest.approx(tri_monomial(1, 0) * tri_monomial(0, 2), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_triangle_order_ten_property(a, b):
    p, w = gauss_triangle(10)
    val = np.dot(w, p[:, 0] ** a * p[:, 1] ** b)
    assert val == pytest.approx(tri_monomial(a, b), rel=1e-11)
