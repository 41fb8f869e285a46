"""
Quadrature rules on lines, triangles, tetrahedra and singular panel pairs.

Reference elements: the unit interval [0, 1]; the triangle with vertices
(0, 0), (1, 0), (0, 1) (measure 1/2); the tetrahedron with vertices at the
origin and the unit vectors (measure 1/6).

Singular panel-pair rules use the regularizing coordinate transforms of
Sauter and Schwab. Points are returned in reference triangle coordinates for
both panels and the weights sum to 1/4, the product of the two reference
areas; a caller maps them to panels with areas ``A_x, A_y`` by multiplying
the weights by ``4 A_x A_y``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


class PanelPairClass(IntEnum):
    """Adjacency of two triangles, equal to the number of shared vertices."""

    DISJOINT = 0
    VERTEX = 1
    EDGE = 2
    COINCIDENT = 3


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __iter__(self):
        return iter((self.nodes, self.weights))

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class PairRule:
    """Tensorized rule over two reference triangles."""

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    weights: np.ndarray

    def __iter__(self):
        return iter((self.x_nodes, self.y_nodes, self.weights))


@lru_cache(maxsize=None)
def _gauss_01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_line(n):
    """n-point Gauss-Legendre rule on [0, 1] (exact to degree 2n - 1)."""
    if n < 1:
        raise ValueError("need at least one point")
    x, w = _gauss_01(n)
    return QuadratureRule(x.copy(), w.copy())


def _collapsed_triangle(order):
    n = order // 2 + 1
    u, wu = roots_jacobi(n, 1.0, 0.0)        # weight (1 - t) on [-1, 1]
    v, wv = np.polynomial.legendre.leggauss(n)
    u, wu = 0.5 * (u + 1), wu / 4.0
    v, wv = 0.5 * (v + 1), wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U
    y = (1 - U) * V
    return np.stack([x.ravel(), y.ravel()], 1), np.outer(wu, wv).ravel()


_TRI_MAX = 20
_TET_MAX = 16


@lru_cache(maxsize=None)
def _triangle(order):
    if order == 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if order == 2:
        p = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return p, np.full(3, 1 / 6)
    if order in (3, 4):
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 1 / 3 - 0.223381589678011
        p = np.array([[a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                      [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
        return p, 0.5 * np.array([wa] * 3 + [wb] * 3)
    if order == 5:
        r = np.sqrt(15.0)
        a1, a2 = (6 - r) / 21, (6 + r) / 21
        w1, w2 = (155 - r) / 1200, (155 + r) / 1200
        p = np.array([[1 / 3, 1 / 3],
                      [a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
                      [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2]])
        return p, 0.5 * np.array([0.225] + [w1] * 3 + [w2] * 3)
    return _collapsed_triangle(order)


def gauss_triangle(order: int) -> QuadratureRule:
    """Rule on the reference triangle exact for polynomials of degree
    ``order`` (1 <= order <= 20). Weights sum to 1/2."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= _TRI_MAX:
        raise ValueError("unsupported triangle quadrature order %r" % (order,))
    p, w = _triangle(int(order))
    return QuadratureRule(p.copy(), w.copy())


@lru_cache(maxsize=None)
def _tet(order):
    if order == 1:
        return np.array([[0.25, 0.25, 0.25]]), np.array([1 / 6])
    if order == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        p = np.array([[b, b, b], [a, b, b], [b, a, b], [b, b, a]])
        return p, np.full(4, 1 / 24)
    n = order // 2 + 1
    u, wu = roots_jacobi(n, 2.0, 0.0)
    v, wv = roots_jacobi(n, 1.0, 0.0)
    t, wt = np.polynomial.legendre.leggauss(n)
    u, wu = 0.5 * (u + 1), wu / 8.0
    v, wv = 0.5 * (v + 1), wv / 4.0
    t, wt = 0.5 * (t + 1), wt / 2.0
    U, V, W = np.meshgrid(u, v, t, indexing="ij")
    x = U
    y = (1 - U) * V
    z = (1 - U) * (1 - V) * W
    w = np.einsum("i,j,k->ijk", wu, wv, wt).ravel()
    return np.stack([x.ravel(), y.ravel(), z.ravel()], 1), w


def gauss_tet(order: int) -> QuadratureRule:
    """Rule on the reference tetrahedron exact for polynomials of degree
    ``order`` (1 <= order <= 16). Weights sum to 1/6."""
    if not isinstance(order, (int, np.integer)) or not 1 <= order <= _TET_MAX:
        raise ValueError("unsupported tetrahedron quadrature order %r" % (order,))
    p, w = _tet(int(order))
    return QuadratureRule(p.copy(), w.copy())


def tensor_triangle_rule(order: int) -> PairRule:
    """Product rule for two disjoint panels."""
    p, w = _triangle(order)
    n = len(w)
    return PairRule(np.repeat(p, n, axis=0), np.tile(p, (n, 1)), np.outer(w, w).ravel())


def _cube(n):
    g, w = _gauss_01(n)
    grids = np.meshgrid(g, g, g, g, indexing="ij")
    pts = [a.ravel() for a in grids]
    ws = np.einsum("i,j,k,l->ijkl", w, w, w, w).ravel()
    return pts, ws


def _coincident(n):
    xi, e1, e2, e3 = _cube(n)[0]
    w0 = _cube(n)[1] * xi ** 3 * e1 ** 2 * e2
    xs, ys = [], []
    a = (xi, xi * (1 - e1 + e1 * e2))
    b = (xi * (1 - e1 * e2 * e3), xi * (1 - e1))
    xs += [a, b]
    ys += [b, a]
    a = (xi, xi * e1 * (1 - e2 + e2 * e3))
    b = (xi * (1 - e1 * e2), xi * e1 * (1 - e2))
    xs += [a, b]
    ys += [b, a]
    a = (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))
    b = (xi, xi * e1 * (1 - e2))
    xs += [a, b]
    ys += [b, a]
    return xs, ys, [w0] * 6


def _edge(n):
    xi, e1, e2, e3 = _cube(n)[0]
    w = _cube(n)[1]
    w1 = w * xi ** 3 * e1 ** 2
    w2 = w * xi ** 3 * e1 ** 2 * e2
    xs = [(xi, xi * e1 * e3),
          (xi, xi * e1),
          (xi * (1 - e1 * e2), xi * e1 * (1 - e2)),
          (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)),
          (xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3))]
    ys = [(xi * (1 - e1 * e2), xi * e1 * (1 - e2)),
          (xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3)),
          (xi, xi * e1 * e2 * e3),
          (xi, xi * e1),
          (xi, xi * e1 * e2)]
    return xs, ys, [w1, w2, w2, w2, w2]


def _vertex(n):
    xi, e1, e2, e3 = _cube(n)[0]
    w = _cube(n)[1] * xi ** 3 * e2
    a = (xi, xi * e1)
    b = (xi * e2, xi * e2 * e3)
    return [a, b], [b, a], [w, w]


def _to_standard(p):
    # (xi1, xi2) with 0 <= xi2 <= xi1 <= 1  ->  P0 + a (P1 - P0) + b (P2 - P0)
    return np.stack([p[0] - p[1], p[1]], axis=1)


@lru_cache(maxsize=None)
def _singular(cls, n):
    build = {PanelPairClass.COINCIDENT: _coincident,
             PanelPairClass.EDGE: _edge,
             PanelPairClass.VERTEX: _vertex}[cls]
    xs, ys, ws = build(n)
    X = np.concatenate([_to_standard(p) for p in xs])
    Y = np.concatenate([_to_standard(p) for p in ys])
    return X, Y, np.concatenate(ws)


def singular_pair_rule(cls, base_order: int = 5) -> PairRule:
    """Regularized rule for a pair of triangles sharing 1, 2 or 3 vertices.

    Vertex convention: shared vertices come first and in the same order on
    both panels (vertex: P0; edge: P0, P1; coincident: identical ordering).
    ``base_order`` is the number of Gauss points per dimension of the
    four-dimensional cube.
    """
    cls = PanelPairClass(cls)
    if cls == PanelPairClass.DISJOINT:
        raise ValueError("disjoint panels take a tensorized regular rule")
    if base_order < 1:
        raise ValueError("base_order must be positive")
    X, Y, W = _singular(cls, int(base_order))
    return PairRule(X.copy(), Y.copy(), W.copy())


def classify_pair(tri_a, tri_b) -> PanelPairClass:
    """Adjacency class from the number of shared vertex indices."""
    return PanelPairClass(len(set(map(int, tri_a)) & set(map(int, tri_b))))
