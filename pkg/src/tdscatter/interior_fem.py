"""
Edge-element discretization of the interior operator.

The bilinear form is ``a(u, v; s) = (curl u, curl v) + s^2 (u, v)`` with the
plain (non-conjugated) pairing. Material weights enter only through the
weighted mass matrix used by the coupled system.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import TET_EDGES, EdgeElementSpace, VolumeMesh
from .potentials import MaterialParams
from .quadrature import gauss_tet


def _element_matrices(vm: VolumeMesh):
    """Local 6x6 stiffness and mass matrices of every tetrahedron,
    including global orientation signs."""
    g = vm.grad_bary                                           # (N, 4, 3)
    vol = vm.volumes
    a, b = TET_EDGES[:, 0], TET_EDGES[:, 1]
    # curl w_e = 2 grad(la) x grad(lb)
    curls = 2.0 * np.cross(g[:, a], g[:, b])                   # (N, 6, 3)
    Ke = vol[:, None, None] * np.einsum("nik,njk->nij", curls, curls)
    gg = np.einsum("nik,njk->nij", g, g)                       # (N, 4, 4)
    eye = np.eye(4)
    A, B = np.meshgrid(a, a, indexing="ij")
    C, D = np.meshgrid(b, b, indexing="ij")
    # edge i = (a_i, b_i), edge j = (a_j, b_j); integral of lambda_p lambda_q
    # over a tet is vol (1 + delta_pq) / 20
    ai, bi = A, C
    aj, bj = B, D
    Me = (vol[:, None, None] / 20.0) * (
        (1 + eye[ai, aj]) * gg[:, bi, bj]
        - (1 + eye[ai, bj]) * gg[:, bi, aj]
        - (1 + eye[bi, aj]) * gg[:, ai, bj]
        + (1 + eye[bi, bj]) * gg[:, ai, aj])
    sg = vm.tet_edge_signs
    S = sg[:, :, None] * sg[:, None, :]
    return Ke * S, Me * S


def _scatter(vm, local, n):
    rows = np.repeat(vm.tet_edges[:, :, None], 6, axis=2)
    cols = np.repeat(vm.tet_edges[:, None, :], 6, axis=1)
    M = sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    M.sum_duplicates()
    return M


@dataclass
class InteriorMatrices:
    """Curl-curl stiffness, unweighted mass and the ``eps mu`` weighted mass.

    ``operator(s)`` returns the matrix of ``a(., .; s/c)``, i.e.
    ``stiffness + s^2 * weighted_mass``; ``form(s)`` returns the unweighted
    ``stiffness + s^2 * mass``.
    """

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    weighted_mass: sp.csr_matrix

    def operator(self, s):
        return (self.stiffness + (s * s) * self.weighted_mass).tocsc()

    def form(self, s):
        return (self.stiffness + (s * s) * self.mass).tocsr()


def assemble_interior(vm: VolumeMesh, space: EdgeElementSpace,
                      mat: MaterialParams) -> InteriorMatrices:
    """Assemble stiffness and mass matrices on all edges of ``vm``.

    Piecewise-constant ``eps`` and ``mu`` per tetrahedron region tag give the
    weighted mass ``sum_t eps_t mu_t M_t`` so that the operator is
    ``a(., .; s / c)``.
    """
    if space.mesh is not vm:
        raise ValueError("space was not built on this volume mesh")
    Ke, Me = _element_matrices(vm)
    w = mat.region_value("eps", vm.tet_tags) * mat.region_value("mu", vm.tet_tags)
    n = vm.n_edges
    return InteriorMatrices(_scatter(vm, Ke, n), _scatter(vm, Me, n),
                            _scatter(vm, Me * w[:, None, None], n))


def assemble_load(J, space: EdgeElementSpace, s, mat: MaterialParams, order=4):
    """Load vector ``-s mu (J, w_k)``.

    Parameters
    ----------
    J : callable or None
        ``J(points) -> (P, 3)`` complex volumetric source at parameter s.
    """
    n = space.dim
    if J is None:
        return np.zeros(n, dtype=complex)
    vm = space.mesh
    rule = gauss_tet(order)
    lam = np.column_stack([1 - rule.nodes.sum(1), rule.nodes])            # (Q, 4)
    p = vm.vertices[vm.tets]                                               # (N, 4, 3)
    x = np.einsum("qa,nak->nqk", lam, p)
    vals = np.asarray(J(x.reshape(-1, 3)), dtype=complex).reshape(x.shape)
    N = vm.n_tets
    idx = np.broadcast_to(np.arange(N)[:, None], (N, len(rule.weights)))
    bary = np.broadcast_to(lam, (N,) + lam.shape)
    w = space.values(idx, bary)                                            # (N, Q, 6, 3)
    mu = mat.region_value("mu", vm.tet_tags)
    loc = np.einsum("nqk,nqek,q->ne", vals, w, rule.weights) * (6 * vm.volumes * mu)[:, None]
    out = np.zeros(n, dtype=complex)
    np.add.at(out, vm.tet_edges, -s * loc)
    return out


def energy_norm(u, s, im: InteriorMatrices) -> float:
    """``sqrt(||curl u||^2 + |s|^2 ||u||^2)`` with the unweighted mass."""
    u = np.asarray(u)
    val = np.vdot(u, im.stiffness @ u).real + abs(s) ** 2 * np.vdot(u, im.mass @ u).real
    return float(np.sqrt(max(val, 0.0)))


def bilinear_form(u, v, s, im: InteriorMatrices):
    """``a(u, v; s)`` with the non-conjugated pairing."""
    return np.asarray(u) @ (im.form(s) @ np.asarray(v))


def energy_identity_defects(im: InteriorMatrices, draws=200, rng=None):
    """Check the coercivity identity and the continuity bound on random data.

    For random complex ``u, v`` and ``s`` with positive real part returns
    ``(identity, continuity)`` where ``identity`` is the largest relative
    defect of ``Re(conj(s) a(u, conj(u); s)) = Re(s) |||u|||_s^2`` and
    ``continuity`` the largest ratio ``|a(u, v; s)| / (|||u|||_s |||v|||_s)``
    (at most one).
    """
    rng = np.random.default_rng(rng)
    n = im.stiffness.shape[0]
    ident, cont = 0.0, 0.0
    for _ in range(draws):
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        s = complex(rng.uniform(0.05, 5.0), rng.uniform(-10.0, 10.0))
        lhs = (np.conj(s) * bilinear_form(u, np.conj(u), s, im)).real
        rhs = s.real * energy_norm(u, s, im) ** 2
        ident = max(ident, abs(lhs - rhs) / rhs)
        ratio = abs(bilinear_form(u, v, s, im)) / (energy_norm(u, s, im) * energy_norm(v, s, im))
        cont = max(cont, ratio)
    return float(ident), float(cont)
