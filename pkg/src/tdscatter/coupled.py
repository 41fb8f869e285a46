"""
Boundary-field system coupling the interior edge-element discretization with
boundary integral equations for the exterior Cauchy data.

Unknowns are the interior field ``E`` (edge elements), the electric-type
density ``j`` (RWG, div space) and the magnetic-type density ``m`` (rotated
RWG, curl space). Rows are tested with the edge elements, the RWG functions
``f_i`` and the rotated functions ``g_i = n x f_i``::

    [ A(s)      s mu T^T          0          ] [E]   [ -s mu (J, w) - (mu/mu0) <n x curl E_inc, pi_t w> ]
    [ T         V / (s eps0)     -Q/2 + K    ] [j] = [ <E_inc, f>                                     ]
    [ 0         Q/2 + K          -V / (s mu0)] [m]   [ 0                                              ]

with ``A(s) = stiffness + s^2 eps mu mass``, ``T`` the trace pairing, ``V``
and ``K`` the Galerkin matrices at kernel parameter ``s / c0`` and ``Q`` the
pivot pairing. The third row uses ``<V~ g, g> = -V`` so that it reads
``(Q/2 + K) j - V m / (s mu0) = 0``.

The interior block is eliminated by a sparse LU factorization and the dense
boundary Schur complement is solved directly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (CurlConformingSurfaceSpace, Density, DivConformingSpace,
                       EdgeElementSpace, SurfaceMesh, VolumeMesh,
                       trace_coupling_matrix)
from .interior_fem import InteriorMatrices, assemble_interior, assemble_load, energy_norm
from .potentials import (DEFAULT_QUAD, BioMatrices, LaplaceParameter, MaterialParams,
                         QuadConfig, assemble_bios, eval_scattered)
from .quadrature import gauss_triangle


class SolveError(RuntimeError):
    """Numerically singular system or residual above tolerance."""


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass
class ScatteringData:
    """Excitation at one Laplace parameter.

    Parameters
    ----------
    incident : callable, optional
        ``incident(points) -> (E_inc, curl E_inc)``, each (P, 3) complex.
    J : callable, optional
        ``J(points) -> (P, 3)`` volumetric current in the obstacle.
    """

    incident: Optional[Callable] = None
    J: Optional[Callable] = None

    def channels(self, sm: SurfaceMesh, order: int = 4):
        """Surface samples ``(x, gamma_t curl E_inc, pi_t E_inc)`` at the
        quadrature points of every triangle; shapes (T, Q, 3)."""
        nodes, _ = gauss_triangle(order)
        x = sm.map_points(nodes)
        if self.incident is None:
            z = np.zeros(x.shape, dtype=complex)
            return x, z, z.copy()
        E, C = self.incident(x.reshape(-1, 3))
        E = np.asarray(E, complex).reshape(x.shape)
        C = np.asarray(C, complex).reshape(x.shape)
        n = sm.normals[:, None, :]
        gc = np.cross(n, C)
        pe = E - np.sum(E * n, axis=-1, keepdims=True) * n
        return x, gc, pe

    def scaled(self, factor):
        """Data multiplied by ``factor``."""
        inc = None if self.incident is None else (
            lambda p, f=self.incident: tuple(factor * np.asarray(v) for v in f(p)))
        J = None if self.J is None else (lambda p, f=self.J: factor * np.asarray(f(p)))
        return ScatteringData(inc, J)


def surface_trace_load(fem: EdgeElementSpace, sm: SurfaceMesh, values, order=4):
    """``<v, pi_t w_k>_Gamma`` for surface samples ``values`` (T, Q, 3) at the
    points of the degree-``order`` triangle rule."""
    nodes, w = gauss_triangle(order)
    x = sm.map_points(nodes)
    wt = fem.face_trace_values(sm, x)                           # (T, Q, 6, 3)
    loc = np.einsum("tqk,tqek,q->te", values, wt, w) * (2 * sm.areas)[:, None]
    out = np.zeros(fem.dim, dtype=complex)
    np.add.at(out, fem.mesh.tet_edges[sm.face_map[:, 0]], loc)
    return out


# ---------------------------------------------------------------------------
# System
# ---------------------------------------------------------------------------


@dataclass
class BlockSystem:
    """The 3x3 block system at one Laplace parameter.

    The interior unknowns are restricted to the free edge DOFs of ``fem``
    (all edges unless the space is coated). ``blocks[r][c]`` is ``None`` for
    structurally zero blocks.
    """

    s: LaplaceParameter
    mat: MaterialParams
    fem: EdgeElementSpace
    div: DivConformingSpace
    curl: CurlConformingSurfaceSpace
    interior: InteriorMatrices
    trace: sp.csr_matrix
    bio: BioMatrices
    blocks: list
    rhs: tuple

    @property
    def sizes(self):
        return self.fem.n_free, self.div.dim, self.curl.dim

    def matvec(self, E, j, m):
        """Apply the block matrix to a triple (E on free DOFs)."""
        x = (E, j, m)
        out = []
        for row in self.blocks:
            acc = 0
            for B, v in zip(row, x):
                if B is not None:
                    acc = acc + B @ v
            out.append(np.asarray(acc, dtype=complex))
        return tuple(out)

    def dense(self):
        """Full dense matrix (small problems and testing only)."""
        sizes = self.sizes
        rows = []
        for row, nr in zip(self.blocks, sizes):
            rows.append(np.hstack([
                np.zeros((nr, nc)) if B is None
                else (B.toarray() if sp.issparse(B) else np.asarray(B))
                for B, nc in zip(row, sizes)]))
        return np.vstack(rows).astype(complex)

    def rhs_vector(self):
        return np.concatenate([np.asarray(b, complex) for b in self.rhs])

    def split(self, x):
        a, b, _ = self.sizes
        return x[:a], x[a:a + b], x[a + b:]


@dataclass
class Solution:
    """Solution triple at Laplace parameter ``s``; ``E`` has full length
    (constrained DOFs are zero)."""

    s: complex
    E: np.ndarray
    j: Density
    m: Density
    residual: float = 0.0


def _check_mu(mat: MaterialParams, vm: VolumeMesh):
    mu = mat.region_value("mu", vm.tet_tags)
    if np.ptp(mu) > 0:
        raise ValueError("the permeability must be constant in the obstacle")
    return float(mu[0])


def assemble_system(s, vm: VolumeMesh, sm: SurfaceMesh, spaces, mat: MaterialParams,
                    data: ScatteringData, quad: Optional[QuadConfig] = None,
                    bio: Optional[BioMatrices] = None,
                    interior: Optional[InteriorMatrices] = None) -> BlockSystem:
    """Assemble all blocks and the right-hand side at Laplace parameter ``s``.

    ``bio`` and ``interior`` may be passed to reuse earlier assemblies (the
    BIO matrices must have been built at ``s / c0``).
    """
    sp_ = s if isinstance(s, LaplaceParameter) else LaplaceParameter(s)
    s = sp_.s
    fem, div, curl = spaces
    if div.mesh is not sm or fem.mesh is not vm:
        raise ValueError("spaces do not belong to the given meshes")
    quad = quad or DEFAULT_QUAD
    mu = _check_mu(mat, vm)
    st = s / mat.c0
    if bio is None:
        bio = assemble_bios(sm, div, st, quad)
    elif abs(bio.st - st) > 1e-12 * abs(st):
        raise ValueError("BIO matrices were assembled at a different parameter")
    if interior is None:
        interior = assemble_interior(vm, fem, mat)
    free = fem.free
    T = trace_coupling_matrix(fem, curl).tocsc()[:, free].tocsr()
    A11 = interior.operator(s)[free][:, free].tocsc()
    A12 = (s * mu) * T.T.tocsc()
    Q, V, K = bio.Q, bio.V, bio.K
    blocks = [[A11, A12, None],
              [T, V / (s * mat.eps0), -0.5 * Q + K],
              [None, 0.5 * Q + K, -V / (s * mat.mu0)]]
    # right-hand side
    b1 = assemble_load(data.J, fem, s, mat)
    _, gc, pe = data.channels(sm)
    if data.incident is not None:
        b1 = b1 - (mu / mat.mu0) * surface_trace_load(fem, sm, gc)
        b2 = _pair_samples(div, pe)
    else:
        b2 = np.zeros(div.dim, complex)
    rhs = (b1[free], b2, np.zeros(curl.dim, complex))
    return BlockSystem(sp_, mat, fem, div, curl, interior, T, bio, blocks, rhs)


def _pair_samples(div: DivConformingSpace, values, order=4):
    """``<v, f_i>`` from samples at the degree-``order`` triangle rule."""
    sm = div.mesh
    nodes, w = gauss_triangle(order)
    x = sm.map_points(nodes)
    Tn = sm.n_triangles
    idx = np.repeat(np.arange(Tn), len(w)).reshape(Tn, -1)
    f = div.values(idx, x)
    loc = np.einsum("tqk,tqik,q->ti", values, f, w) * (2 * sm.areas)[:, None]
    out = np.zeros(div.dim, dtype=complex)
    np.add.at(out, sm.tri_edges, loc)
    return out


def _schur_solve(system: BlockSystem, chunk=256):
    A11 = system.blocks[0][0]
    T = system.trace
    A12 = system.blocks[0][1]
    b1, b2, b3 = system.rhs
    try:
        lu = spla.splu(A11)
    except RuntimeError as exc:
        raise SolveError("interior block is singular: %s" % exc) from None
    nS = T.shape[0]
    # T A11^{-1} A12, column chunks to bound memory
    S21 = np.empty((nS, nS), dtype=complex)
    A12d = A12.tocsc()
    for c0 in range(0, nS, chunk):
        cols = A12d[:, c0:c0 + chunk].toarray()
        S21[:, c0:c0 + chunk] = T @ lu.solve(cols)
    z1 = lu.solve(b1)
    B = np.block([[system.blocks[1][1] - S21, system.blocks[1][2]],
                  [system.blocks[2][1], system.blocks[2][2]]])
    rhs = np.concatenate([b2 - T @ z1, b3])
    lu_b, piv = sla.lu_factor(B, check_finite=False)
    d = np.abs(np.diag(lu_b))
    if d.min() <= 1e-14 * d.max():
        raise SolveError("boundary Schur complement is numerically singular "
                         "(pivot ratio %.1e)" % (d.min() / d.max()))
    xb = sla.lu_solve((lu_b, piv), rhs, check_finite=False)
    j, m = xb[:nS], xb[nS:]
    E = lu.solve(b1 - A12 @ j)
    return E, j, m


def residual(system: BlockSystem, E, j, m):
    """Relative residual ``||A x - b|| / ||b||`` (absolute when b = 0)."""
    r = np.concatenate(system.matvec(E, j, m)) - system.rhs_vector()
    nb = np.linalg.norm(system.rhs_vector())
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def solve(system: BlockSystem, tol: float = 1e-10, method: str = "schur") -> Solution:
    """Direct solve of the block system.

    ``method="schur"`` eliminates the interior block with a sparse LU;
    ``method="dense"`` factors the full matrix (small problems).
    """
    if method == "schur":
        E, j, m = _schur_solve(system)
    elif method == "dense":
        A = system.dense()
        x = sla.solve(A, system.rhs_vector(), check_finite=False)
        E, j, m = system.split(x)
    else:
        raise ValueError("unknown solve method %r" % method)
    res = residual(system, E, j, m)
    if not np.isfinite(res) or res > tol:
        raise SolveError("residual %.2e above tolerance %.1e" % (res, tol))
    return Solution(system.s.s, system.fem.extend(E), Density(j, "div"),
                    Density(m, "curl"), res)


def solve_coated(s, vm, sm, spaces, mat, data, **kw) -> Solution:
    """Solve with the conductor interface DOFs of the interior field
    constrained to zero (``spaces`` built with ``coated=True``)."""
    fem = spaces[0]
    if not fem.coated:
        raise ValueError("coated solve needs an edge-element space with coated=True")
    system = assemble_system(s, vm, sm, spaces, mat, data, **kw)
    return solve(system)


# ---------------------------------------------------------------------------
# Equivalence triplet
# ---------------------------------------------------------------------------


@dataclass
class EquivalenceReport:
    """Relative defects (h-weighted discrete L2 at triangle centroids).

    ``i``: [pi_t E_scat] + m; ``ii``: [gamma_t curl E_scat] + s mu0 j;
    ``iii``: interior trace gamma_t^- curl E_scat relative to the exterior
    one; ``iv``: pi_t^- E - pi_t^+ E_scat - pi_t^+ E_inc.
    """

    defects: dict


def _hnorm(h, v):
    return float(np.sqrt(np.sum(h ** 2 * np.sum(np.abs(v) ** 2, axis=1))))


def one_sided_traces(sol: Solution, sm: SurfaceMesh, spaces, mat, delta_factor=0.5,
                     quad=None):
    """Extrapolated interior and exterior limits of ``(E_scat, curl E_scat)``
    at the triangle centroids."""
    h = sm.local_size()
    cen, n = sm.centroids, sm.normals
    steps = np.array([1.0, 1.5, 2.0])
    w = np.linalg.solve(np.vander(steps, 3, increasing=True).T, np.eye(3)[:, 0])
    Tn = len(cen)
    pts = []
    for t in steps:
        d = (t * delta_factor * h)[:, None] * n
        pts += [cen - d, cen + d]
    E, C = eval_scattered(sol.j, sol.m, np.concatenate(pts), sol.s, mat, spaces[1], quad)
    E = E.reshape(len(steps), 2, Tn, 3)
    C = C.reshape(len(steps), 2, Tn, 3)
    lim = lambda F, side: np.tensordot(w, F[:, side], axes=1)
    return lim(E, 0), lim(E, 1), lim(C, 0), lim(C, 1)


def verify_equivalence(sol: Solution, vm: VolumeMesh, sm: SurfaceMesh, spaces,
                       mat: MaterialParams, data: ScatteringData,
                       delta_factor=0.5, quad=None) -> EquivalenceReport:
    """Reconstruct the scattered field from ``(j, m)`` and measure the four
    identities that make the triple a solution of the transmission problem."""
    fem, div, curl = spaces
    s = sol.s
    n = sm.normals
    h = sm.local_size()
    idx = np.arange(sm.n_triangles)
    cen = sm.centroids
    jv = div.evaluate(sol.j.coeffs, idx, cen)
    mv = curl.evaluate(sol.m.coeffs, idx, cen)
    Ein, Eout, Cin, Cout = one_sided_traces(sol, sm, spaces, mat, delta_factor, quad)
    pi = lambda v: v - np.sum(v * n, axis=1, keepdims=True) * n
    ga = lambda v: np.cross(n, v)
    if data.incident is not None:
        Einc, _ = data.incident(cen)
        Einc = np.asarray(Einc, complex)
    else:
        Einc = np.zeros_like(Eout)
    wt = fem.face_trace_values(sm, cen[:, None, :])[:, 0]            # (T, 6, 3)
    loc = np.asarray(sol.E)[vm.tet_edges[sm.face_map[:, 0]]]
    Efem = np.einsum("te,tek->tk", loc, wt)

    def rel(a, b):
        nb = _hnorm(h, b)
        na = _hnorm(h, a)
        return na / nb if nb > 0 else na

    sj = s * mat.mu0 * jv
    tgt = pi(Eout) + pi(Einc)
    defects = {
        "i": rel(pi(Ein) - pi(Eout) + mv, mv),
        "ii": rel(ga(Cin) - ga(Cout) + sj, sj),
        "iii": rel(ga(Cin), ga(Cout)),
        "iv": rel(Efem - tgt, tgt),
    }
    return EquivalenceReport(defects)


# ---------------------------------------------------------------------------
# Stability sweep
# ---------------------------------------------------------------------------


SWEEP_COLUMNS = ("s_re", "s_im", "norm_E", "norm_j", "norm_m", "bound_cubic",
                 "ratio_cubic", "ratio_quadratic")


def data_norm(data: ScatteringData, sm: SurfaceMesh, s=None, channel="E", order=4):
    """Surface L2 norm of the data pair ``(pi_t E_inc, gamma_t curl E_inc)``.

    With ``channel="H"`` the second entry is ``gamma_t H_inc`` where
    ``curl E_inc = s mu0 H_inc`` (``mu0 = 1`` is assumed by the caller
    passing the scaled value through ``s``).
    """
    nodes, w = gauss_triangle(order)
    _, gc, pe = data.channels(sm, order)
    if channel == "H":
        gc = gc / s
    wa = w[None, :] * (2 * sm.areas)[:, None]
    val = np.sum(wa * (np.sum(np.abs(pe) ** 2, -1) + np.sum(np.abs(gc) ** 2, -1)))
    return float(np.sqrt(val))


@dataclass
class SweepRow:
    s: complex
    norm_E: float
    norm_j: float
    norm_m: float
    bound_cubic: float
    ratio_cubic: float
    ratio_quadratic: float

    def as_tuple(self):
        return (self.s.real, self.s.imag, self.norm_E, self.norm_j, self.norm_m,
                self.bound_cubic, self.ratio_cubic, self.ratio_quadratic)


def stability_sweep(s_grid: Sequence[complex], vm, sm, spaces, mat,
                    data_at: Callable[[complex], ScatteringData], quad=None,
                    csv_path=None) -> list:
    """Solve with unit-norm data over a grid of Laplace parameters.

    For each ``s`` the data from ``data_at(s)`` is normalized in the surface
    L2 norm of ``(pi_t E_inc, gamma_t curl E_inc)`` and the solution norm
    ``|||E|||_s + ||j|| + ||m||`` (RWG Gram norms for the densities) is
    compared with ``|s|^3 / (sigma sigma_^4)``. The same solution rescaled to
    unit data in the ``(pi_t E_inc, gamma_t H_inc)`` norm is compared with
    ``|s|^2 / (sigma sigma_^2)``.
    """
    fem, div, curl = spaces
    interior = assemble_interior(vm, fem, mat)
    G = div.gram()
    rows = []
    for s in s_grid:
        lp = LaplaceParameter(s)
        s = lp.s
        data = data_at(s)
        nE = data_norm(data, sm)
        nH = data_norm(data, sm, s=s * mat.mu0, channel="H")
        if nE == 0:
            raise ValueError("sweep needs nonzero data")
        system = assemble_system(lp, vm, sm, spaces, mat, data.scaled(1.0 / nE),
                                 quad=quad, interior=interior)
        sol = solve(system)
        a = energy_norm(sol.E, s, interior)
        b = div.norm(sol.j.coeffs, G)
        c = curl.norm(sol.m.coeffs, G)
        total = a + b + c
        sig, sgu = lp.sigma, lp.sigma_under
        cubic = abs(s) ** 3 / (sig * sgu ** 4)
        quadratic = abs(s) ** 2 / (sig * sgu ** 2)
        total_h = total * nE / nH
        rows.append(SweepRow(s, a, b, c, cubic, total / cubic, total_h / quadratic))
    if csv_path is not None:
        write_sweep_csv(csv_path, rows)
    return rows


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(["%.17g" % v for v in r.as_tuple()])
