"""
Yukawa kernel, Galerkin boundary integral operators and layer potentials.

All operators are scale free: they depend on a single complex wavenumber
parameter ``st`` (``G = exp(-st r) / (4 pi r)``). Physical scalings are
applied by :mod:`tdscatter.coupled`.

Conventions
-----------
``gamma_t u = n x u`` and ``pi_t u = n x (u x n)``; jumps are interior minus
exterior. For a div-space density ``j`` with ``psi = int G j``:

* ``D j = curl psi``, ``S j = curl curl psi = grad int G div j - st^2 psi``.
* Curl-space densities ``m`` enter through ``n x m``: ``D~ m = D(n x m)``,
  ``S~ m = S(n x m)``.

Galerkin matrices (``f_i`` RWG functions, ``g_i = n x f_i``)::

    V[i, j] = <pi_t S f_j, f_i> = -iint G div f_j div f_i - st^2 iint G f_j . f_i
    K[i, j] = <gamma_t D f_j, g_i> = iint (grad_x G x f_j(y)) . f_i(x)
    Q[i, k] = <g_k, f_i>

and, for the rotated operators tested in the matching dual spaces,
``<K~ g_k, f_i> = -K[i, k]`` and ``<V~ g_k, g_i> = -V[i, k]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (BuffaChristiansenSpace, CurlConformingSurfaceSpace, Density,
                       DivConformingSpace, SurfaceMesh)
from .quadrature import (PanelPairClass, gauss_triangle, singular_pair_rule,
                         tensor_triangle_rule)

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaplaceParameter:
    """Complex Laplace parameter with positive real part."""

    s: complex

    def __post_init__(self):
        s = complex(self.s)
        if not s.real > 0:
            raise ValueError("Laplace parameter needs Re s > 0, got %r" % s)
        object.__setattr__(self, "s", s)

    @property
    def sigma(self):
        return self.s.real

    @property
    def sigma_under(self):
        return min(1.0, self.s.real)


@dataclass(frozen=True)
class MaterialParams:
    """Permittivity and permeability of the obstacle and of free space.

    ``eps`` and ``mu`` may be dictionaries mapping tetrahedron region tags to
    values for piecewise-constant materials.
    """

    eps: float = 1.0
    mu: float = 1.0
    eps0: float = 1.0
    mu0: float = 1.0

    def __post_init__(self):
        for name in ("eps", "mu"):
            v = getattr(self, name)
            vals = v.values() if isinstance(v, dict) else [v]
            if any(not x > 0 for x in vals):
                raise ValueError("%s must be positive" % name)
        if not (self.eps0 > 0 and self.mu0 > 0):
            raise ValueError("eps0 and mu0 must be positive")

    @property
    def c(self):
        if isinstance(self.eps, dict) or isinstance(self.mu, dict):
            raise ValueError("c is not constant for piecewise materials")
        return 1.0 / np.sqrt(self.eps * self.mu)

    @property
    def c0(self):
        return 1.0 / np.sqrt(self.eps0 * self.mu0)

    def region_value(self, name, tags):
        v = getattr(self, name)
        if isinstance(v, dict):
            return np.array([v[int(t)] for t in tags], dtype=float)
        return np.full(len(tags), float(v))

    def boundary_mu(self):
        """Permeability next to the interface (constant materials only)."""
        if isinstance(self.mu, dict):
            vals = set(self.mu.values())
            if len(vals) != 1:
                raise ValueError("permeability must be constant along the interface")
            return vals.pop()
        return self.mu


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature orders for boundary element assembly.

    regular_order : triangle rule degree for well-separated panel pairs.
    near_order : triangle rule degree for close disjoint pairs.
    singular_order : Gauss points per dimension of the singular rules.
    near_factor : pairs with centroid distance below ``near_factor`` times the
        larger panel diameter count as close.
    eval_cutoff : evaluation points closer to the surface than this multiple
        of the local mesh size are rejected.
    """

    regular_order: int = 4
    near_order: int = 7
    singular_order: int = 5
    near_factor: float = 2.0
    eval_cutoff: float = 0.5
    eval_order: int = 5
    eval_subdivisions: int = 3


DEFAULT_QUAD = QuadConfig()


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def yukawa(x, y, st):
    """Yukawa kernel ``exp(-st r) / (4 pi r)`` with ``r = |x - y|``."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("yukawa kernel evaluated at coincident points")
    out = np.exp(-st * r) / (FOUR_PI * r)
    return out if np.ndim(out) else out.item()


def _kernel(r, st):
    """G and the scalar g with grad_x G = g (x - y)."""
    e = np.exp(-st * r) / (FOUR_PI * r)
    return e, -e * (1.0 + st * r) / (r * r)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


@dataclass
class _Plan:
    far: np.ndarray            # (P, 2) disjoint well-separated pairs
    near: np.ndarray           # (P, 2) disjoint close pairs
    singular: dict             # class -> (pairs, Px (P,3,3), Py (P,3,3))


_PLAN_CACHE: dict = {}


def _assembly_plan(sm: SurfaceMesh, quad: QuadConfig) -> _Plan:
    key = (id(sm), quad.near_factor)
    hit = _PLAN_CACHE.get(key)
    if hit is not None and hit[0] is sm:
        return hit[1]
    tri = sm.triangles
    T = len(tri)
    cen = sm.centroids
    diam = sm.local_size()
    far, near, sing = [], [], {c: [] for c in (1, 2, 3)}
    chunk = max(1, 400000 // T)
    for a in range(0, T, chunk):
        rows = np.arange(a, min(T, a + chunk))
        shared = (tri[rows][:, None, :, None] == tri[None, :, None, :]).sum(axis=(2, 3))
        dist = np.linalg.norm(cen[rows][:, None] - cen[None], axis=2)
        close = dist < quad.near_factor * np.maximum(diam[rows][:, None], diam[None])
        for c in (1, 2, 3):
            i, j = np.nonzero(shared == c)
            sing[c].append(np.stack([rows[i], j], 1))
        i, j = np.nonzero((shared == 0) & close)
        near.append(np.stack([rows[i], j], 1))
        i, j = np.nonzero((shared == 0) & ~close)
        far.append(np.stack([rows[i], j], 1))
    singular = {}
    v = sm.vertices
    for c in (1, 2, 3):
        pairs = np.concatenate(sing[c])
        px = np.empty((len(pairs), 3, 3))
        py = np.empty((len(pairs), 3, 3))
        for k, (ix, iy) in enumerate(pairs):
            ta, tb = list(tri[ix]), list(tri[iy])
            common = [u for u in ta if u in tb]
            oa = common + [u for u in ta if u not in common]
            ob = common + [u for u in tb if u not in common]
            px[k] = v[oa]
            py[k] = v[ob]
        singular[PanelPairClass(c)] = (pairs, px, py)
    plan = _Plan(np.concatenate(far), np.concatenate(near), singular)
    _PLAN_CACHE.clear()
    _PLAN_CACHE[key] = (sm, plan)
    return plan


def _moments(x, y, w, cx, cy, st):
    """Kernel moments for a batch of panel pairs.

    x, y : (P, Q, 3) paired points; w : (P, Q) weights including Jacobians;
    cx, cy : (P, 3) panel centroids.
    Returns V moments (M0, Mx, My, Mxy) and K moments (B0, B1, B2, B3).
    """
    d = x - y
    r = np.sqrt(np.einsum("pqk,pqk->pq", d, d))
    G, g = _kernel(r, st)
    G = G * w
    g = g * w
    xp = x - cx[:, None]
    yp = y - cy[:, None]
    M0 = G.sum(axis=1)
    Mx = np.einsum("pq,pqk->pk", G, xp)
    My = np.einsum("pq,pqk->pk", G, yp)
    Mxy = np.einsum("pq,pqk,pqk->p", G, xp, yp)
    B0 = np.einsum("pq,pqk,pqk->p", g, d, np.cross(yp, xp))
    B1 = np.einsum("pq,pqk->pk", g, np.cross(d, yp))
    B2 = np.einsum("pq,pqk->pk", g, np.cross(xp, d))
    B3 = np.einsum("pq,pqk->pk", g, d)
    return M0, Mx, My, Mxy, B0, B1, B2, B3


class _Accumulator:
    def __init__(self, sm, space, st, want_v=True, want_k=True):
        self.sm = sm
        self.space = space
        self.st = st
        n = space.dim
        self.n = n
        self.V = np.zeros(n * n, dtype=complex) if want_v else None
        self.K = np.zeros(n * n, dtype=complex) if want_k else None
        self.cen = sm.centroids
        self.popp = space.opposite - sm.centroids[:, None, :]     # (T, 3, 3)

    def add(self, ix, iy, x, y, w):
        sp_ = self.space
        cx, cy = self.cen[ix], self.cen[iy]
        M0, Mx, My, Mxy, B0, B1, B2, B3 = _moments(x, y, w, cx, cy, self.st)
        ci, cj = sp_.coef[ix], sp_.coef[iy]          # (P, 3)
        p, q = self.popp[ix], self.popp[iy]           # (P, 3, 3)
        cc = ci[:, :, None] * cj[:, None, :]
        rows = self.sm.tri_edges[ix][:, :, None]
        cols = self.sm.tri_edges[iy][:, None, :]
        flat = (rows * self.n + cols).ravel()
        if self.V is not None:
            di, dj = sp_.div[ix], sp_.div[iy]
            mass = (Mxy[:, None, None]
                    - np.einsum("pik,pk->pi", p, My)[:, :, None]
                    - np.einsum("pjk,pk->pj", q, Mx)[:, None, :]
                    + np.einsum("pik,pjk->pij", p, q) * M0[:, None, None])
            loc = -(di[:, :, None] * dj[:, None, :]) * M0[:, None, None] \
                - self.st ** 2 * cc * mass
            self._scatter(self.V, flat, loc)
        if self.K is not None:
            qxp = np.cross(q[:, None, :, :], p[:, :, None, :])      # (P, i, j, 3)
            loc = cc * (B0[:, None, None]
                        - np.einsum("pik,pk->pi", p, B1)[:, :, None]
                        - np.einsum("pjk,pk->pj", q, B2)[:, None, :]
                        + np.einsum("pijk,pk->pij", qxp, B3))
            self._scatter(self.K, flat, loc)

    def _scatter(self, target, flat, loc):
        loc = loc.ravel()
        n2 = self.n * self.n
        target += (np.bincount(flat, loc.real, minlength=n2)
                   + 1j * np.bincount(flat, loc.imag, minlength=n2))

    def matrices(self):
        shape = (self.n, self.n)
        V = None if self.V is None else self.V.reshape(shape)
        K = None if self.K is None else self.K.reshape(shape)
        return V, K


def _map(pv, ref):
    """Map reference points (P, Q, 2) or (Q, 2) onto panels pv (P, 3, 3)."""
    if ref.ndim == 2:
        ref = np.broadcast_to(ref, (len(pv),) + ref.shape)
    return (pv[:, None, 0] + ref[..., :1] * (pv[:, None, 1] - pv[:, None, 0])
            + ref[..., 1:] * (pv[:, None, 2] - pv[:, None, 0]))


def _assemble_regular(acc, pairs, order, budget=1_500_000):
    if len(pairs) == 0:
        return
    sm = acc.sm
    X, Y, W = tensor_triangle_rule(order)
    pv = sm.vertices[sm.triangles]
    step = max(1, budget // len(W))
    for a in range(0, len(pairs), step):
        ix, iy = pairs[a:a + step, 0], pairs[a:a + step, 1]
        x = _map(pv[ix], X)
        y = _map(pv[iy], Y)
        w = W[None, :] * (4.0 * sm.areas[ix] * sm.areas[iy])[:, None]
        acc.add(ix, iy, x, y, w)


def _assemble_singular(acc, plan, order, budget=1_500_000):
    sm = acc.sm
    for cls, (pairs, px, py) in plan.singular.items():
        if len(pairs) == 0:
            continue
        X, Y, W = singular_pair_rule(cls, order)
        step = max(1, budget // len(W))
        for a in range(0, len(pairs), step):
            sl = slice(a, a + step)
            ix, iy = pairs[sl, 0], pairs[sl, 1]
            x = _map(px[sl], X)
            y = _map(py[sl], Y)
            w = W[None, :] * (4.0 * sm.areas[ix] * sm.areas[iy])[:, None]
            acc.add(ix, iy, x, y, w)


@dataclass
class BioMatrices:
    """Galerkin matrices of the boundary integral operators at ``st``.

    ``V``, ``K`` as in the module docstring; ``Vt = -V`` and ``Kt = -K`` are
    the rotated operators in their dual test spaces; ``Q`` is the pivot
    pairing and ``G`` the Gram matrix of the RWG space.
    """

    st: complex
    V: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    Vt: np.ndarray = field(init=False)
    Kt: np.ndarray = field(init=False)

    def __post_init__(self):
        self.Vt = -self.V
        self.Kt = -self.K

    def dump(self, path):
        """Binary dump: int64 header (n_matrices, rows, cols) then each matrix
        as row-major (real, imag) float64 pairs in the order V, K, Q, G."""
        mats = [self.V, self.K, self.Q, self.G]
        n = self.V.shape[0]
        with open(path, "wb") as fh:
            np.array([len(mats), n, n], dtype="<i8").tofile(fh)
            for M in mats:
                np.asarray(M, dtype="<c16").tofile(fh)

    @staticmethod
    def load_dump(path):
        with open(path, "rb") as fh:
            k, n, m = np.fromfile(fh, dtype="<i8", count=3)
            return [np.fromfile(fh, dtype="<c16", count=n * m).reshape(n, m) for _ in range(k)]


def _space_of(spaces):
    if isinstance(spaces, DivConformingSpace):
        return spaces
    if isinstance(spaces, CurlConformingSurfaceSpace):
        return spaces.div_space
    for s in spaces:
        if isinstance(s, DivConformingSpace):
            return s
    raise TypeError("no DivConformingSpace among spaces")


def assemble_bios(sm: SurfaceMesh, spaces, st, quad: Optional[QuadConfig] = None,
                  which=("V", "K")) -> BioMatrices:
    """Assemble the Galerkin matrices V and K at wavenumber parameter ``st``.

    Parameters
    ----------
    sm : SurfaceMesh
    spaces : DivConformingSpace or tuple containing one
    st : complex
        Wavenumber parameter of the Yukawa kernel (``s / c0``).
    quad : QuadConfig, optional
    which : tuple of str
        Subset of ``("V", "K")`` to assemble; the other is left as zeros.
    """
    quad = quad or DEFAULT_QUAD
    space = _space_of(spaces)
    if space.mesh is not sm:
        raise ValueError("spaces were not built on this surface mesh")
    st = complex(st)
    if st == 0:
        raise ValueError("wavenumber parameter must be nonzero")
    plan = _assembly_plan(sm, quad)
    acc = _Accumulator(sm, space, st, "V" in which, "K" in which)
    _assemble_regular(acc, plan.far, quad.regular_order)
    _assemble_regular(acc, plan.near, quad.near_order)
    _assemble_singular(acc, plan, quad.singular_order)
    V, K = acc.matrices()
    n = space.dim
    V = np.zeros((n, n), complex) if V is None else V
    K = np.zeros((n, n), complex) if K is None else K
    Q = space.rotated_gram().toarray()
    G = space.gram().toarray()
    return BioMatrices(st, V, K, Q, G)


# ---------------------------------------------------------------------------
# Layer potentials
# ---------------------------------------------------------------------------


def _subdivided_rule(order, levels):
    p, w = gauss_triangle(order)
    tris = [np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])]
    for _ in range(levels):
        new = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            new += [np.array([t[0], m01, m20]), np.array([m01, t[1], m12]),
                    np.array([m20, m12, t[2]]), np.array([m12, m20, m01])]
        tris = new
    pts = np.concatenate([t[0] + p[:, :1] * (t[1] - t[0]) + p[:, 1:] * (t[2] - t[0]) for t in tris])
    return pts, np.tile(w, len(tris)) / len(tris)


def _segment_distance(x, a, b):
    ab = b - a
    t = np.clip(np.einsum("pk,pk->p", x - a, ab) / np.einsum("pk,pk->p", ab, ab), 0.0, 1.0)
    return np.linalg.norm(x - a - t[:, None] * ab, axis=1)


def point_triangle_distance(x, tv):
    """Euclidean distance from points ``x`` (P, 3) to triangles ``tv``
    (P, 3, 3)."""
    a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n, axis=1)[:, None]
    h = np.einsum("pk,pk->p", x - a, n)
    xp = x - h[:, None] * n
    inside = np.ones(len(x), dtype=bool)
    for p0, p1 in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("pk,pk->p", np.cross(p1 - p0, xp - p0), n) >= 0
    edge = np.minimum(np.minimum(_segment_distance(x, a, b), _segment_distance(x, b, c)),
                      _segment_distance(x, c, a))
    return np.where(inside, np.abs(h), edge)


class PotentialEvaluator:
    """Evaluate ``int G a``, ``int grad_x G b`` and ``int grad_x G x c`` for
    piecewise-linear vector densities at points off the surface.

    Close point/panel pairs use a subdivided rule.
    """

    def __init__(self, space: DivConformingSpace, quad: Optional[QuadConfig] = None):
        self.space = space
        self.quad = quad or DEFAULT_QUAD
        sm = space.mesh
        self.sm = sm
        p, w = gauss_triangle(self.quad.eval_order)
        self.ref, self.refw = p, w
        self.fine_rules = {k: _subdivided_rule(self.quad.eval_order, k)
                           for k in (1, 2, self.quad.eval_subdivisions)}
        self.diam = sm.local_size()

    def check_points(self, pts):
        """Reject points closer than ``eval_cutoff`` local mesh sizes to a
        panel."""
        sm = self.sm
        cutoff = self.quad.eval_cutoff
        for a in range(0, len(pts), 256):
            x = pts[a:a + 256]
            dc = np.linalg.norm(x[:, None] - sm.centroids[None], axis=2)
            ip, it = np.nonzero(dc < (1.0 + cutoff) * self.diam[None])
            if len(ip) == 0:
                continue
            dist = point_triangle_distance(x[ip], sm.vertices[sm.triangles[it]])
            if np.any(dist < cutoff * self.diam[it] * (1 - 1e-9)):
                raise ValueError("evaluation point closer than %.2f local mesh sizes "
                                 "to the surface" % cutoff)

    def _panel_points(self, tri_idx, ref):
        pv = self.sm.vertices[self.sm.triangles[tri_idx]]
        return _map(pv, ref)

    def _panel_moments(self, x, y, w, st):
        """Moments over panel points y (n, Q, 3) relative to centroids for
        targets x (n, 3): sum wG, sum wG y', sum wg, sum wg y'."""
        d = x[:, None, :] - y
        r = np.sqrt(np.einsum("nqk,nqk->nq", d, d))
        G, g = _kernel(r, st)
        G = G * w
        g = g * w
        return G.sum(1), np.einsum("nq,nqk->nk", G, y), g.sum(1), np.einsum("nq,nqk->nk", g, y)

    def fields(self, coeffs, pts, st):
        """Return ``(A, B, C)`` with A = int G u, B = int grad_x G div u,
        C = int grad_x G x u for the div-space field ``u = sum c f``.

        ``coeffs`` may be a (E,) vector or (E, R) block of densities.
        """
        sp_ = self.space
        sm = self.sm
        c = np.asarray(coeffs)
        single = c.ndim == 1
        if single:
            c = c[:, None]
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        P = len(pts)
        T = sm.n_triangles
        cen = sm.centroids
        # on panel t: u = y' alpha - beta, y' = y - centroid
        loc = c[sm.tri_edges] * sp_.coef[:, :, None]           # (T, 3, R)
        alpha = loc.sum(axis=1)                                 # (T, R)
        popp = sp_.opposite - cen[:, None, :]
        beta = np.einsum("tik,tir->tkr", popp, loc)             # (T, 3, R)
        divu = np.einsum("ti,tir->tr", sp_.div, c[sm.tri_edges])

        # moments (S0, Sy, T0, Ty) per (point, panel)
        def combine(xc, S0, Sy, T0, Ty, al, be, dv):
            # xc: x - centroid (n, 3); returns contributions (n, 3, R)
            A = Sy[:, :, None] * al[:, None, :] - S0[:, None, None] * be
            gd = xc * T0[:, None] - Ty
            B = gd[:, :, None] * dv[:, None, :]
            C = (np.cross(xc, Ty)[:, :, None] * al[:, None, :]
                 - np.cross(gd[:, :, None], be, axisa=1, axisb=1, axisc=1))
            return A, B, C

        out = [np.zeros((P, 3, c.shape[1]), complex) for _ in range(3)]
        yref = sm.map_points(self.ref) - cen[:, None, :]        # (T, Q, 3)
        wref = self.refw[None] * (2 * sm.areas)[:, None]
        Q = len(self.refw)
        chunk = max(1, 1_500_000 // (T * Q))
        for a in range(0, P, chunk):
            x = pts[a:a + chunk]
            n = len(x)
            xc = x[:, None, :] - cen[None]                      # (n, T, 3)
            d = xc[:, :, None, :] - yref[None]                  # (n, T, Q, 3)
            r = np.sqrt(np.einsum("ntqk,ntqk->ntq", d, d))
            G, g = _kernel(r, st)
            G = G * wref
            g = g * wref
            S0 = G.sum(2)
            Sy = np.einsum("ntq,tqk->ntk", G, yref)
            T0 = g.sum(2)
            Ty = np.einsum("ntq,tqk->ntk", g, yref)
            A = np.einsum("ntk,tr->nkr", Sy, alpha) - np.einsum("nt,tkr->nkr", S0, beta)
            gd = xc * T0[..., None] - Ty
            B = np.einsum("ntk,tr->nkr", gd, divu)
            C = (np.einsum("ntk,tr->nkr", np.cross(xc, Ty), alpha)
                 - np.einsum("ntk,tjr,kjl->nlr", gd, beta, _LEVI))
            out[0][a:a + n] += A
            out[1][a:a + n] += B
            out[2][a:a + n] += C

        # close pairs: swap the base rule for a subdivided one
        for a in range(0, P, 512):
            x = pts[a:a + 512]
            dc = np.linalg.norm(x[:, None] - cen[None], axis=2)
            ip, it = np.nonzero(dc < 3.0 * self.diam[None])
            if len(ip) == 0:
                continue
            ratio = point_triangle_distance(x[ip], sm.vertices[sm.triangles[it]]) / self.diam[it]
            ip = ip + a
            xc = pts[ip] - cen[it]
            mom = self._panel_moments(xc, yref[it], -wref[it], st)
            contrib = combine(xc, *mom, alpha[it], beta[it], divu[it])
            bands = ((1, 2.0, np.inf), (2, 1.0, 2.0), (self.quad.eval_subdivisions, 0.0, 1.0))
            for level, lo, hi in bands:
                sel = (ratio >= lo) & (ratio < hi)
                if not sel.any():
                    continue
                ref, rw = self.fine_rules[level]
                for b in np.array_split(np.nonzero(sel)[0], max(1, sel.sum() * len(rw) // 400_000)):
                    it_b = it[b]
                    y = _map(sm.vertices[sm.triangles[it_b]], ref) - cen[it_b][:, None, :]
                    w = rw[None] * (2 * sm.areas[it_b])[:, None]
                    m = self._panel_moments(xc[b], y, w, st)
                    extra = combine(xc[b], *m, alpha[it_b], beta[it_b], divu[it_b])
                    for k in range(3):
                        contrib[k][b] += extra[k]
            for k in range(3):
                np.add.at(out[k], ip, contrib[k])
        if single:
            return tuple(o[..., 0] for o in out)
        return tuple(out)


_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0


def layer_potentials(space: DivConformingSpace, coeffs, pts, st, quad=None, check=True):
    """Single- and double-layer fields of the div-space density ``coeffs``.

    Returns ``(S u, D u)`` with ``D u = curl psi`` and
    ``S u = grad int G div u - st^2 psi``.
    """
    ev = PotentialEvaluator(space, quad)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if check:
        ev.check_points(pts)
    A, B, C = ev.fields(coeffs, pts, st)
    return B - st ** 2 * A, C


def eval_scattered(j: Density, m: Density, pts, s, mat: MaterialParams, spaces,
                   quad: Optional[QuadConfig] = None, check=True):
    """Scattered field and its curl from the Cauchy densities.

    ``E = D~ m - S j / (s eps0)`` and ``curl E = S~ m + s mu0 D j`` with
    kernel parameter ``s / c0``.

    Returns
    -------
    E, curlE : (P, 3) complex arrays
    """
    s = LaplaceParameter(s).s if not isinstance(s, LaplaceParameter) else s.s
    space = _space_of(spaces)
    if j.kind != "div" or m.kind != "curl":
        raise ValueError("expected j in the div space and m in the curl space")
    if len(j.coeffs) != space.dim or len(m.coeffs) != space.dim:
        raise ValueError("density length does not match the space dimension")
    st = s / mat.c0
    # n x m = -sum m_k f_k
    stacked = np.stack([np.asarray(j.coeffs, complex), -np.asarray(m.coeffs, complex)], axis=1)
    Sd, Dd = layer_potentials(space, stacked, pts, st, quad, check)
    Sj, Dj = Sd[..., 0], Dd[..., 0]
    Sm, Dm = Sd[..., 1], Dd[..., 1]
    E = Dm - Sj / (s * mat.eps0)
    curlE = Sm + s * mat.mu0 * Dj
    return E, curlE


# ---------------------------------------------------------------------------
# Jumps
# ---------------------------------------------------------------------------


@dataclass
class JumpReport:
    """Relative jump defects at triangle centroids.

    Keys: ``D`` for [gamma_t D j] + j, ``Dt`` for [pi_t D~ m] + m, ``S`` for
    [pi_t S j] and ``St`` for [gamma_t S~ m] (the last two relative to the
    nonzero jump magnitudes), plus the curl-field jump ``curlE`` against
    ``-s mu0 j``.
    """

    defects: dict
    delta: np.ndarray


def _jump_samples(space, dens_div, s_t, offsets, quad):
    sm = space.mesh
    cen = sm.centroids
    n = sm.normals
    out = []
    for delta in offsets:
        xin = cen - delta[:, None] * n
        xout = cen + delta[:, None] * n
        S, D = layer_potentials(space, dens_div, np.concatenate([xin, xout]), s_t, quad)
        T = len(cen)
        out.append((S[:T], S[T:], D[:T], D[T:]))
    return out


def _tangential(n, v, kind):
    if kind == "gamma":
        return np.cross(n, v)
    return v - np.einsum("tk,tk->t", v, n)[:, None] * n


def verify_jump(j: Density, m: Density, s, sm: SurfaceMesh, spaces, mat=None,
                delta_factor=0.5, quad=None) -> JumpReport:
    """Measure the four jump relations of the layer potentials.

    Potentials are sampled at ``centroid +- t delta n`` for ``t`` in
    (1, 1.5, 2), where ``delta`` is ``delta_factor`` times the local mesh
    size, and the one-sided differences are extrapolated quadratically to
    zero offset.
    """
    mat = mat or MaterialParams()
    quad = quad or DEFAULT_QUAD
    s = LaplaceParameter(s).s if not isinstance(s, LaplaceParameter) else s.s
    space = _space_of(spaces)
    if delta_factor < quad.eval_cutoff:
        raise ValueError("offset below the evaluation cutoff")
    st = s / mat.c0
    h = sm.local_size()
    T = sm.n_triangles
    idx = np.arange(T)
    n = sm.normals
    cen = sm.centroids
    jc = np.asarray(j.coeffs, complex)
    mrot = -np.asarray(m.coeffs, complex)           # n x m in the div basis
    dens = np.stack([jc, mrot], axis=1)
    steps = np.array([1.0, 1.5, 2.0])
    samples = _jump_samples(space, dens, st, [t * delta_factor * h for t in steps], quad)
    # weights of the quadratic through the three offsets evaluated at zero
    extrap = np.linalg.solve(np.vander(steps, 3, increasing=True).T, np.eye(3)[:, 0])

    def jump(kind, which, col):
        vals = []
        for S_in, S_out, D_in, D_out in samples:
            F_in = (S_in if which == "S" else D_in)[..., col]
            F_out = (S_out if which == "S" else D_out)[..., col]
            vals.append(_tangential(n, F_in, kind) - _tangential(n, F_out, kind))
        return sum(w * v for w, v in zip(extrap, vals))

    jval = space.evaluate(jc, idx, cen)
    mval = CurlConformingSurfaceSpace(space).evaluate(np.asarray(m.coeffs, complex), idx, cen)

    def rel(a, b):
        nb = np.sqrt(np.sum(h ** 2 * np.sum(np.abs(b) ** 2, axis=1)))
        na = np.sqrt(np.sum(h ** 2 * np.sum(np.abs(a) ** 2, axis=1)))
        return na / nb if nb > 0 else na

    jD = jump("gamma", "D", 0)
    jDt = jump("pi", "D", 1)
    jS = jump("pi", "S", 0)
    jSt = jump("gamma", "S", 1)
    defects = {
        "D": rel(jD + jval, jval),
        "Dt": rel(jDt + mval, mval),
        "S": rel(jS, jval),
        "St": rel(jSt, mval),
        "curlE": rel(s * mat.mu0 * jD + s * mat.mu0 * jval, s * mat.mu0 * jval),
    }
    return JumpReport(defects, delta_factor * h)


# ---------------------------------------------------------------------------
# Calderon projector
# ---------------------------------------------------------------------------


@dataclass
class CalderonOperator:
    """Discrete Calderon operator acting on curl/div coefficient pairs
    ``(m, j)``.

    ``blocks`` holds the tested Galerkin blocks and ``mass`` the
    block-diagonal matrix realizing the identity in the same test spaces, so
    that the coefficient map is ``matrix = mass^{-1} blocks``.
    """

    st: complex
    blocks: np.ndarray
    mass: np.ndarray
    matrix: np.ndarray

    def idempotency_defect(self, norm="fro"):
        C = self.matrix
        return np.linalg.norm(C @ C - C, norm) / np.linalg.norm(C, norm)


def calderon(sm: SurfaceMesh, spaces, st, quad: Optional[QuadConfig] = None,
             test: str = "bc", eps0=1.0, mu0=1.0) -> CalderonOperator:
    """Discrete exterior Calderon operator at kernel parameter ``st``.

    On coefficient pairs ``(m, j)`` (curl-space ``m``, div-space ``j``) the
    continuous operator is::

        [ 1/2 + K~        -V / (s eps0) ]
        [ V~ / (s mu0)     1/2 + K      ]

    with ``s = st c0``. With ``test="bc"`` the first row is tested with
    Buffa-Christiansen functions ``b_i`` and the second with ``n x b_i``,
    which gives ``mass = diag(Q_bc, Q_bc)`` with ``Q_bc[i, k] = <b_i, n x f_k>``
    and blocks ``[[Q_bc/2 - K_bf, -V_bf/(s eps0)], [V_bf/(s mu0), Q_bc/2 - K_bf]]``.
    The operators are assembled on the barycentric refinement.
    ``test="rwg"`` uses the RWG functions themselves; the pivot pairing
    ``Q`` is then singular on most meshes and its pseudo-inverse is used.
    """
    space = _space_of(spaces)
    quad = quad or DEFAULT_QUAD
    st = complex(st)
    s = st / np.sqrt(eps0 * mu0)
    if test == "bc":
        bc = BuffaChristiansenSpace(space)
        fine = assemble_bios(bc.fine, bc.fine_space, st, quad)
        Pb, Pr = bc.embed_bc, bc.embed_rwg
        proj = lambda M: np.asarray(Pb.T @ (M @ Pr.toarray()))
        V, K = proj(fine.V), proj(fine.K)
        Qm = proj(fine.Q)
        inv = np.linalg.inv
    elif test == "rwg":
        b = assemble_bios(sm, space, st, quad)
        V, K, Qm = b.V, b.K, b.Q
        inv = np.linalg.pinv
    else:
        raise ValueError("test must be 'bc' or 'rwg'")
    blocks = np.block([[0.5 * Qm - K, -V / (s * eps0)],
                       [V / (s * mu0), 0.5 * Qm - K]])
    Z = np.zeros_like(Qm)
    mass = np.block([[Qm, Z], [Z, Qm]])
    Qi = inv(Qm)
    Zi = np.zeros_like(Qi)
    matrix = np.block([[Qi, Zi], [Zi, Qi]]) @ blocks
    return CalderonOperator(st, blocks, mass, matrix)
