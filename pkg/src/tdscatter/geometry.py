"""
Meshes and discrete spaces.

Surface triangulations of the interface, tetrahedral meshes of the scatterer,
the three discrete spaces of the boundary-field system and the maps between
them:

* ``DivConformingSpace``: RWG functions, one per surface edge.
* ``CurlConformingSurfaceSpace``: rotated RWG functions ``n x f``.
* ``EdgeElementSpace``: lowest-order Nedelec (Whitney) edge elements on the
  tetrahedral mesh, optionally constrained on the inner conductor interface.

Global edge directions always run from the lower to the higher vertex index.
Region tags follow the mesh-file convention: 1 = dielectric volume,
2 = vacuum/dielectric interface, 3 = dielectric/conductor interface.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .quadrature import gauss_line, gauss_triangle

TAG_DOMAIN = 1
TAG_GAMMA = 2
TAG_COATING = 3

# local tetrahedron edges as (a, b) vertex pairs, and local face k = vertices
# other than k
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
TET_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


class MeshError(ValueError):
    """Raised for malformed or invalid meshes."""


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _unique_rows(a):
    """Unique rows of an integer array and the inverse map."""
    uniq, inv = np.unique(a, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


# ---------------------------------------------------------------------------
# Surface mesh
# ---------------------------------------------------------------------------


class SurfaceMesh:
    """Closed, consistently oriented triangulated surface.

    Parameters
    ----------
    vertices : (V, 3) array
    triangles : (T, 3) int array
        Counter-clockwise when seen from outside, so that the right-hand
        normal points from the obstacle into free space.
    volume_vertex : (V,) int array, optional
        Index of each surface vertex in the parent volume mesh.
    face_map : (T, 2) int array, optional
        ``(tet, local_face)`` of the volume face matching each triangle.
    closed : bool
        Require a watertight surface with Euler characteristic 2 per
        connected component.
    outward : bool
        Require a positive enclosed signed volume (closed surfaces only).
    """

    def __init__(self, vertices, triangles, volume_vertex=None, face_map=None,
                 closed=True, outward=True):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must have shape (T, 3)")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle references a missing vertex")

        self.vertices = _frozen(vertices)
        self.triangles = _frozen(triangles)
        self.volume_vertex = None if volume_vertex is None else _frozen(volume_vertex, np.int64)
        self.face_map = None if face_map is None else _frozen(face_map, np.int64)

        p = vertices[triangles]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        twice_area = np.linalg.norm(cr, axis=1)
        if np.any(twice_area <= 1e-14 * max(1.0, np.abs(vertices).max()) ** 2):
            raise MeshError("degenerate triangle")
        self.areas = _frozen(0.5 * twice_area)
        self.normals = _frozen(cr / twice_area[:, None])
        self.centroids = _frozen(p.mean(axis=1))

        self._build_edges(closed)
        if closed:
            self._check_topology()
            if outward and self.signed_volume() < 0:
                raise MeshError("surface normals point inward")

    def _build_edges(self, closed):
        tri = self.triangles
        T = len(tri)
        # local edge i is opposite local vertex i, traversed v[i+1] -> v[i+2]
        start = tri[:, [1, 2, 0]]
        end = tri[:, [2, 0, 1]]
        lo = np.minimum(start, end)
        hi = np.maximum(start, end)
        edges, inv = _unique_rows(np.stack([lo.ravel(), hi.ravel()], axis=1))
        tri_edges = inv.reshape(T, 3)
        forward = (start == lo).reshape(T, 3)

        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        fwd_counts = np.bincount(tri_edges[forward], minlength=len(edges))
        if closed:
            if np.any(counts != 2):
                raise MeshError("surface is not watertight: an edge is shared "
                                "by %d triangles" % counts[counts != 2][0])
            if np.any(fwd_counts != 1):
                raise MeshError("inconsistent triangle orientation: an edge is "
                                "traversed twice in the same direction")

        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        t_idx = np.repeat(np.arange(T), 3).reshape(T, 3)
        # plus triangle traverses the edge low -> high
        edge_tris[tri_edges[forward], 0] = t_idx[forward]
        edge_tris[tri_edges[~forward], 1] = t_idx[~forward]

        self.edges = _frozen(edges)
        self.tri_edges = _frozen(tri_edges)
        self.tri_signs = _frozen(np.where(forward, 1.0, -1.0))
        self.edge_tris = _frozen(edge_tris)
        v = self.vertices
        self.edge_lengths = _frozen(np.linalg.norm(v[edges[:, 1]] - v[edges[:, 0]], axis=1))

    def _check_topology(self):
        V = len(np.unique(self.triangles))
        E, T = len(self.edges), len(self.triangles)
        ncomp = self.n_components()
        chi = V - E + T
        if chi != 2 * ncomp:
            raise MeshError("Euler characteristic %d != 2 per component "
                            "(%d components); only genus-0 surfaces are "
                            "supported" % (chi, ncomp))

    def n_components(self):
        adj = sp.coo_matrix((np.ones(len(self.edges)),
                             (self.edge_tris[:, 0], self.edge_tris[:, 1])),
                            shape=(len(self.triangles),) * 2)
        ncomp, _ = sp.csgraph.connected_components(adj, directed=False)
        return ncomp

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def euler_characteristic(self):
        return len(np.unique(self.triangles)) - self.n_edges + self.n_triangles

    def signed_volume(self):
        p = self.vertices[self.triangles]
        return np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0

    def winding_number(self, pts):
        """Winding number of the surface around each point: 1 inside a
        closed outward-oriented surface, 0 outside (solid angles by the
        Van Oosterom-Strackee formula)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        p = self.vertices[self.triangles]
        out = np.empty(len(pts))
        for k, x in enumerate(pts):
            a, b, c = (p[:, i] - x for i in range(3))
            la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
            num = np.einsum("ij,ij->i", a, np.cross(b, c))
            den = (la * lb * lc + np.einsum("ij,ij->i", a, b) * lc
                   + np.einsum("ij,ij->i", a, c) * lb + np.einsum("ij,ij->i", b, c) * la)
            out[k] = 2 * np.arctan2(num, den).sum() / (4 * np.pi)
        return out

    def mesh_size(self):
        """Largest edge length."""
        return float(self.edge_lengths.max())

    def local_size(self):
        """Per-triangle diameter (longest edge)."""
        return self.edge_lengths[self.tri_edges].max(axis=1)

    def map_points(self, bary):
        """Physical points for reference coordinates ``bary`` (Q, 2) on every
        triangle, shape (T, Q, 3). Reference triangle is (0,0), (1,0), (0,1)."""
        p = self.vertices[self.triangles]
        bary = np.atleast_2d(bary)
        return (p[:, None, 0] + bary[None, :, 0, None] * (p[:, None, 1] - p[:, None, 0])
                + bary[None, :, 1, None] * (p[:, None, 2] - p[:, None, 0]))


# ---------------------------------------------------------------------------
# Volume mesh
# ---------------------------------------------------------------------------


class VolumeMesh:
    """Tetrahedral mesh of the dielectric region with tagged boundary faces.

    Parameters
    ----------
    vertices : (V, 3) array
    tets : (N, 4) int array
        Positively oriented tetrahedra.
    boundary : dict
        Maps a region tag (``TAG_GAMMA``, ``TAG_COATING``) to an (F, 3) array of
        boundary triangles in volume vertex numbering.
    tet_tags : (N,) int array, optional
        Region tag of each tetrahedron (default ``TAG_DOMAIN``).
    """

    def __init__(self, vertices, tets, boundary, tet_tags=None):
        vertices = np.asarray(vertices, dtype=float)
        tets = np.asarray(tets, dtype=np.int64)
        if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
            raise MeshError("tets must have shape (N, 4)")
        if tets.min() < 0 or tets.max() >= len(vertices):
            raise MeshError("tetrahedron references a missing vertex")
        self.vertices = _frozen(vertices)
        self.tets = _frozen(tets)
        self.tet_tags = _frozen(np.full(len(tets), TAG_DOMAIN) if tet_tags is None
                                else tet_tags, np.int64)

        p = vertices[tets]
        d = p[:, 1:] - p[:, :1]
        vol = np.linalg.det(d) / 6.0
        scale = max(1.0, np.abs(vertices).max()) ** 3
        if np.any(vol <= 1e-14 * scale):
            raise MeshError("inverted or degenerate tetrahedron (index %d)"
                            % int(np.argmin(vol)))
        self.volumes = _frozen(vol)
        # gradients of barycentric coordinates, shape (N, 4, 3)
        dinv = np.linalg.inv(d)            # columns are grad lambda_1..3
        g = np.empty((len(tets), 4, 3))
        g[:, 1:] = np.transpose(dinv, (0, 2, 1))
        g[:, 0] = -g[:, 1:].sum(axis=1)
        self.grad_bary = _frozen(g)

        # edges
        a = tets[:, TET_EDGES[:, 0]]
        b = tets[:, TET_EDGES[:, 1]]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        edges, inv = _unique_rows(np.stack([lo.ravel(), hi.ravel()], axis=1))
        self.edges = _frozen(edges)
        self.tet_edges = _frozen(inv.reshape(-1, 6))
        self.tet_edge_signs = _frozen(np.where(a < b, 1.0, -1.0))

        # faces and boundary identification
        faces = np.sort(tets[:, TET_FACES], axis=2).reshape(-1, 3)
        ufaces, finv, fcount = np.unique(faces, axis=0, return_inverse=True,
                                         return_counts=True)
        finv = finv.reshape(-1)
        owner = {}
        once = fcount[finv] == 1
        for flat in np.nonzero(once)[0]:
            owner[tuple(faces[flat])] = (flat // 4, flat % 4)
        self._face_owner = owner
        if np.any(fcount > 2):
            raise MeshError("a face is shared by more than two tetrahedra")

        self.boundary = {}
        seen = set()
        for tag, tris in boundary.items():
            tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
            fmap = np.empty((len(tris), 2), dtype=np.int64)
            for k, t in enumerate(tris):
                key = tuple(sorted(t))
                if key not in owner:
                    raise MeshError("boundary triangle %s (tag %d) is not a "
                                    "boundary face of the volume mesh" % (t, tag))
                if key in seen:
                    raise MeshError("boundary triangle tagged twice")
                seen.add(key)
                fmap[k] = owner[key]
            self.boundary[int(tag)] = (_frozen(tris), _frozen(fmap))
        if len(seen) != len(owner):
            raise MeshError("%d boundary faces carry no region tag"
                            % (len(owner) - len(seen)))

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_tets(self):
        return len(self.tets)

    def has_region(self, tag):
        return tag in self.boundary and len(self.boundary[tag][0]) > 0

    def surface(self, tag=TAG_GAMMA, closed=True):
        """Extract the boundary component ``tag`` as a SurfaceMesh linked to
        this volume mesh, with normals pointing out of the volume mesh."""
        if not self.has_region(tag):
            raise MeshError("missing boundary region %d" % tag)
        tris, fmap = self.boundary[tag]
        tris = np.array(tris)
        # orient away from the owning tetrahedron
        opp = self.vertices[self.tets[fmap[:, 0], fmap[:, 1]]]
        p = self.vertices[tris]
        nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = np.einsum("ij,ij->i", nrm, opp - p[:, 0]) > 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        used, local = np.unique(tris, return_inverse=True)
        return SurfaceMesh(self.vertices[used], local.reshape(-1, 3),
                           volume_vertex=used, face_map=fmap, closed=closed,
                           outward=(tag != TAG_COATING))


# ---------------------------------------------------------------------------
# Mesh files (Gmsh MSH 2.2 ASCII subset)
# ---------------------------------------------------------------------------


def _read_sections(text):
    sections = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != "$End" + name:
                j += 1
            if j == len(lines):
                raise MeshError("unterminated section $%s" % name)
            sections[name] = lines[i + 1:j]
            i = j
        i += 1
    return sections


def read_msh(path):
    """Parse a Gmsh 2.2 ASCII file.

    Returns ``(nodes, triangles, tri_tags, tets, tet_tags)`` with zero based
    node indices; tags are physical tags (first element tag).
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshError("cannot read mesh file %s: %s" % (path, exc)) from exc
    sec = _read_sections(text)
    for name in ("MeshFormat", "Nodes", "Elements"):
        if name not in sec:
            raise MeshError("missing $%s section" % name)
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 3 or fmt[0] not in ("2.2", "2.1", "2") or fmt[1] != "0":
        raise MeshError("unsupported mesh format %r (need ASCII 2.2)" % " ".join(fmt))
    try:
        nn = int(sec["Nodes"][0])
        ids, xyz = [], []
        for line in sec["Nodes"][1:nn + 1]:
            f = line.split()
            ids.append(int(f[0]))
            xyz.append([float(v) for v in f[1:4]])
        index = {nid: k for k, nid in enumerate(ids)}
        ne = int(sec["Elements"][0])
        tris, ttags, tets, vtags = [], [], [], []
        for line in sec["Elements"][1:ne + 1]:
            f = [int(v) for v in line.split()]
            etype, ntags = f[1], f[2]
            tags = f[3:3 + ntags]
            nodes = [index[n] for n in f[3 + ntags:]]
            phys = tags[0] if tags else 0
            if etype == 2:
                tris.append(nodes[:3])
                ttags.append(phys)
            elif etype == 4:
                tets.append(nodes[:4])
                vtags.append(phys)
            elif etype in (1, 15):
                continue
            else:
                raise MeshError("unsupported element type %d" % etype)
    except (ValueError, IndexError, KeyError) as exc:
        raise MeshError("malformed mesh file: %s" % exc) from exc
    if len(xyz) != nn:
        raise MeshError("node count mismatch")
    return (np.array(xyz, dtype=float), np.array(tris, dtype=np.int64).reshape(-1, 3),
            np.array(ttags, dtype=np.int64), np.array(tets, dtype=np.int64).reshape(-1, 4),
            np.array(vtags, dtype=np.int64))


def write_msh(path, vm):
    """Write a VolumeMesh in the Gmsh 2.2 ASCII subset read by ``read_msh``."""
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(vm.vertices))]
    lines += ["%d %.17g %.17g %.17g" % (k + 1, *x) for k, x in enumerate(vm.vertices)]
    lines += ["$EndNodes", "$Elements"]
    elems = []
    for tag in sorted(vm.boundary):
        for t in vm.boundary[tag][0]:
            elems.append("2 2 %d %d %d %d %d" % (tag, tag, *(t + 1)))
    for t, tag in zip(vm.tets, vm.tet_tags):
        elems.append("4 2 %d %d %d %d %d %d" % (tag, tag, *(t + 1)))
    lines.append(str(len(elems)))
    lines += ["%d %s" % (k + 1, e) for k, e in enumerate(elems)]
    lines.append("$EndElements")
    Path(path).write_text("\n".join(lines) + "\n")


DEFAULT_LABELS = {"domain": TAG_DOMAIN, "gamma": TAG_GAMMA, "coating": TAG_COATING}


def load_mesh(path, labels=None, coated=False):
    """Read a tetrahedral scatterer mesh and its interface surface.

    Parameters
    ----------
    path : str or Path
        Gmsh 2.2 ASCII file (see ``docs/mesh_format.md``).
    labels : dict, optional
        Physical tags for ``domain``, ``gamma`` and ``coating``.
    coated : bool
        Require a conductor interface region.

    Returns
    -------
    (VolumeMesh, SurfaceMesh)
    """
    labels = {**DEFAULT_LABELS, **(labels or {})}
    nodes, tris, ttags, tets, vtags = read_msh(path)
    if len(tets) == 0:
        raise MeshError("mesh contains no tetrahedra")
    if not np.any(vtags == labels["domain"]):
        raise MeshError("missing region label %d (domain)" % labels["domain"])
    if not np.any(ttags == labels["gamma"]):
        raise MeshError("missing region label %d (gamma)" % labels["gamma"])
    if coated and not np.any(ttags == labels["coating"]):
        raise MeshError("missing region label %d (coating)" % labels["coating"])

    gamma = tris[ttags == labels["gamma"]]
    boundary = {TAG_GAMMA: gamma}
    if np.any(ttags == labels["coating"]):
        boundary[TAG_COATING] = tris[ttags == labels["coating"]]
    keep = vtags == labels["domain"]
    vm = VolumeMesh(nodes, _orient_tets(nodes, tets[keep]), boundary)
    return vm, vm.surface(TAG_GAMMA)


# ---------------------------------------------------------------------------
# Built-in generators
# ---------------------------------------------------------------------------


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v[0])
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return v, f


_ICO_V, _ICO_F = _icosahedron()
_ICO_N = np.cross(_ICO_V[_ICO_F[:, 1]] - _ICO_V[_ICO_F[:, 0]],
                  _ICO_V[_ICO_F[:, 2]] - _ICO_V[_ICO_F[:, 0]])
_ICO_N /= np.linalg.norm(_ICO_N, axis=1)[:, None]
_ICO_INRADIUS = float(np.dot(_ICO_N[0], _ICO_V[_ICO_F[0, 0]]))


def _to_round(x, radius):
    """Radially map the unit icosahedral gauge onto a ball of ``radius``."""
    r = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    nz = r > 1e-14
    gauge = (x[nz] @ _ICO_N.T).max(axis=1) / _ICO_INRADIUS
    out[nz] = x[nz] / r[nz, None] * (radius * gauge)[:, None]
    return out


def _midpoints(v, pairs):
    lo, hi = np.minimum(pairs[:, 0], pairs[:, 1]), np.maximum(pairs[:, 0], pairs[:, 1])
    uniq, inv = _unique_rows(np.stack([lo, hi], axis=1))
    newv = np.vstack([v, 0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]])])
    return newv, len(v) + inv


def _refine_triangles(v, f):
    pairs = np.concatenate([f[:, [1, 2]], f[:, [2, 0]], f[:, [0, 1]]])
    v, mid = _midpoints(v, pairs)
    n = len(f)
    m0, m1, m2 = mid[:n], mid[n:2 * n], mid[2 * n:]   # opposite vertex 0, 1, 2
    a, b, c = f.T
    f = np.concatenate([np.stack([a, m2, m1], 1), np.stack([m2, b, m0], 1),
                        np.stack([m1, m0, c], 1), np.stack([m0, m1, m2], 1)])
    return v, f


def _red_refine(v, t):
    """Bey's regular refinement: every tetrahedron into eight."""
    n = len(t)
    pairs = np.concatenate([t[:, list(e)] for e in TET_EDGES])
    v, mid = _midpoints(v, pairs)
    m = mid.reshape(6, n)
    x01, x02, x03, x12, x13, x23 = m
    x0, x1, x2, x3 = t.T
    kids = [(x0, x01, x02, x03), (x01, x1, x12, x13), (x02, x12, x2, x23),
            (x03, x13, x23, x3), (x01, x02, x03, x13), (x01, x02, x12, x13),
            (x02, x03, x13, x23), (x02, x12, x13, x23)]
    return v, np.concatenate([np.stack(k, 1) for k in kids])


def _orient_tets(v, t):
    p = v[t]
    vol = np.linalg.det(p[:, 1:] - p[:, :1])
    t = t.copy()
    t[vol < 0] = t[vol < 0][:, [0, 2, 1, 3]]
    return t


def _boundary_faces(v, t):
    faces = np.sort(t[:, TET_FACES], axis=2).reshape(-1, 3)
    _, inv, cnt = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
    return faces[cnt[inv.reshape(-1)] == 1]


def _split_prism(p):
    """Split prism (bottom p0 p1 p2, top p3 p4 p5) into three tets with
    quad-face diagonals through the smallest global index (conforming)."""
    perms = [[0, 1, 2, 3, 4, 5], [1, 2, 0, 4, 5, 3], [2, 0, 1, 5, 3, 4],
             [3, 5, 4, 0, 2, 1], [4, 3, 5, 1, 0, 2], [5, 4, 3, 2, 1, 0]]
    q = [p[i] for i in perms[int(np.argmin(p))]]
    if min(q[1], q[5]) < min(q[2], q[4]):
        return [(q[0], q[1], q[2], q[5]), (q[0], q[1], q[5], q[4]), (q[0], q[4], q[5], q[3])]
    return [(q[0], q[1], q[2], q[4]), (q[0], q[4], q[2], q[5]), (q[0], q[4], q[5], q[3])]


def icosphere(level=0, radius=1.0):
    """Triangulated sphere with ``20 * 4**level`` triangles."""
    v, f = _ICO_V.copy(), _ICO_F.copy()
    for _ in range(level):
        v, f = _refine_triangles(v, f)
    return SurfaceMesh(_to_round(v, radius), f)


def ball_mesh(level=0, radius=1.0):
    """Tetrahedral ball whose boundary is ``icosphere(level, radius)``.

    ``20 * 8**level`` tetrahedra and ``20 * 4**level`` boundary triangles.
    """
    v = np.vstack([np.zeros(3), _ICO_V])
    t = np.hstack([np.zeros((20, 1), dtype=np.int64), _ICO_F + 1])
    for _ in range(level):
        v, t = _red_refine(v, t)
    v = _to_round(v, radius)
    t = _orient_tets(v, t)
    return VolumeMesh(v, t, {TAG_GAMMA: _boundary_faces(v, t)})


def coated_ball_mesh(level=0, radius=1.0, core_radius=0.5):
    """Spherical dielectric shell ``core_radius < r < radius`` around a
    perfectly conducting core; inner boundary tagged ``TAG_COATING``."""
    if not 0 < core_radius < radius:
        raise MeshError("need 0 < core_radius < radius")
    rho = core_radius / radius
    v = np.vstack([rho * _ICO_V, _ICO_V])
    tets = []
    for f in _ICO_F:
        tets += _split_prism([f[0], f[1], f[2], f[0] + 12, f[1] + 12, f[2] + 12])
    t = np.array(tets, dtype=np.int64)
    for _ in range(level):
        v, t = _red_refine(v, t)
    v = _to_round(v, radius)
    t = _orient_tets(v, t)
    bf = _boundary_faces(v, t)
    rc = np.linalg.norm(v[bf].mean(axis=1), axis=1)
    outer = rc > 0.5 * (radius + core_radius)
    return VolumeMesh(v, t, {TAG_GAMMA: bf[outer], TAG_COATING: bf[~outer]})


def reference_tet_mesh(coated_face=None):
    """Single reference tetrahedron; optionally tag one face (index of the
    opposite vertex) as conductor interface."""
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    t = np.array([[0, 1, 2, 3]])
    faces = [tuple(TET_FACES[k]) for k in range(4)]
    bnd = {TAG_GAMMA: [f for k, f in enumerate(faces) if k != coated_face]}
    if coated_face is not None:
        bnd[TAG_COATING] = [faces[coated_face]]
    return VolumeMesh(v, t, bnd)


# ---------------------------------------------------------------------------
# Discrete spaces
# ---------------------------------------------------------------------------


class DivConformingSpace:
    """RWG space: ``f_e = +-(l_e / 2A)(x - p)`` on the two triangles of edge e.

    The coefficient of ``f_e`` is the mean normal component across the edge
    (oriented from the plus to the minus triangle).
    """

    kind = "div"

    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        tri = mesh.triangles
        # opposite vertex of local edge i is local vertex i
        self.opposite = mesh.vertices[tri]                      # (T, 3, 3)
        l = mesh.edge_lengths[mesh.tri_edges]                   # (T, 3)
        self.coef = mesh.tri_signs * l / (2.0 * mesh.areas[:, None])
        self.div = mesh.tri_signs * l / mesh.areas[:, None]    # (T, 3)

    @property
    def dim(self):
        return self.mesh.n_edges

    def values(self, tri_idx, x):
        """Local basis values at points ``x`` (..., 3) on triangles
        ``tri_idx`` (...); shape (..., 3 local, 3)."""
        c = self.coef[tri_idx]
        p = self.opposite[tri_idx]
        return c[..., None] * (x[..., None, :] - p)

    def evaluate(self, coeffs, tri_idx, x):
        """Field of coefficient vector ``coeffs`` at points ``x`` on
        triangles ``tri_idx``."""
        loc = np.asarray(coeffs)[self.mesh.tri_edges[tri_idx]]
        return np.einsum("...i,...ik->...k", loc, self.values(tri_idx, x))

    def evaluate_div(self, coeffs, tri_idx):
        loc = np.asarray(coeffs)[self.mesh.tri_edges[tri_idx]]
        return np.sum(loc * self.div[tri_idx], axis=-1)

    def edge_normals(self):
        """In-plane unit normal of each edge pointing out of its plus
        triangle."""
        m = self.mesh
        v = m.vertices
        tp = m.edge_tris[:, 0]
        t = v[m.edges[:, 1]] - v[m.edges[:, 0]]
        t /= np.linalg.norm(t, axis=1)[:, None]
        nu = np.cross(t, m.normals[tp])
        return nu

    def interpolate(self, func):
        """Interpolant of a vector field: coefficient = mean normal component
        along the edge (3-point Gauss on the edge)."""
        m = self.mesh
        v = m.vertices
        nodes, w = gauss_line(3)
        a, b = v[m.edges[:, 0]], v[m.edges[:, 1]]
        x = a[:, None] + nodes[None, :, None] * (b - a)[:, None]
        vals = np.asarray(func(x.reshape(-1, 3))).reshape(len(a), len(nodes), 3)
        nu = self.edge_normals()
        # plus triangle orientation: edge runs low->high ccw, so t x n points out
        return np.einsum("eqk,ek,q->e", vals, nu, w)

    def gram(self, order=2):
        """Mass matrix ``G[i, j] = <f_i, f_j>``."""
        return _surface_pairing(self, self, lambda fi, fj, n: np.einsum("...ik,...jk->...ij", fi, fj), order)

    def rotated_gram(self, order=2):
        """Pivot pairing ``Q[i, k] = <f_i, n x f_k>`` (antisymmetric)."""
        return _surface_pairing(
            self, self,
            lambda fi, fj, n: np.einsum("...ik,...jk->...ij", fi,
                                        np.cross(n[..., None, :], fj)), order)

    def pair(self, func, order=4):
        """Load vector ``<func, f_i>`` of a vector field given at points."""
        m = self.mesh
        nodes, w = gauss_triangle(order)
        x = m.map_points(nodes)
        vals = np.asarray(func(x.reshape(-1, 3))).reshape(x.shape[:2] + (3,))
        T = m.n_triangles
        idx = np.repeat(np.arange(T), len(w)).reshape(T, -1)
        f = self.values(idx, x)                                  # (T, Q, 3, 3)
        loc = np.einsum("tqk,tqik,q->ti", vals, f, w) * (2 * m.areas)[:, None]
        out = np.zeros(self.dim, dtype=np.result_type(vals, float))
        np.add.at(out, m.tri_edges, loc)
        return out

    def norm(self, coeffs, gram=None):
        G = self.gram() if gram is None else gram
        c = np.asarray(coeffs)
        return float(np.sqrt(abs(np.vdot(c, G @ c))))


class CurlConformingSurfaceSpace:
    """Rotated RWG space ``g_e = n x f_e``; tangential, curl-conforming."""

    kind = "curl"

    def __init__(self, div_space: DivConformingSpace):
        self.div_space = div_space
        self.mesh = div_space.mesh

    @property
    def dim(self):
        return self.div_space.dim

    def values(self, tri_idx, x):
        n = self.mesh.normals[tri_idx]
        return np.cross(n[..., None, :], self.div_space.values(tri_idx, x))

    def evaluate(self, coeffs, tri_idx, x):
        n = self.mesh.normals[tri_idx]
        return np.cross(n, self.div_space.evaluate(coeffs, tri_idx, x))

    def interpolate(self, func):
        """Interpolant of a tangential field m: m = n x u with u = -n x m."""
        m = self.mesh
        ds = self.div_space
        # evaluate on edges using the plus-triangle normal
        nplus = m.normals[m.edge_tris[:, 0]]
        v = m.vertices
        nodes, w = gauss_line(3)
        a, b = v[m.edges[:, 0]], v[m.edges[:, 1]]
        x = a[:, None] + nodes[None, :, None] * (b - a)[:, None]
        vals = np.asarray(func(x.reshape(-1, 3))).reshape(len(a), len(nodes), 3)
        u = -np.cross(nplus[:, None, :], vals)
        return np.einsum("eqk,ek,q->e", u, ds.edge_normals(), w)

    def norm(self, coeffs, gram=None):
        # |n x f| = |f| pointwise, so the Gram matrices coincide
        return self.div_space.norm(coeffs, gram)


def _surface_pairing(sa, sb, local, order):
    m = sa.mesh
    nodes, w = gauss_triangle(order)
    x = m.map_points(nodes)
    T = m.n_triangles
    idx = np.repeat(np.arange(T), len(w)).reshape(T, -1)
    fa = sa.values(idx, x)
    fb = sb.values(idx, x)
    n = np.broadcast_to(m.normals[:, None, :], x.shape)
    loc = np.einsum("tqij,q->tij", local(fa, fb, n), w) * (2 * m.areas)[:, None, None]
    rows = np.repeat(m.tri_edges[:, :, None], 3, axis=2)
    cols = np.repeat(m.tri_edges[:, None, :], 3, axis=1)
    return sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(sa.dim, sb.dim))


@dataclass(frozen=True)
class Density:
    """Coefficient vector tagged with its surface space (``"div"`` for
    electric-type densities j, ``"curl"`` for magnetic-type densities m)."""

    coeffs: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("div", "curl"):
            raise ValueError("density kind must be 'div' or 'curl'")


def rotate_tangential(density: Density, dim=None) -> Density:
    """Apply ``u -> n x u`` at coefficient level.

    With ``g_e = n x f_e``: a curl-space field ``sum m_e g_e`` maps to
    ``-sum m_e f_e`` and a div-space field ``sum c_e f_e`` maps to
    ``sum c_e g_e``. Rotating twice is the negation.
    """
    c = np.asarray(density.coeffs)
    if dim is not None and len(c) != dim:
        raise ValueError("coefficient length %d does not match space dimension %d"
                         % (len(c), dim))
    if density.kind == "curl":
        return Density(-c, "div")
    return Density(c.copy(), "curl")


class EdgeElementSpace:
    """Lowest-order Nedelec space on a VolumeMesh.

    With ``coated=True`` the DOFs of edges on the conductor interface are
    constrained to zero, so ``pi_t u = 0`` there for every member.
    """

    def __init__(self, vm: VolumeMesh, coated=False):
        self.mesh = vm
        self.coated = coated
        constrained = np.zeros(vm.n_edges, dtype=bool)
        if coated:
            if not vm.has_region(TAG_COATING):
                raise MeshError("coated space requested but the mesh has no "
                                "conductor interface region")
            tris = vm.boundary[TAG_COATING][0]
            pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [0, 2]]])
            pairs = np.sort(pairs, axis=1)
            lookup = {tuple(e): k for k, e in enumerate(vm.edges)}
            for e in pairs:
                constrained[lookup[tuple(e)]] = True
        self.constrained = _frozen(constrained)
        self.free = _frozen(np.nonzero(~constrained)[0])

    @property
    def dim(self):
        return self.mesh.n_edges

    @property
    def n_free(self):
        return len(self.free)

    def restrict(self, u):
        """Coefficients on free DOFs."""
        return np.asarray(u)[self.free]

    def extend(self, u_free):
        u = np.zeros(self.dim, dtype=np.result_type(u_free, float))
        u[self.free] = u_free
        return u

    def values(self, tet_idx, bary):
        """Basis values of the six local edges at barycentric points,
        including global orientation signs; shape (..., 6, 3)."""
        vm = self.mesh
        g = vm.grad_bary[tet_idx]                            # (..., 4, 3)
        la = bary[..., TET_EDGES[:, 0]]
        lb = bary[..., TET_EDGES[:, 1]]
        ga = g[..., TET_EDGES[:, 0], :]
        gb = g[..., TET_EDGES[:, 1], :]
        w = la[..., None] * gb - lb[..., None] * ga
        return vm.tet_edge_signs[tet_idx][..., None] * w

    def curls(self, tet_idx):
        vm = self.mesh
        g = vm.grad_bary[tet_idx]
        c = 2.0 * np.cross(g[..., TET_EDGES[:, 0], :], g[..., TET_EDGES[:, 1], :])
        return vm.tet_edge_signs[tet_idx][..., None] * c

    def evaluate(self, u, tet_idx, bary):
        loc = np.asarray(u)[self.mesh.tet_edges[tet_idx]]
        return np.einsum("...i,...ik->...k", loc, self.values(tet_idx, bary))

    def interpolate_gradient(self, phi):
        """Coefficients of grad(phi) for a scalar function of vertices
        (edge DOF = phi(b) - phi(a) along the global direction)."""
        vals = phi(self.mesh.vertices)
        e = self.mesh.edges
        return vals[e[:, 1]] - vals[e[:, 0]]

    def interpolate(self, func):
        """Edge-moment interpolant: DOF = integral of u . t along the edge."""
        vm = self.mesh
        a, b = vm.vertices[vm.edges[:, 0]], vm.vertices[vm.edges[:, 1]]
        nodes, w = gauss_line(3)
        x = a[:, None] + nodes[None, :, None] * (b - a)[:, None]
        vals = np.asarray(func(x.reshape(-1, 3))).reshape(len(a), len(nodes), 3)
        return np.einsum("eqk,ek,q->e", vals, b - a, w)

    def face_trace_values(self, surf: SurfaceMesh, x):
        """Tangential projection of the six local basis functions of the tet
        owning each surface triangle, at points ``x`` (T, Q, 3)."""
        vm = self.mesh
        tet = surf.face_map[:, 0]
        p0 = vm.vertices[vm.tets[tet, 0]]
        g = vm.grad_bary[tet]                                  # (T, 4, 3)
        lam = np.einsum("tjk,tqk->tqj", g[:, 1:], x - p0[:, None])
        bary = np.concatenate([1 - lam.sum(axis=2, keepdims=True), lam], axis=2)
        idx = np.broadcast_to(tet[:, None], x.shape[:2])
        w = self.values(idx, bary)                             # (T, Q, 6, 3)
        n = surf.normals[:, None, None, :]
        return w - np.sum(w * n, axis=-1, keepdims=True) * n


def trace_coupling_matrix(fem: EdgeElementSpace, surf) -> sp.csr_matrix:
    """Pairing ``T[i, k] = <pi_t^- w_k, f_i>_Gamma`` between the edge-element
    basis and the RWG basis dual to the rotated space ``surf``.

    ``T`` realizes the block ``pi_t^-``; its transpose realizes the adjoint
    ``(pi_t^-)'``.
    """
    ds = surf.div_space if isinstance(surf, CurlConformingSurfaceSpace) else surf
    sm = ds.mesh
    if sm.face_map is None or fem.mesh.vertices is None:
        raise MeshError("surface mesh is not linked to the volume mesh")
    vm = fem.mesh
    if sm.volume_vertex is None or not np.allclose(vm.vertices[sm.volume_vertex], sm.vertices):
        raise MeshError("surface and volume meshes are not related by the "
                        "boundary-face map")
    nodes, w = gauss_triangle(2)
    x = sm.map_points(nodes)                                   # (T, Q, 3)
    T = sm.n_triangles
    idx = np.repeat(np.arange(T), len(w)).reshape(T, -1)
    f = ds.values(idx, x)                                      # (T, Q, 3, 3)
    wt = fem.face_trace_values(sm, x)                          # (T, Q, 6, 3)
    loc = np.einsum("tqik,tqjk,q->tij", f, wt, w) * (2 * sm.areas)[:, None, None]
    rows = np.repeat(sm.tri_edges[:, :, None], 6, axis=2)
    cols = np.repeat(vm.tet_edges[sm.face_map[:, 0]][:, None, :], 3, axis=1)
    return sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(ds.dim, fem.dim))


def build_spaces(vm: VolumeMesh, sm: SurfaceMesh, coated=False):
    """Edge-element, RWG and rotated-RWG spaces for the boundary-field
    system."""
    fem = EdgeElementSpace(vm, coated=coated)
    div = DivConformingSpace(sm)
    return fem, div, CurlConformingSurfaceSpace(div)


# ---------------------------------------------------------------------------
# Barycentric refinement and Buffa-Christiansen dual functions
# ---------------------------------------------------------------------------


def barycentric_refinement(sm: SurfaceMesh):
    """Split every triangle into six through its centroid and edge midpoints.

    Returns
    -------
    fine : SurfaceMesh
        Vertex numbering: coarse vertices, then edge midpoints (in coarse
        edge order), then centroids.
    parent : (6 T,) int array
        Coarse triangle of each fine triangle.
    """
    V, E, T = sm.n_vertices, sm.n_edges, sm.n_triangles
    v = sm.vertices
    verts = np.vstack([v, 0.5 * (v[sm.edges[:, 0]] + v[sm.edges[:, 1]]), sm.centroids])
    tri = sm.triangles
    mid = V + sm.tri_edges                 # midpoint opposite local vertex i
    g = V + E + np.arange(T)
    a, b, c = tri.T
    m_bc, m_ca, m_ab = mid.T
    fine = np.concatenate([np.stack(x, 1) for x in (
        (a, m_ab, g), (m_ab, b, g), (b, m_bc, g),
        (m_bc, c, g), (c, m_ca, g), (m_ca, a, g))])
    parent = np.tile(np.arange(T), 6)
    return SurfaceMesh(verts, fine), parent


class BuffaChristiansenSpace:
    """Buffa-Christiansen functions of a coarse surface mesh, represented in
    the RWG basis of its barycentric refinement.

    The function of coarse edge ``e = (v1, v2)`` carries unit flux from the
    dual cell of ``v1`` into the dual cell of ``v2`` across the dual edge of
    ``e``, spreads it with equal flux per fine triangle inside each of the
    two cells, and takes the minimal-norm radial fluxes (no circulation
    around the vertex). These are div-conforming, and their rotations pair
    stably with the coarse RWG functions.

    Attributes
    ----------
    fine : SurfaceMesh
    fine_space : DivConformingSpace
    embed_rwg : sparse (fine edges, coarse edges)
        Coarse RWG functions in the fine RWG basis (exact).
    embed_bc : sparse (fine edges, coarse edges)
        Buffa-Christiansen functions in the fine RWG basis.
    """

    def __init__(self, coarse_space: DivConformingSpace):
        sm = coarse_space.mesh
        self.coarse_space = coarse_space
        self.fine, self.parent = barycentric_refinement(sm)
        self.fine_space = DivConformingSpace(self.fine)
        self.embed_rwg = self._embed_rwg()
        self.embed_bc = self._embed_bc()

    @property
    def dim(self):
        return self.coarse_space.dim

    def _embed_rwg(self):
        fs, cs = self.fine_space, self.coarse_space
        fm = self.fine
        nodes, w = gauss_line(2)
        a, b = fm.vertices[fm.edges[:, 0]], fm.vertices[fm.edges[:, 1]]
        x = a[:, None] + nodes[None, :, None] * (b - a)[:, None]       # (Ef, 2, 3)
        tp = self.parent[fm.edge_tris[:, 0]]
        vals = cs.values(np.repeat(tp[:, None], len(w), 1), x)         # (Ef, 2, 3, 3)
        flux = np.einsum("eqik,ek,q->ei", vals, fs.edge_normals(), w)
        rows = np.repeat(np.arange(fm.n_edges), 3)
        cols = self.coarse_space.mesh.tri_edges[tp].ravel()
        M = sp.csr_matrix((flux.ravel(), (rows, cols)), shape=(fm.n_edges, cs.dim))
        M.data[np.abs(M.data) < 1e-13] = 0.0
        M.eliminate_zeros()
        return M

    def _embed_bc(self):
        sm = self.coarse_space.mesh
        fm = self.fine
        V = sm.n_vertices
        fe = fm.edges
        # fine edges incident to each coarse vertex (radial edges of its cell)
        radial = {}
        for k, (p, q) in enumerate(fe):
            if p < V:
                radial.setdefault(int(p), []).append(k)
            if q < V:
                radial.setdefault(int(q), []).append(k)
        # fine triangles of each dual cell
        cell_tris = {}
        for t, tri in enumerate(fm.triangles):
            for p in tri:
                if p < V:
                    cell_tris.setdefault(int(p), []).append(t)
        # fine-edge index lookup
        lookup = {tuple(e): k for k, e in enumerate(fe)}
        tri_vertex = {}
        for t, tri in enumerate(fm.triangles):
            tri_vertex[t] = int(tri[tri < V][0])
        # local incidence of each cell: rows fine triangles, cols radial edges
        cells = {}
        for v, tris in cell_tris.items():
            edges = radial[v]
            col = {e: i for i, e in enumerate(edges)}
            B = np.zeros((len(tris), len(edges)))
            for r, t in enumerate(tris):
                for li in range(3):
                    e = fm.tri_edges[t, li]
                    if e in col:
                        B[r, col[e]] = fm.tri_signs[t, li]
            cells[v] = (np.array(tris), np.array(edges), np.linalg.pinv(B))
        rows, cols, vals = [], [], []
        Vn = V
        En = sm.n_edges
        for e, (v1, v2) in enumerate(sm.edges):
            v1, v2 = int(v1), int(v2)
            m = Vn + e
            flux = {}
            # dual edge: midpoint to the centroids of the two coarse triangles
            for ct in sm.edge_tris[e]:
                g = Vn + En + int(ct)
                k = lookup[(min(m, g), max(m, g))]
                plus = fm.edge_tris[k, 0]
                flux[k] = 0.5 if tri_vertex[int(plus)] == v1 else -0.5
            for v, total in ((v1, 1.0), (v2, -1.0)):
                tris, edges, Bp = cells[v]
                # outflow of each fine triangle through the known dual fluxes
                known = np.zeros(len(tris))
                for r, t in enumerate(tris):
                    for li in range(3):
                        k = fm.tri_edges[t, li]
                        if k in flux:
                            known[r] += fm.tri_signs[t, li] * flux[k]
                target = np.full(len(tris), total / len(tris)) - known
                rad = Bp @ target
                for k, f in zip(edges, rad):
                    flux[int(k)] = f
            for k, f in flux.items():
                rows.append(k)
                cols.append(e)
                vals.append(f / fm.edge_lengths[k])
        M = sp.csr_matrix((vals, (rows, cols)), shape=(fm.n_edges, En))
        M.eliminate_zeros()
        return M
