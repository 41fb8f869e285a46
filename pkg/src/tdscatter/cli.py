"""
Command-line driver: scenario configuration, runs and output files.

Subcommands::

    tdscatter solve-laplace --config run.ini [--s RE,IM] [--out DIR]
    tdscatter run-cq        --config run.ini [--out DIR]
    tdscatter verify        --suite NAME [--config run.ini] [--out DIR]
    tdscatter mesh-info     --config run.ini

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

The configuration is an INI file (one level of ``[section]`` tables of
``key = value`` pairs, ``#`` comments); see ``docs/config_format.md``.
numpy is imported only after ``--threads`` has been applied to the BLAS and
OpenMP environment variables.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

SUITES = ("energy-identities", "jumps", "calderon", "stability", "equivalence",
          "cq-scalar")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
               "NUMEXPR_NUM_THREADS")


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the field."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class MeshConfig:
    path: str = ""
    generator: str = "ball"
    level: int = 1
    radius: float = 1.0
    core_radius: float = 0.5
    coated: bool = False
    domain_tag: int = 1
    gamma_tag: int = 2
    coating_tag: int = 3


@dataclass
class IncidentConfig:
    type: str = "multipole"
    order: int = 1
    kind: str = "N"
    parity: str = "e"
    amplitude: float = 1.0
    direction: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    t0: float = 4.0
    omega: float = 1.0
    delay: float = 1.2
    smooth_order: int = 5


@dataclass
class CqConfig:
    method: str = "BDF2"
    N: int = 32
    T: float = 4.0
    oversample: int = 1
    snapshots: tuple = ()


@dataclass
class VerifyConfig:
    equivalence: bool = True
    draws: int = 200
    energy_level: int = 1
    jump_levels: tuple = (2, 3)
    calderon_levels: tuple = (0, 1, 2)
    stability_level: int = 1
    equivalence_levels: tuple = (2, 3)


@dataclass
class ScenarioConfig:
    """Fully validated scenario."""

    mesh: MeshConfig = field(default_factory=MeshConfig)
    materials: dict = field(default_factory=lambda: {"eps": 1.0, "mu": 1.0,
                                                     "eps0": 1.0, "mu0": 1.0})
    incident: IncidentConfig = field(default_factory=IncidentConfig)
    receivers: tuple = ((0.0, 0.0, 3.0),)
    s: complex = 1.0
    cq: CqConfig = field(default_factory=CqConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: str = "out"
    vtk: bool = False

    def as_dict(self):
        d = asdict(self)
        d["s"] = [self.s.real, self.s.imag]
        return d


def _bool(sec, key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError("[%s] %s: expected a boolean, got %r" % (sec, key, text))


def _number(sec, key, text, kind=float):
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError("[%s] %s: expected %s, got %r"
                          % (sec, key, "an integer" if kind is int else "a number", text)) from None


def _numbers(sec, key, text, kind=float, count=None):
    parts = [p for p in text.replace(",", " ").split() if p]
    vals = tuple(_number(sec, key, p, kind) for p in parts)
    if count is not None and len(vals) != count:
        raise ConfigError("[%s] %s: expected %d values, got %d" % (sec, key, count, len(vals)))
    return vals


def parse_complex(text, where="--s"):
    """``"RE,IM"`` or ``"RE"`` to a complex number."""
    parts = [p for p in text.replace(",", " ").split() if p]
    if not 1 <= len(parts) <= 2:
        raise ConfigError("%s: expected RE,IM, got %r" % (where, text))
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError("%s: expected RE,IM, got %r" % (where, text)) from None
    return complex(vals[0], vals[1] if len(vals) == 2 else 0.0)


_KEYS = {
    "mesh": {"path", "generator", "level", "radius", "core_radius", "coated",
             "domain_tag", "gamma_tag", "coating_tag"},
    "materials": {"eps", "mu", "eps0", "mu0"},
    "incident": {"type", "order", "kind", "parity", "amplitude", "direction",
                 "polarization", "t0", "omega", "delay", "smooth_order"},
    "receivers": {"points"},
    "laplace": {"s"},
    "cq": {"method", "n", "t", "oversample", "snapshots"},
    "verify": {"equivalence", "draws", "energy_level", "jump_levels", "calderon_levels",
               "stability_level", "equivalence_levels"},
    "output": {"dir", "vtk"},
}


def parse_config(text, base_dir=".") -> ScenarioConfig:
    """Parse and validate configuration text.

    Relative mesh paths are resolved against ``base_dir``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("malformed configuration: %s" % exc) from None
    for sec in cp.sections():
        if sec not in _KEYS:
            raise ConfigError("unknown section [%s]" % sec)
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                raise ConfigError("[%s] %s: unknown key" % (sec, key))
    get = lambda sec, key: cp[sec][key] if cp.has_option(sec, key) else None
    cfg = ScenarioConfig()

    m = cfg.mesh
    for key, kind in (("level", int), ("radius", float), ("core_radius", float),
                      ("domain_tag", int), ("gamma_tag", int), ("coating_tag", int)):
        if get("mesh", key) is not None:
            setattr(m, key, _number("mesh", key, get("mesh", key), kind))
    if get("mesh", "path") is not None:
        p = Path(get("mesh", "path").strip())
        m.path = str(p if p.is_absolute() else Path(base_dir) / p)
        m.generator = ""
    if get("mesh", "generator") is not None:
        if m.path:
            raise ConfigError("[mesh] generator: give either path or generator, not both")
        m.generator = get("mesh", "generator").strip()
    if m.generator and m.generator not in ("ball", "coated_ball"):
        raise ConfigError("[mesh] generator: expected ball or coated_ball, got %r" % m.generator)
    m.coated = m.generator == "coated_ball"
    if get("mesh", "coated") is not None:
        m.coated = _bool("mesh", "coated", get("mesh", "coated"))
    if m.generator == "ball" and m.coated:
        raise ConfigError("[mesh] coated: the ball generator has no conductor core")
    if not 0 <= m.level <= 4:
        raise ConfigError("[mesh] level: must lie in 0..4, got %d" % m.level)
    if not m.radius > 0:
        raise ConfigError("[mesh] radius: must be positive")
    if m.generator == "coated_ball" and not 0 < m.core_radius < m.radius:
        raise ConfigError("[mesh] core_radius: need 0 < core_radius < radius")

    for key in ("eps", "mu", "eps0", "mu0"):
        if get("materials", key) is not None:
            v = _number("materials", key, get("materials", key))
            if not v > 0:
                raise ConfigError("[materials] %s: must be positive, got %g" % (key, v))
            cfg.materials[key] = v

    inc = cfg.incident
    if get("incident", "type") is not None:
        inc.type = get("incident", "type").strip()
    if inc.type not in ("multipole", "plane_wave"):
        raise ConfigError("[incident] type: expected multipole or plane_wave, got %r" % inc.type)
    for key, kind in (("order", int), ("amplitude", float), ("t0", float), ("omega", float),
                      ("delay", float), ("smooth_order", int)):
        if get("incident", key) is not None:
            setattr(inc, key, _number("incident", key, get("incident", key), kind))
    for key in ("kind", "parity"):
        if get("incident", key) is not None:
            setattr(inc, key, get("incident", key).strip())
    for key in ("direction", "polarization"):
        if get("incident", key) is not None:
            setattr(inc, key, _numbers("incident", key, get("incident", key), count=3))
    if inc.order < 1:
        raise ConfigError("[incident] order: must be at least 1")
    if inc.kind not in ("M", "N"):
        raise ConfigError("[incident] kind: expected M or N, got %r" % inc.kind)
    if inc.parity not in ("e", "o"):
        raise ConfigError("[incident] parity: expected e or o, got %r" % inc.parity)
    nd = math.sqrt(sum(x * x for x in inc.direction))
    npol = math.sqrt(sum(x * x for x in inc.polarization))
    if nd == 0 or npol == 0:
        raise ConfigError("[incident] direction/polarization: must be nonzero")
    if abs(sum(a * b for a, b in zip(inc.direction, inc.polarization))) > 1e-12 * nd * npol:
        raise ConfigError("[incident] polarization: must be orthogonal to direction")
    if not (inc.t0 > 0 and inc.omega > 0):
        raise ConfigError("[incident] t0, omega: must be positive")

    if get("receivers", "points") is not None:
        pts = []
        for k, chunk in enumerate(get("receivers", "points").split(";")):
            if chunk.strip():
                pts.append(_numbers("receivers", "points[%d]" % k, chunk, count=3))
        cfg.receivers = tuple(pts)

    if get("laplace", "s") is not None:
        cfg.s = parse_complex(get("laplace", "s"), "[laplace] s")

    cq = cfg.cq
    if get("cq", "method") is not None:
        cq.method = get("cq", "method").strip()
    if cq.method not in ("BDF1", "BDF2", "trapezoidal"):
        raise ConfigError("[cq] method: expected BDF1, BDF2 or trapezoidal, got %r" % cq.method)
    if get("cq", "n") is not None:
        cq.N = _number("cq", "N", get("cq", "n"), int)
    if get("cq", "t") is not None:
        cq.T = _number("cq", "T", get("cq", "t"))
    if get("cq", "oversample") is not None:
        cq.oversample = _number("cq", "oversample", get("cq", "oversample"), int)
    if get("cq", "snapshots") is not None:
        cq.snapshots = _numbers("cq", "snapshots", get("cq", "snapshots"), int)
    if cq.N < 1:
        raise ConfigError("[cq] N: must be at least 1")
    if not cq.T > 0:
        raise ConfigError("[cq] T: must be positive")
    if cq.oversample < 1:
        raise ConfigError("[cq] oversample: must be at least 1")
    if any(not 0 <= k <= cq.N for k in cq.snapshots):
        raise ConfigError("[cq] snapshots: time indices must lie in 0..N")

    v = cfg.verify
    if get("verify", "equivalence") is not None:
        v.equivalence = _bool("verify", "equivalence", get("verify", "equivalence"))
    for key in ("draws", "energy_level", "stability_level"):
        if get("verify", key) is not None:
            setattr(v, key, _number("verify", key, get("verify", key), int))
    for key in ("jump_levels", "calderon_levels", "equivalence_levels"):
        if get("verify", key) is not None:
            setattr(v, key, _numbers("verify", key, get("verify", key), int))

    if get("output", "dir") is not None:
        cfg.output = get("output", "dir").strip()
    if get("output", "vtk") is not None:
        cfg.vtk = _bool("output", "vtk", get("output", "vtk"))
    return cfg


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("cannot read configuration %s: %s" % (path, exc)) from None
    return parse_config(text, base_dir=p.parent)


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------


def build_scenario(cfg: ScenarioConfig):
    """Meshes, spaces and materials: ``(vm, sm, spaces, mat)``."""
    from .geometry import ball_mesh, build_spaces, coated_ball_mesh, load_mesh
    from .potentials import MaterialParams

    m = cfg.mesh
    if m.path:
        labels = {"domain": m.domain_tag, "gamma": m.gamma_tag, "coating": m.coating_tag}
        vm, sm = load_mesh(m.path, labels, coated=m.coated)
    elif m.generator == "coated_ball":
        vm = coated_ball_mesh(m.level, m.radius, m.core_radius)
        sm = vm.surface()
    else:
        vm = ball_mesh(m.level, m.radius)
        sm = vm.surface()
    spaces = build_spaces(vm, sm, coated=m.coated)
    return vm, sm, spaces, MaterialParams(**cfg.materials)


def laplace_incident(cfg: ScenarioConfig, s, mat):
    """``points -> (E_inc, curl E_inc)`` at Laplace parameter ``s``."""
    import numpy as np

    from .reference import multipole_fields

    inc = cfg.incident
    kappa = complex(s) / mat.c0
    if inc.type == "multipole":
        def incident(pts):
            E, C = multipole_fields(inc.order, inc.kind, inc.parity, "i", kappa, pts)
            return inc.amplitude * E, inc.amplitude * C
        return incident
    d = np.asarray(inc.direction, float)
    p = np.asarray(inc.polarization, float)
    d, p = d / np.linalg.norm(d), p / np.linalg.norm(p)
    dxp = np.cross(d, p)

    def incident(pts):
        phase = inc.amplitude * np.exp(-kappa * (np.atleast_2d(pts) @ d))
        return phase[:, None] * p, (-kappa * phase)[:, None] * dxp
    return incident


def incident_pulse(cfg: ScenarioConfig, mat):
    from .cq import IncidentPulse, smooth_window

    inc = cfg.incident
    if inc.type != "plane_wave":
        raise ConfigError("[incident] type: time-domain runs need a plane_wave pulse")
    prof = smooth_window(inc.t0, inc.omega, inc.amplitude, inc.smooth_order)
    return IncidentPulse(inc.direction, inc.polarization, prof, mat.c0, inc.delay)


def check_receivers(cfg, sm):
    """Receivers must lie outside the obstacle and off the interface (the
    potentials are singular there)."""
    import numpy as np

    from .potentials import PotentialEvaluator
    from .geometry import DivConformingSpace

    pts = np.asarray(cfg.receivers, float).reshape(-1, 3)
    if len(pts):
        try:
            PotentialEvaluator(DivConformingSpace(sm)).check_points(pts)
        except ValueError as exc:
            raise ConfigError("[receivers] points: %s" % exc) from None
        inside = np.nonzero(np.abs(sm.winding_number(pts)) > 0.5)[0]
        if len(inside):
            raise ConfigError("[receivers] points[%d]: inside the obstacle; the scattered "
                              "field is only defined outside" % inside[0])
    return pts


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------


def _fmt(x):
    return "%.17g" % x


def vertex_field(vm, space, u):
    """Vertex averages of an edge-element field over the incident
    tetrahedra; shape (n_vertices, 3)."""
    import numpy as np

    u = np.asarray(u)
    acc = np.zeros((len(vm.vertices), 3), dtype=u.dtype)
    cnt = np.zeros(len(vm.vertices))
    eye = np.eye(4)
    idx = np.arange(vm.n_tets)
    for a in range(4):
        bary = np.broadcast_to(eye[a], (vm.n_tets, 4))
        val = space.evaluate(u, idx, bary)
        np.add.at(acc, vm.tets[:, a], val)
        np.add.at(cnt, vm.tets[:, a], 1.0)
    used = cnt > 0
    acc[used] /= cnt[used, None]
    return acc


def write_vtk(path, vm, fields, title="tdscatter field"):
    """Legacy ASCII unstructured grid with point-data vectors.

    ``fields`` maps names (``E_re``, ``E_im`` or ``E``) to (n_vertices, 3)
    real arrays.
    """
    v, t = vm.vertices, vm.tets
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             "POINTS %d double" % len(v)]
    lines += ["%s %s %s" % tuple(_fmt(c) for c in x) for x in v]
    lines.append("CELLS %d %d" % (len(t), 5 * len(t)))
    lines += ["4 %d %d %d %d" % tuple(c) for c in t]
    lines.append("CELL_TYPES %d" % len(t))
    lines += ["10"] * len(t)
    lines.append("POINT_DATA %d" % len(v))
    for name, arr in fields.items():
        lines.append("VECTORS %s double" % name)
        lines += ["%s %s %s" % tuple(_fmt(c) for c in x) for x in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_csv(path, header, rows):
    text = ",".join(header) + "\n"
    text += "".join(",".join(c if isinstance(c, str) else _fmt(c) for c in r) + "\n"
                    for r in rows)
    Path(path).write_text(text)


def _versions():
    import numpy
    import scipy

    from . import __version__
    return {"tdscatter": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def _write_manifest(out, command, cfg, extra):
    man = {"command": command, "config": cfg.as_dict(), "versions": _versions()}
    man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve_laplace(cfg: ScenarioConfig, out: Path, log=print):
    """Single Laplace-parameter solve; writes ``receivers.csv``,
    ``solution.npz``, ``equivalence.csv`` and ``manifest.json``."""
    import numpy as np

    from .coupled import ScatteringData, assemble_system, solve, verify_equivalence
    from .potentials import eval_scattered

    s = complex(cfg.s)
    if not s.real > 0:
        raise ConfigError("[laplace] s: real part must be positive, got %g" % s.real)
    timings = {}
    t0 = time.perf_counter()
    vm, sm, spaces, mat = build_scenario(cfg)
    pts = check_receivers(cfg, sm)
    data = ScatteringData(incident=laplace_incident(cfg, s, mat))
    system = assemble_system(s, vm, sm, spaces, mat, data)
    timings["assembly"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve(system)
    timings["solve"] = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    if len(pts):
        E, _ = eval_scattered(sol.j, sol.m, pts, s, mat, spaces[1])
    else:
        E = np.zeros((0, 3), complex)
    header = ("receiver", "x", "y", "z", "Ex_re", "Ex_im", "Ey_re", "Ey_im", "Ez_re", "Ez_im")
    rows = [(str(k), *x, *np.column_stack([e.real, e.imag]).ravel())
            for k, (x, e) in enumerate(zip(pts, E))]
    _write_csv(out / "receivers.csv", header, rows)
    np.savez(out / "solution.npz", s=np.array(s), E=sol.E, j=sol.j.coeffs, m=sol.m.coeffs,
             residual=np.array(sol.residual))
    defects = {}
    if cfg.verify.equivalence:
        t0 = time.perf_counter()
        defects = verify_equivalence(sol, vm, sm, spaces, mat, data).defects
        timings["equivalence"] = time.perf_counter() - t0
        _write_csv(out / "equivalence.csv", ("identity", "defect"),
                   [(k, v) for k, v in defects.items()])
    if cfg.vtk:
        u = vertex_field(vm, spaces[0], sol.E)
        write_vtk(out / "field.vtk", vm, {"E_re": u.real, "E_im": u.imag})
    _write_manifest(out, "solve-laplace", cfg, {
        "s": [s.real, s.imag], "residual": sol.residual, "sizes": list(system.sizes),
        "equivalence": defects, "timings": timings})
    log("solved s = %s: residual %.2e, %d receivers -> %s" % (s, sol.residual, len(pts), out))
    return sol


def cmd_run_cq(cfg: ScenarioConfig, out: Path, log=print):
    """Time-domain run by convolution quadrature; writes ``traces.csv``,
    ``manifest.json`` and optional ``snapshot_XXXX.vtk`` files."""
    import numpy as np

    from .coupled import assemble_system, solve
    from .cq import CqScheme, audit_smoothness, cq_run
    from .interior_fem import assemble_interior

    c = cfg.cq
    vm, sm, spaces, mat = build_scenario(cfg)
    pulse = incident_pulse(cfg, mat)
    try:
        audit_smoothness(pulse.profile, required=4)
    except ValueError as exc:
        raise ConfigError("[incident] smooth_order: %s" % exc) from None
    pts = check_receivers(cfg, sm)
    n_nodes = None if c.oversample == 1 else c.oversample * (c.N + 1)
    scheme = CqScheme(c.method, c.T / c.N, c.N, n_nodes=n_nodes)
    interior = assemble_interior(vm, spaces[0], mat)

    def solver(s, data):
        return solve(assemble_system(s, vm, sm, spaces, mat, data, interior=interior))

    t0 = time.perf_counter()
    res = cq_run(scheme, pulse, solver, pts, spaces, mat,
                 progress=lambda l, s: log("  frequency %d: s = %.4g%+.4gj" % (l, s.real, s.imag)))
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    rows = [(t, str(r), *res.receivers[n, r]) for n, t in enumerate(res.times)
            for r in range(len(pts))]
    _write_csv(out / "traces.csv", ("time", "receiver", "Ex", "Ey", "Ez"), rows)
    snaps = []
    for k in c.snapshots:
        name = "snapshot_%04d.vtk" % k
        write_vtk(out / name, vm, {"E": vertex_field(vm, spaces[0], res.E[k])},
                  title="tdscatter t = %s" % _fmt(res.times[k]))
        snaps.append(name)
    freqs = [[z.real, z.imag] for z in res.frequencies]
    _write_manifest(out, "run-cq", cfg, {
        "dt": scheme.dt, "contour_radius": scheme.lam, "n_nodes": scheme.n_nodes,
        "n_frequencies": len(freqs), "frequencies": freqs, "snapshots": snaps,
        "arrival_times": list(pulse.arrival_time(sm.vertices, pts)) if len(pts) else [],
        "timings": {"total": wall, **res.timings}})
    log("CQ run: %d steps, %d frequency solves -> %s" % (c.N, len(freqs), out))
    return res


def cmd_mesh_info(cfg: ScenarioConfig, log=print):
    vm, sm, spaces, mat = build_scenario(cfg)
    info = {
        "vertices": len(vm.vertices), "tetrahedra": vm.n_tets, "edges": vm.n_edges,
        "surface_triangles": sm.n_triangles, "surface_edges": sm.n_edges,
        "euler_characteristic": sm.euler_characteristic(),
        "mesh_size": sm.mesh_size(), "enclosed_volume": sm.signed_volume(),
        "free_interior_dofs": spaces[0].n_free, "coated": spaces[0].coated,
    }
    for k, v in info.items():
        log("%s: %s" % (k, v))
    return info


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    relation: str

    @property
    def passed(self):
        ops = {"<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b, ">": lambda a, b: a > b,
               "<": lambda a, b: a < b}
        return bool(ops[self.relation](self.value, self.threshold))

    def line(self):
        return "%s %.6e %s%g %s" % (self.name, self.value, self.relation, self.threshold,
                                    "PASS" if self.passed else "FAIL")


def _smooth_tangent_fields():
    import numpy as np

    def jf(x):
        n = x / np.linalg.norm(x, axis=1)[:, None]
        a = np.array([1.0, 0.3, -0.2]) + 0.5 * x[:, [1, 2, 0]]
        return a - np.sum(a * n, 1)[:, None] * n

    def mf(x):
        n = x / np.linalg.norm(x, axis=1)[:, None]
        a = np.array([0.2, 1.0, 0.5]) * np.cos(x[:, [2, 0, 1]])
        return a - np.sum(a * n, 1)[:, None] * n

    return jf, mf


def suite_energy_identities(cfg):
    from .geometry import ball_mesh, build_spaces
    from .interior_fem import assemble_interior, energy_identity_defects
    from .potentials import MaterialParams

    vm = ball_mesh(cfg.verify.energy_level)
    fem, _, _ = build_spaces(vm, vm.surface())
    im = assemble_interior(vm, fem, MaterialParams())
    ident, cont = energy_identity_defects(im, cfg.verify.draws, rng=0)
    return [Check("coercivity_identity", ident, 1e-12, "<="),
            Check("continuity_ratio", cont, 1.0, "<=")]


def suite_jumps(cfg):
    from .geometry import (CurlConformingSurfaceSpace, Density, DivConformingSpace,
                           icosphere)
    from .potentials import verify_jump

    jf, mf = _smooth_tangent_fields()
    reports = []
    for lev in cfg.verify.jump_levels:
        sm = icosphere(lev)
        d = DivConformingSpace(sm)
        c = CurlConformingSurfaceSpace(d)
        j, m = Density(d.interpolate(jf), "div"), Density(c.interpolate(mf), "curl")
        reports.append(verify_jump(j, m, 1 + 1j, sm, d).defects)
    checks = []
    for key in reports[0]:
        for a, b, (la, lb) in zip(reports, reports[1:], zip(cfg.verify.jump_levels,
                                                             cfg.verify.jump_levels[1:])):
            checks.append(Check("jump_%s_ratio_L%d_L%d" % (key, la, lb), a[key] / b[key], 1.3, ">"))
    for key in ("D", "Dt", "curlE"):
        checks.append(Check("jump_%s_defect_L%d" % (key, cfg.verify.jump_levels[-1]),
                            reports[-1][key], 0.1, "<="))
    return checks


def suite_calderon(cfg):
    from .geometry import DivConformingSpace, icosphere
    from .potentials import calderon

    checks = []
    levels = cfg.verify.calderon_levels
    for st in (1.0, 2 + 2j):
        vals = [calderon(icosphere(l), DivConformingSpace(icosphere(l)), st).idempotency_defect()
                for l in levels]
        tag = "s%g%+gj" % (complex(st).real, complex(st).imag)
        for l, v in zip(levels, vals):
            checks.append(Check("calderon_%s_defect_L%d" % (tag, l), v, 1.0, "<"))
        for (la, a), (lb, b) in zip(zip(levels, vals), zip(levels[1:], vals[1:])):
            checks.append(Check("calderon_%s_ratio_L%d_L%d" % (tag, la, lb), a / b, 1.0, ">"))
    return checks


def _sphere_data(s, mat, kind="N", parity="e", order=1):
    from .coupled import ScatteringData
    from .reference import multipole_fields

    kappa = complex(s) / mat.c0
    return ScatteringData(incident=lambda p: multipole_fields(order, kind, parity, "i", kappa, p))


def suite_stability(cfg):
    import numpy as np

    from .coupled import stability_sweep
    from .geometry import ball_mesh, build_spaces
    from .potentials import MaterialParams

    vm = ball_mesh(cfg.verify.stability_level)
    sm = vm.surface()
    spaces = build_spaces(vm, sm)
    mat = MaterialParams(eps=2.0)
    grids = {"sigma1": [complex(1.0, math.sqrt(r * r - 1.0)) for r in (1, 2, 4, 8, 16)],
             "abs5": [complex(sg, math.sqrt(25.0 - sg * sg)) for sg in (0.1, 0.5, 1.0, 2.0)]}
    checks = []
    for name, grid in grids.items():
        rows = stability_sweep(grid, vm, sm, spaces, mat, lambda s: _sphere_data(s, mat))
        for col in ("ratio_cubic", "ratio_quadratic"):
            r = np.array([getattr(row, col) for row in rows])
            checks.append(Check("stability_%s_%s_max_over_median" % (name, col),
                                r.max() / np.median(r), 10.0, "<="))
    return checks


def suite_equivalence(cfg):
    from .coupled import assemble_system, solve, verify_equivalence
    from .geometry import ball_mesh, build_spaces
    from .potentials import MaterialParams

    mat = MaterialParams(eps=2.0)
    reps = []
    for lev in cfg.verify.equivalence_levels:
        vm = ball_mesh(lev)
        sm = vm.surface()
        spaces = build_spaces(vm, sm)
        data = _sphere_data(1.0, mat)
        sol = solve(assemble_system(1.0, vm, sm, spaces, mat, data))
        reps.append(verify_equivalence(sol, vm, sm, spaces, mat, data).defects)
    levels = cfg.verify.equivalence_levels
    checks = []
    for key in reps[0]:
        for (la, a), (lb, b) in zip(zip(levels, reps), zip(levels[1:], reps[1:])):
            checks.append(Check("equivalence_%s_ratio_L%d_L%d" % (key, la, lb),
                                a[key] / b[key], 1.3, ">"))
    return checks


def suite_cq_scalar(cfg):
    import numpy as np
    from scipy.integrate import quad

    from .cq import CqScheme, cq_apply, smooth_window

    pulse = smooth_window(0.8, 3.0)
    T = 4.0
    N = 40
    sc = CqScheme("BDF1", T / N, N, n_nodes=4 * (N + 1))
    d = pulse(sc.times)
    u = cq_apply(sc, d, lambda s, x: x / s)
    checks = [Check("bdf1_vs_rectangle_sum", np.abs(u - sc.dt * np.cumsum(d)).max(), 1e-10, "<=")]
    errs = []
    for N in (40, 80, 160):
        sc = CqScheme("BDF2", T / N, N)
        u = cq_apply(sc, pulse(sc.times), lambda s, x: x / s)
        exact = np.array([quad(pulse, 0.0, t, limit=200, epsabs=1e-13, epsrel=1e-13)[0]
                          for t in sc.times])
        errs.append(np.abs(u - exact).max())
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    checks.append(Check("bdf2_order_lower", min(orders), 1.7, ">="))
    checks.append(Check("bdf2_order_upper", max(orders), 2.3, "<="))
    return checks


SUITE_FUNCS = {
    "energy-identities": suite_energy_identities,
    "jumps": suite_jumps,
    "calderon": suite_calderon,
    "stability": suite_stability,
    "equivalence": suite_equivalence,
    "cq-scalar": suite_cq_scalar,
}


def cmd_verify(suite: str, cfg: ScenarioConfig, out: Path, log=print):
    """Run one verification suite; writes ``verify_<suite>.csv`` with one
    line per check and returns the checks."""
    if suite not in SUITE_FUNCS:
        raise ConfigError("--suite: unknown suite %r (choose from %s)" % (suite, ", ".join(SUITES)))
    checks = SUITE_FUNCS[suite](cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / ("verify_%s.csv" % suite), ("name", "value", "threshold", "verdict"),
               [(c.name, c.value, c.relation + "%g" % c.threshold,
                 "PASS" if c.passed else "FAIL") for c in checks])
    for c in checks:
        log(c.line())
    return checks


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, "%s: error: %s\n" % (self.prog, message))


def build_parser():
    p = _Parser(prog="tdscatter", description="Transient FEM-BEM electromagnetic scattering.")
    p.add_argument("--threads", type=int, default=None,
                   help="thread count for BLAS/OpenMP kernels")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, needs_cfg in (("solve-laplace", True), ("run-cq", True), ("verify", False),
                            ("mesh-info", True)):
        q = sub.add_parser(name)
        q.add_argument("--config", required=needs_cfg, help="scenario configuration file")
        q.add_argument("--out", default=None, help="output directory")
        q.add_argument("--threads", type=int, default=None, dest="sub_threads",
                       help="thread count for BLAS/OpenMP kernels")
        if name == "solve-laplace":
            q.add_argument("--s", default=None, help="Laplace parameter RE,IM")
        if name == "verify":
            q.add_argument("--suite", required=True, choices=SUITES)
    return p


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads: must be at least 1")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.sub_threads if args.sub_threads is not None else args.threads)
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        if getattr(args, "s", None) is not None:
            cfg.s = parse_complex(args.s)
        out = Path(args.out if args.out is not None else cfg.output)
        if args.command == "solve-laplace":
            cmd_solve_laplace(cfg, out)
        elif args.command == "run-cq":
            cmd_run_cq(cfg, out)
        elif args.command == "verify":
            cmd_verify(args.suite, cfg, out)
        else:
            cmd_mesh_info(cfg)
    except Exception as exc:
        np = sys.modules.get("numpy")
        numeric = isinstance(exc, (RuntimeError, ArithmeticError)) or (
            np is not None and isinstance(exc, np.linalg.LinAlgError))
        if numeric:
            print("tdscatter: numerical failure: %s" % exc, file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, ValueError):
            # ConfigError, MeshError and other input validation
            print("tdscatter: error: %s" % exc, file=sys.stderr)
            return EXIT_INPUT
        raise
    return EXIT_OK
