import csv

import numpy as np
import pytest

from tdscatter.coupled import (SWEEP_COLUMNS, ScatteringData, SolveError, assemble_system,
                               data_norm, residual, solve, solve_coated, stability_sweep,
                               verify_equivalence)
from tdscatter.geometry import (TAG_COATING, VolumeMesh, ball_mesh, build_spaces,
                                coated_ball_mesh, trace_coupling_matrix)
from tdscatter.potentials import MaterialParams, eval_scattered
from tdscatter.reference import SphereScenario, multipole_fields, sphere_scattered_field


def multipole_data(s, mat=MaterialParams(), kind="N", parity="e"):
    kappa = complex(s) / mat.c0
    return ScatteringData(incident=lambda p: multipole_fields(1, kind, parity, "i", kappa, p))


@pytest.fixture(scope="module")
def coarse():
    vm = ball_mesh(1)
    sm = vm.surface()
    return vm, sm, build_spaces(vm, sm)


def test_zero_data_gives_zero_solution(coarse):
    vm, sm, spaces = coarse
    sol = solve(assemble_system(1.0 + 1j, vm, sm, spaces, MaterialParams(eps=2.0),
                                ScatteringData()))
    assert not np.any(sol.E) and not np.any(sol.j.coeffs) and not np.any(sol.m.coeffs)


def test_block_structure(coarse):
    vm, sm, spaces = coarse
    s = 0.8 + 2j
    mat = MaterialParams(eps=3.0, mu=1.5, eps0=2.0, mu0=0.5)
    system = assemble_system(s, vm, sm, spaces, mat, multipole_data(s, mat))
    T = trace_coupling_matrix(spaces[0], spaces[2]).toarray()
    b = system.blocks
    assert np.allclose(b[0][1].toarray(), s * 1.5 * T.T)
    assert np.allclose(b[1][0].toarray(), T)
    st = s / mat.c0
    assert system.bio.st == pytest.approx(st)
    assert np.allclose(b[1][1], system.bio.V / (s * 2.0))
    assert np.allclose(b[2][2], -system.bio.V / (s * 0.5))
    assert np.allclose(b[1][2], -0.5 * system.bio.Q + system.bio.K)
    assert np.allclose(b[2][1], 0.5 * system.bio.Q + system.bio.K)
    assert b[0][2] is None and b[2][0] is None


def test_schur_matches_dense(coarse):
    vm, sm, spaces = coarse
    s = 1.5 + 0.5j
    mat = MaterialParams(eps=2.0)
    system = assemble_system(s, vm, sm, spaces, mat, multipole_data(s, mat))
    a = solve(system, method="schur")
    b = solve(system, method="dense")
    x = np.concatenate([a.E, a.j.coeffs, a.m.coeffs])
    y = np.concatenate([b.E, b.j.coeffs, b.m.coeffs])
    assert np.linalg.norm(x - y) < 1e-10 * np.linalg.norm(y)
    with pytest.raises(ValueError):
        solve(system, method="gmres")


def test_manufactured_round_trip(coarse):
    vm, sm, spaces = coarse
    s = 2.0 - 1j
    system = assemble_system(s, vm, sm, spaces, MaterialParams(eps=2.0), ScatteringData())
    rng = np.random.default_rng(7)
    nE, nj, nm = system.sizes
    x = [rng.standard_normal(n) + 1j * rng.standard_normal(n) for n in (nE, nj, nm)]
    system.rhs = system.matvec(*x)
    sol = solve(system)
    got = np.concatenate([sol.E, sol.j.coeffs, sol.m.coeffs])
    want = np.concatenate(x)
    assert np.linalg.norm(got - want) < 1e-8 * np.linalg.norm(want)
    assert residual(system, sol.E, sol.j.coeffs, sol.m.coeffs) < 1e-10


def test_real_parameter_gives_real_solution(coarse):
    vm, sm, spaces = coarse
    mat = MaterialParams(eps=2.0)
    sol = solve(assemble_system(1.7, vm, sm, spaces, mat, multipole_data(1.7, mat)))
    for v in (sol.E, sol.j.coeffs, sol.m.coeffs):
        assert np.abs(v.imag).max() <= 1e-12 * np.abs(v).max()


def test_residual_tolerance_is_enforced(coarse):
    vm, sm, spaces = coarse
    system = assemble_system(1.0, vm, sm, spaces, MaterialParams(eps=2.0), multipole_data(1.0))
    with pytest.raises(SolveError):
        solve(system, tol=0.0)


def test_rejects_variable_permeability():
    base = ball_mesh(0)
    tags = np.where(np.arange(base.n_tets) % 2 == 0, 1, 5)
    tris = base.boundary[2][0]
    vm = VolumeMesh(base.vertices, base.tets, {2: tris}, tet_tags=tags)
    sm = vm.surface()
    spaces = build_spaces(vm, sm)
    with pytest.raises(ValueError, match="permeability"):
        assemble_system(1.0, vm, sm, spaces, MaterialParams(mu={1: 1.0, 5: 2.0}),
                        ScatteringData())
    # piecewise permittivity with a common permeability is accepted
    mat = MaterialParams(eps={1: 2.0, 5: 4.0}, mu={1: 1.5, 5: 1.5})
    solve(assemble_system(1.0, vm, sm, spaces, mat, multipole_data(1.0, mat)))


def test_mie_convergence_real_parameter():
    """Receiver fields approach the series solution of the dielectric
    sphere under refinement."""
    mat = MaterialParams(eps=2.0)
    s = 1.0
    rec = np.array([[0, 0, 3.0], [3.0, 0, 0], [0, 3.0, 0]])
    ref, _ = sphere_scattered_field(SphereScenario(mat=mat, s=s), rec)
    errs = []
    for level in (1, 2):
        vm = ball_mesh(level)
        sm = vm.surface()
        spaces = build_spaces(vm, sm)
        sol = solve(assemble_system(s, vm, sm, spaces, mat, multipole_data(s, mat)))
        E, _ = eval_scattered(sol.j, sol.m, rec, s, mat, spaces[1])
        errs.append(np.linalg.norm(E - ref) / np.linalg.norm(ref))
    assert errs[1] < 0.05
    assert errs[0] / errs[1] > 3


def test_equivalence_defects_small(coarse):
    vm, sm, spaces = coarse
    mat = MaterialParams(eps=2.0)
    data = multipole_data(1.0, mat)
    sol = solve(assemble_system(1.0, vm, sm, spaces, mat, data))
    rep = verify_equivalence(sol, vm, sm, spaces, mat, data)
    assert set(rep.defects) == {"i", "ii", "iii", "iv"}
    assert max(rep.defects.values()) < 0.2


def test_coated_solution_has_zero_conductor_trace():
    vm = coated_ball_mesh(1, core_radius=0.5)
    sm = vm.surface()
    spaces = build_spaces(vm, sm, coated=True)
    mat = MaterialParams(eps=2.0)
    sol = solve_coated(1.0, vm, sm, spaces, mat, multipole_data(1.0, mat))
    fem = spaces[0]
    assert not np.any(sol.E[fem.constrained])
    inner = vm.surface(TAG_COATING)
    x = inner.centroids[:, None, :]
    wt = fem.face_trace_values(inner, x)[:, 0]
    loc = sol.E[vm.tet_edges[inner.face_map[:, 0]]]
    # off-face basis functions have zero tangential trace up to roundoff
    assert np.abs(np.einsum("te,tek->tk", loc, wt)).max() < 1e-14 * np.abs(sol.E).max()
    with pytest.raises(ValueError):
        solve_coated(1.0, vm, sm, build_spaces(vm, sm), mat, multipole_data(1.0, mat))


def test_data_norm_scaling(coarse):
    _, sm, _ = coarse
    d = multipole_data(1.0 + 1j)
    assert data_norm(d.scaled(2.5), sm) == pytest.approx(2.5 * data_norm(d, sm), rel=1e-13)
    assert data_norm(ScatteringData(), sm) == 0.0


def test_stability_sweep_csv(tmp_path):
    vm = ball_mesh(0)
    sm = vm.surface()
    mat = MaterialParams(eps=2.0)
    path = tmp_path / "sweep.csv"
    rows = stability_sweep([1.0, 1.0 + 2j], vm, sm, build_spaces(vm, sm), mat,
                           lambda s: multipole_data(s, mat), csv_path=path)
    with open(path) as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == SWEEP_COLUMNS
    assert len(table) == 3
    for row in rows:
        assert row.ratio_cubic == pytest.approx(
            (row.norm_E + row.norm_j + row.norm_m) / row.bound_cubic)
        assert row.bound_cubic == pytest.approx(abs(row.s) ** 3)
