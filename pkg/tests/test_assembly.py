import numpy as np
import pytest
import scipy.sparse.linalg as spla
from dataclasses import replace

from porobench.assembly import assemble_system, equilibrium_displacement
from porobench.parallel import set_num_threads
from porobench.scenario import builtin_problem_a, builtin_terzaghi
from porobench.strategies import setup_simulation


@pytest.fixture(scope="module")
def small():
    s = builtin_problem_a(6)
    return s, setup_simulation(s)


def test_block_sizes(small):
    s, (mesh, disc, state) = small
    sys_ = assemble_system(disc, state.h, state.u, s.dt)
    assert sys_.A_F.shape == (mesh.n_cells, mesh.n_cells)
    assert sys_.A_M.shape == (3 * mesh.n_nodes, 3 * mesh.n_nodes)
    assert sys_.A.shape == (sys_.n, sys_.n)


def test_assembly_order_does_not_matter(small):
    s, (mesh, disc, state) = small
    a = assemble_system(disc, state.h, state.u, s.dt)
    b = assemble_system(disc, state.h, state.u, s.dt, mechanics_first=True)
    assert abs(a.A - b.A).max() == 0.0
    assert np.array_equal(a.b, b.b)


def test_constrained_dofs_decoupled(small):
    s, (mesh, disc, state) = small
    sys_ = assemble_system(disc, state.h, state.u, s.dt)
    d = disc.fixed_dofs
    assert len(d) > 0
    assert abs(sys_.A_FM[:, d]).max() == 0.0
    assert abs(sys_.A_MF[d, :]).max() == 0.0
    A_M = sys_.A_M.tolil()
    assert all(len(A_M.rows[i]) == 1 for i in d[:50])


def test_duality_after_constraints(small):
    s, (mesh, disc, state) = small
    sys_ = assemble_system(disc, state.h, state.u, s.dt)
    gap = abs(sys_.A_FM + sys_.A_MF.T / (s.dt * disc.rho_g)).max()
    assert gap <= 1e-12 * abs(sys_.A_FM).max()


@pytest.mark.parametrize("threads", [2, 3])
def test_stiffness_thread_invariant(small, threads):
    _, (_, disc, _) = small
    ref = disc.stiffness()
    set_num_threads(threads)
    try:
        other = disc.stiffness()
    finally:
        set_num_threads(1)
    assert np.array_equal(ref.indptr, other.indptr) and np.array_equal(ref.data, other.data)


def test_initial_state_is_in_equilibrium(small):
    s, (mesh, disc, state) = small
    sys_ = assemble_system(disc, state.h, state.u, s.dt)
    _, rM = sys_.residuals(state.h, state.u)
    assert np.linalg.norm(rM) <= 1e-8 * np.linalg.norm(sys_.b_M)


def test_zero_initial_flow_residual_away_from_injection(small):
    s, (mesh, disc, state) = small
    sys_ = assemble_system(disc, state.h, state.u, s.dt)
    rF, _ = sys_.residuals(state.h, state.u)
    injected = np.zeros(mesh.n_cells, bool)
    kind, _ = disc.flow_bc
    from porobench.physics import HEAD
    xm = mesh.boundary_faces[(mesh.face_tags[mesh.boundary_faces] == 0)]
    injected[mesh.face_cells[xm[kind[xm] == HEAD], 0]] = True
    # an interaction region touches neighbours of the injection cells too
    near = injected | (mesh.cell_adjacency @ injected.astype(float) > 0)
    near = near | (mesh.cell_adjacency @ near.astype(float) > 0)
    scale = np.abs(rF).max()
    assert scale > 0
    assert np.abs(rF[~near]).max() <= 1e-9 * scale


def test_terzaghi_equilibrium_uniform_compaction():
    s = builtin_terzaghi(20)
    mesh, disc, state = setup_simulation(s)
    u = equilibrium_displacement(disc, state.h, with_traction=True)
    # M eps_zz - P = -1 with P = 1 - z and M = 1, so u_z = -z^2 / 2
    assert u[:, 2] == pytest.approx(-mesh.nodes[:, 2] ** 2 / 2, abs=1e-10)
    assert np.abs(u[:, :2]).max() <= 1e-12
