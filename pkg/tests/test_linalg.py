import numpy as np
import pytest
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from porobench.linalg import (BlockSystem, ScaledSolver, SolverConfig, ThreadedOperator, ZeroPivotError,
                              bicgstab, block_residuals, build_preconditioner, export_matrix_market,
                              ilut_factor, read_matrix_market)
from porobench.parallel import set_num_threads


def banded(n=50):
    return sps.diags([-np.ones(n - 3), -np.ones(n - 1), 6 * np.ones(n), -np.ones(n - 1), -np.ones(n - 3)],
                     [-3, -1, 0, 1, 3], format="csr")


def poisson1d(n=100):
    return sps.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def random_nonsingular(n, seed):
    R = sps.random(n, n, density=5.0 / n, random_state=seed, format="csr")
    return (R + 5 * sps.identity(n)).tocsr()


def test_config_validation():
    SolverConfig(fill=None)
    for bad in ({"rel_tol": 0}, {"rel_tol": 1.0}, {"abs_tol": -1}, {"max_iters": 0}, {"drop_tol": -1}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    c = SolverConfig()
    assert (c.rel_tol, c.abs_tol, c.max_iters) == (1e-9, 1e-12, 5000)


@pytest.mark.parametrize("threads", [1, 3])
def test_spmv_matches_dense(threads):
    rng = np.random.default_rng(1)
    set_num_threads(threads)
    try:
        for seed in range(5):
            A = sps.random(20, 20, density=0.3, random_state=seed, format="csr")
            x = rng.normal(size=20)
            assert np.abs(ThreadedOperator(A) @ x - A.toarray() @ x).max() <= 1e-13
    finally:
        set_num_threads(1)


def test_identity_factor():
    P = ilut_factor(sps.identity(4, format="csr"), 0.1)
    assert P.solve(np.arange(4.0)) == pytest.approx(np.arange(4.0), abs=0)
    assert abs(P.L - sps.identity(4)).max() == 0 and abs(P.U - sps.identity(4)).max() == 0


def test_exact_factor_banded():
    A = banded()
    P = ilut_factor(A, 0.0, None)
    Ap = A[P.perm][:, P.perm]
    assert abs(P.L @ P.U - Ap).max() <= 1e-13
    x, st = bicgstab(A, np.random.default_rng(0).random(50), precond=P)
    assert st.converged and st.iterations <= 2


@pytest.mark.parametrize("n", [10, 100, 500])
def test_exact_factor_nonsymmetric(n):
    A = random_nonsingular(n, n)
    b = np.random.default_rng(n).normal(size=n)
    x, st = bicgstab(A, b, precond=ilut_factor(A, 0.0, None))
    assert st.converged and st.iterations <= 2
    assert np.linalg.norm(A @ x - b) <= max(1e-9 * np.linalg.norm(b), 1e-12)


def test_poisson_unpreconditioned():
    A, b = poisson1d(), np.ones(100)
    x, st = bicgstab(A, b)
    assert st.converged and st.residual <= 1e-9 * np.linalg.norm(b)
    assert np.abs(x - spla.spsolve(A.tocsc(), b)).max() <= 1e-7 * np.abs(x).max()


def test_trivial_solves():
    x, st = bicgstab(sps.identity(5, format="csr"), np.arange(5.0))
    assert st.iterations == 1 and x == pytest.approx(np.arange(5.0))
    x, st = bicgstab(poisson1d(), np.zeros(100))
    assert st.iterations == 0 and st.converged and not x.any()


def test_max_iters_reported():
    x, st = bicgstab(poisson1d(400), np.ones(400), config=SolverConfig(max_iters=3))
    assert not st.converged and st.iterations == 3 and np.all(np.isfinite(x))


def test_breakdown_returns_iterate():
    # rotation: the shadow residual becomes orthogonal immediately
    A = sps.csr_matrix(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    x, st = bicgstab(A, np.array([1.0, 0.0]), config=SolverConfig(max_iters=20))
    assert np.all(np.isfinite(x))
    assert st.converged or st.breakdown


def test_zero_pivot_names_row():
    A = sps.csr_matrix(np.array([[1.0, 0, 0], [0, 0.0, 1.0], [0, 1.0, 1.0]]))
    with pytest.raises(ZeroPivotError) as err:
        ilut_factor(A, 0.1, reorder=False)
    assert err.value.row == 1 and "row 1" in str(err.value)


def test_retry_with_smaller_tolerance():
    # dropping the small multiplier at tau=0.1 leaves a zero second pivot
    A = sps.csr_matrix(np.array([[1.0, 1.0, 0.0], [1e-2, 0.0, 1.0], [0.0, 1.0, 1.0]]))
    with pytest.raises(ZeroPivotError):
        ilut_factor(A, 0.1, reorder=False)
    P = build_preconditioner(A, SolverConfig(drop_tol=0.1, reorder=False))
    assert P.tau < 0.1


def test_ilut_fill_grows_as_tolerance_drops():
    A = random_nonsingular(300, 7)
    nnz = [ilut_factor(A, tau, None).nnz for tau in (0.1, 1e-2, 1e-5, 0.0)]
    assert nnz == sorted(nnz)


def test_fill_cap_limits_rows():
    A = random_nonsingular(300, 3)
    loose, capped = ilut_factor(A, 0.0, None), ilut_factor(A, 0.0, 2)
    assert capped.nnz < loose.nnz
    row_counts = np.diff(capped.L.indptr) + np.diff(capped.U.indptr)
    orig = np.diff(A[capped.perm][:, capped.perm].indptr)
    assert np.all(row_counts <= orig + 2 * 2 + 2)


def test_rcm_fill_on_banded():
    A = banded(200)
    rng = np.random.default_rng(0)
    q = rng.permutation(200)
    scrambled = A[q][:, q]
    for M in (A, scrambled):
        with_rcm, without = ilut_factor(M, 0.0, None, True), ilut_factor(M, 0.0, None, False)
        assert with_rcm.nnz <= without.nnz
        b = np.ones(200)
        for P in (with_rcm, without):
            assert bicgstab(M, b, precond=P)[1].converged


def test_deterministic_iterations():
    A = random_nonsingular(400, 11)
    b = np.ones(400)
    runs = [bicgstab(A, b, precond=ilut_factor(A, 0.1, 5))[1].iterations for _ in range(2)]
    assert runs[0] == runs[1]


def random_block_system(seed=0, nf=5, nm=6):
    rng = np.random.default_rng(seed)
    blocks = [sps.csr_matrix(rng.normal(size=s)) for s in ((nf, nf), (nf, nm), (nm, nf), (nm, nm))]
    return BlockSystem(*blocks, rng.normal(size=nf), rng.normal(size=nm))


def test_block_system_recomposes():
    s = random_block_system()
    A = s.A.toarray()
    assert np.array_equal(A[:5, :5], s.A_F.toarray()) and np.array_equal(A[5:, 5:], s.A_M.toarray())
    assert np.array_equal(A[:5, 5:], s.A_FM.toarray()) and np.array_equal(A[5:, :5], s.A_MF.toarray())
    t = BlockSystem.from_matrix(s.A, s.b, 5)
    assert abs(t.A_MF - s.A_MF).max() == 0 and (s.flow, s.mech) == (slice(0, 5), slice(5, 11))


def test_block_residuals():
    s = random_block_system(3)
    assert block_residuals(s, np.zeros(5), np.zeros(6)) == pytest.approx(
        (np.linalg.norm(s.b_F), np.linalg.norm(s.b_M)))
    x = np.linalg.solve(s.A.toarray(), s.b)
    rF, rM = block_residuals(s, x[:5], x[5:])
    assert max(rF, rM) <= 1e-12 * np.linalg.norm(s.b)


def test_scaled_solver_correction_form():
    A = random_nonsingular(200, 2)
    b = np.random.default_rng(2).normal(size=200)
    S = ScaledSolver(A, SolverConfig(drop_tol=1e-2), row_scale=np.linspace(1, 1e4, 200))
    x, st = S.solve(b)
    assert st.converged
    x2, st2 = S.solve(b, x)
    assert st2.converged and np.linalg.norm(x2 - x) <= 1e-8 * np.linalg.norm(x)
    assert np.linalg.norm(A @ x2 - b) <= 1e-6 * np.linalg.norm(b)


def test_matrix_market_roundtrip(tmp_path):
    A = random_nonsingular(30, 4)
    path = tmp_path / "a.mtx"
    export_matrix_market(path, A, comment="test")
    assert path.read_text().splitlines()[0] == "%%MatrixMarket matrix coordinate real general"
    assert abs(read_matrix_market(path) - A).max() == 0


def test_problem_a_factor_sparser_than_full_lu(problem_a, problem_a_setup):
    from porobench.assembly import assemble_system
    from porobench.strategies import monolithic_row_scale

    _, disc, state = problem_a_setup
    system = assemble_system(disc, state.h, state.u, problem_a.dt)
    solver = ScaledSolver(system.A, SolverConfig(drop_tol=0.1), monolithic_row_scale(system, problem_a.dt, 9810.0))
    p = solver.M.perm
    full = spla.splu(solver.As[p][:, p].tocsc(), permc_spec="NATURAL")
    assert solver.M.nnz < full.L.nnz + full.U.nnz - system.n
