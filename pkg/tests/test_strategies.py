from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from oracles import terzaghi_pressure
from porobench.assembly import assemble_system
from porobench.linalg import BlockSystem, SolverConfig
from porobench.scenario import builtin_problem_a, builtin_split_stress, builtin_terzaghi
from porobench.strategies import (SimState, SplitConfig, run_simulation, setup_simulation,
                                  split_converged, step_fixed_strain, step_monolithic)


def rel(a, b):
    diff = np.linalg.norm(np.ravel(a) - np.ravel(b))
    return diff / np.linalg.norm(np.ravel(b)) if diff else 0.0


def decoupled(s):
    return s.with_(media=tuple(replace(m, alpha=0.0) for m in s.media))


@pytest.fixture(scope="module")
def stress_alpha0():
    s = decoupled(builtin_split_stress())
    mesh, disc, state = setup_simulation(s)
    return s, disc, state, assemble_system(disc, state.h, state.u, s.dt)


def test_split_config_validation():
    assert (SplitConfig().eps_abs, SplitConfig().eps_rel, SplitConfig().max_split_iters) == (1e-8, 1e-6, 50)
    for bad in ({"eps_abs": 0}, {"eps_rel": -1}, {"max_split_iters": 0}):
        with pytest.raises(ValueError):
            SplitConfig(**bad)


def test_state_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        SimState(np.array([np.nan]), np.zeros((1, 3)))


def test_split_stop_test():
    cfg = SplitConfig(eps_abs=1e-8, eps_rel=1e-6)
    assert split_converged((1e-9, 5.0), (1.0, 1e7), cfg)
    assert not split_converged((1e-9, 50.0), (1.0, 1e7), cfg)
    assert split_converged((1e-3, 1e-9), (1e4, 0.0), cfg)


def test_monolithic_decoupled_matches_block_solves(stress_alpha0):
    s, disc, state, sys_ = stress_alpha0
    new, stats = step_monolithic(state, s.dt, sys_, s.solver, disc.rho_g)
    assert stats.converged
    h = spla.spsolve(sys_.A_F.tocsc(), sys_.b_F)
    u = spla.spsolve(sys_.A_M.tocsc(), sys_.b_M)
    assert rel(new.h, h) <= 1e-9 and rel(new.u, u) <= 1e-9


def test_fixed_strain_decoupled_one_iteration(stress_alpha0):
    s, disc, state, sys_ = stress_alpha0
    new, res = step_fixed_strain(state, s.dt, sys_, s.solver, s.split)
    assert res.converged and res.iterations == 1 and len(res.stats) == 2


def test_zero_problem_gives_zero_state():
    n = 5
    A = sps.csr_matrix(np.diag(np.arange(1.0, n + 1)))
    sys_ = BlockSystem(A[:2, :2], A[:2, 2:], A[2:, :2], A[2:, 2:], np.zeros(2), np.zeros(3))
    state = SimState(np.zeros(2), np.zeros((1, 3)))
    new, stats = step_monolithic(state, 1.0, sys_, SolverConfig())
    assert stats.converged and not new.h.any() and not new.u.any()
    new, res = step_fixed_strain(state, 1.0, sys_, SolverConfig())
    assert res.converged and not new.h.any() and not new.u.any()


def test_repeated_step_at_steady_state():
    s = builtin_problem_a(6)
    s = s.with_(mesh=replace(s.mesh, flux_scheme="tpfa"), total_time=2e22, n_steps=2)
    r = run_simulation(s, "monolithic")
    assert r.converged
    h1, h2 = r.states[1].h, r.states[2].h
    assert abs(np.linalg.norm(h2) - np.linalg.norm(h1)) < s.solver.rel_tol * np.linalg.norm(h1)


def test_split_tracks_monolithic_every_step(problem_a_runs, problem_a):
    mono, split = problem_a_runs["monolithic"], problem_a_runs["fixed_strain"]
    assert mono.converged and split.converged
    bound = 100 * problem_a.split.eps_rel
    for a, b in zip(split.states[1:], mono.states[1:]):
        assert rel(a.h, b.h) <= bound and rel(a.u, b.u) <= bound


def test_split_reference_residuals_are_recorded(problem_a_runs):
    for step in problem_a_runs["fixed_strain"].steps:
        r0 = step.split.initial_residuals
        assert r0[0] > 0 and r0[1] > 0
        assert len(step.split.residuals) == step.split_iters


def test_conditional_stability_reported():
    s = builtin_split_stress()
    r = run_simulation(s, "fixed_strain")
    assert not r.converged
    assert r.steps[0].split_iters == s.split.max_split_iters
    assert not r.steps[0].split.converged


def test_stop_on_failure_returns_partial_history():
    s = builtin_split_stress().with_(n_steps=3, total_time=3e6)
    r = run_simulation(s, "fixed_strain")
    assert len(r.steps) == 1 and len(r.states) == 2
    r = run_simulation(s, "fixed_strain", stop_on_failure=False)
    assert len(r.steps) == 3


def test_unknown_strategy():
    with pytest.raises(ValueError):
        run_simulation(builtin_split_stress(), "fixed_stress")


def test_keep_states_false():
    r = run_simulation(builtin_terzaghi(20, n_steps=5), keep_states=False)
    assert len(r.states) == 2 and r.final.time == pytest.approx(r.steps[-1].time)


def test_terzaghi_drained_limit():
    r = run_simulation(builtin_terzaghi(20, t_v=20.0, n_steps=20))
    assert np.abs(r.final.h - 1.0).max() <= 1e-6


def _terzaghi_profile(n_steps, t_v=0.5):
    r = run_simulation(builtin_terzaghi(40, t_v=t_v, n_steps=n_steps))
    return r.mesh.cell_centroids[:, 2], (r.final.h - 1.0) * 1.1


def test_terzaghi_time_refinement():
    z, p40 = _terzaghi_profile(40)
    _, p80 = _terzaghi_profile(80)
    assert rel(p80, p40) < 1e-2
    exact = terzaghi_pressure(1 - z, 0.5)
    assert rel(p80, exact) < rel(p40, exact)
