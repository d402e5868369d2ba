"""Backward-Euler time stepping with the monolithic and fixed-strain strategies."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import BlockSystem, ScaledSolver, SolverConfig, SolveStats, StageTimer, block_residuals

MONOLITHIC = "monolithic"
FIXED_STRAIN = "fixed_strain"


@dataclass(frozen=True)
class SplitConfig:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-6
    max_split_iters: int = 50

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("splitting tolerances must be positive")
        if self.max_split_iters < 1:
            raise ValueError("max_split_iters must be at least 1")


@dataclass
class SimState:
    h: np.ndarray
    u: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.u))):
            raise FloatingPointError("non-finite state")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.h, self.u.ravel()])


@dataclass
class SplitResult:
    converged: bool
    iterations: int
    stats: list = field(default_factory=list)  # inner SolveStats, two per iteration
    residuals: list = field(default_factory=list)  # (|r_F|, |r_M|) after each iteration
    initial_residuals: tuple = (0.0, 0.0)


def _timer(timer):
    return timer if timer is not None else StageTimer()


def monolithic_row_scale(system: BlockSystem, dt: float, rho_g: float) -> np.ndarray:
    """Bring flow rows (m^3/s) to the force units of the mechanics rows."""
    r = np.ones(system.n)
    r[system.flow] = rho_g * dt
    return r


def step_monolithic(state: SimState, dt: float, system: BlockSystem, config: SolverConfig,
                    rho_g: float = 9810.0, timer: StageTimer | None = None):
    """One coupled solve; returns the new state and the solver statistics."""
    timer = _timer(timer)
    with timer.stage("assembly"):
        A = system.A
        b = system.b
    with timer.stage("precond"):
        solver = ScaledSolver(A, config, monolithic_row_scale(system, dt, rho_g))
    with timer.stage("iteration"):
        x, stats = solver.solve(b, state.vector())
    stats.precond_time = solver.precond_time
    new = SimState(x[system.flow], x[system.mech], state.time + dt)
    return new, stats


def split_converged(r, r0, split: SplitConfig) -> bool:
    return all(ri < split.eps_abs or ri < split.eps_rel * r0i for ri, r0i in zip(r, r0))


def step_fixed_strain(state: SimState, dt: float, system: BlockSystem, config: SolverConfig,
                      split: SplitConfig = SplitConfig(), timer: StageTimer | None = None):
    """Fixed-strain iteration: flow with u frozen, then mechanics with the new head.

    Each block's reference residual is taken just before its first solve:
    flow at ``(h_n, u_n)``, mechanics at ``(h^1, u_n)``.  The stop test is
    evaluated at the end of every iteration.  Both block
    factorizations are computed once and reused.
    """
    timer = _timer(timer)
    h = state.h.copy()
    u = state.u.ravel().copy()
    with timer.stage("precond"):
        flow = ScaledSolver(system.A_F, config)
        mech = ScaledSolver(system.A_M, config)
    with timer.stage("assembly"):
        rF0 = float(np.linalg.norm(system.b_F - system.A_F @ h - system.A_FM @ u))
    res = SplitResult(False, 0)
    r0 = None
    for k in range(1, split.max_split_iters + 1):
        with timer.stage("iteration"):
            h, sf = flow.solve(system.b_F - system.A_FM @ u, h)
            rhs_M = system.b_M - system.A_MF @ h
        if r0 is None:
            with timer.stage("assembly"):
                r0 = (rF0, float(np.linalg.norm(rhs_M - system.A_M @ u)))
            res.initial_residuals = r0
        with timer.stage("iteration"):
            u, sm = mech.solve(rhs_M, u)
        sf.precond_time = flow.precond_time if k == 1 else 0.0
        sm.precond_time = mech.precond_time if k == 1 else 0.0
        res.stats += [sf, sm]
        res.iterations = k
        with timer.stage("assembly"):
            r = block_residuals(system, h, u)
        res.residuals.append(r)
        if not all(np.isfinite(r)):
            break
        if split_converged(r, r0, split):
            res.converged = True
            break
    if np.all(np.isfinite(h)) and np.all(np.isfinite(u)):
        new = SimState(h, u, state.time + dt)
    else:
        new = SimState(state.h, state.u, state.time + dt)
    return new, res


# ---- driver ------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    time: float
    dt: float
    lin_iters: int
    split_iters: int
    converged: bool
    stats: list


@dataclass
class SimulationResult:
    scenario: str
    strategy: str
    states: list
    steps: list
    timer: StageTimer
    setup_time: float
    total_time: float
    mesh: object = None
    disc: object = None
    last_system: BlockSystem | None = None

    @property
    def final(self) -> SimState:
        return self.states[-1]

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.steps)

    @property
    def lin_iters(self) -> int:
        return sum(s.lin_iters for s in self.steps)

    @property
    def split_iters(self) -> list[int]:
        return [s.split_iters for s in self.steps]


def setup_simulation(scenario):
    """Mesh, discretization and initial state for a scenario."""
    from .assembly import Discretization, equilibrium_displacement

    mesh = scenario.mesh.build()
    media = scenario.cell_media(mesh)
    names = media.names
    disc = Discretization(mesh, media, scenario.fluid.rho_g,
                          scenario.flow_bc.resolve(mesh, media.index, names),
                          scenario.mech_bc.resolve(mesh, media.index, names),
                          scenario.mesh.flux_scheme)
    h0 = np.full(mesh.n_cells, float(scenario.initial_head))
    u0 = equilibrium_displacement(disc, h0) if scenario.equilibrate else np.zeros((mesh.n_nodes, 3))
    return mesh, disc, SimState(h0, u0, 0.0)


def run_simulation(scenario, strategy: str | None = None, keep_states: bool = True,
                   setup=None, stop_on_failure: bool = True) -> SimulationResult:
    """Run every time step of ``scenario`` with the chosen strategy.

    ``setup`` may pass a precomputed ``(mesh, disc, state)`` triple.  A step
    whose solve fails to converge ends the run (partial result returned).
    """
    from .assembly import assemble_system

    strategy = (strategy or scenario.strategy).replace("-", "_")
    if strategy not in (MONOLITHIC, FIXED_STRAIN):
        raise ValueError(f"unknown strategy {strategy!r}")
    t0 = time.perf_counter()
    mesh, disc, state = setup if setup is not None else setup_simulation(scenario)
    t1 = time.perf_counter()
    timer = StageTimer()
    states = [state]
    steps = []
    dt = scenario.dt
    system = None
    for n in range(1, scenario.n_steps + 1):
        with timer.stage("assembly"):
            system = assemble_system(disc, state.h, state.u, dt)
        if strategy == MONOLITHIC:
            state, stats = step_monolithic(state, dt, system, scenario.solver, disc.rho_g, timer)
            rec = StepRecord(n, state.time, dt, stats.iterations, 1, stats.converged, [stats])
        else:
            state, res = step_fixed_strain(state, dt, system, scenario.solver, scenario.split, timer)
            inner_ok = all(s.converged for s in res.stats)
            rec = StepRecord(n, state.time, dt, sum(s.iterations for s in res.stats), res.iterations,
                             res.converged and inner_ok, res.stats)
            rec.split = res
        steps.append(rec)
        states.append(state) if keep_states else states.__setitem__(slice(None), [states[0], state])
        if stop_on_failure and not rec.converged:
            break
    t2 = time.perf_counter()
    return SimulationResult(scenario.name, strategy, states, steps, timer, t1 - t0, t2 - t1,
                            mesh, disc, system)
