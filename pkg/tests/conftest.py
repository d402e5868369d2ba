import os
import time

import pytest

os.environ.setdefault("POROBENCH_THREADS", "1")

from porobench.scenario import builtin_problem_a  # noqa: E402
from porobench.strategies import run_simulation, setup_simulation  # noqa: E402


@pytest.fixture(scope="session")
def problem_a():
    return builtin_problem_a(12)


PROBLEM_A_TIMES = {}


@pytest.fixture(scope="session")
def problem_a_setup(problem_a):
    t0 = time.perf_counter()
    setup = setup_simulation(problem_a)
    PROBLEM_A_TIMES["setup"] = time.perf_counter() - t0
    return setup


@pytest.fixture(scope="session")
def problem_a_runs(problem_a, problem_a_setup):
    runs = {}
    for strategy in ("monolithic", "fixed_strain"):
        t0 = time.perf_counter()
        runs[strategy] = run_simulation(problem_a, strategy, setup=problem_a_setup)
        PROBLEM_A_TIMES[strategy] = time.perf_counter() - t0
    return runs


@pytest.fixture(scope="session")
def problem_a_times(problem_a_runs):
    return dict(PROBLEM_A_TIMES)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
