"""Thread-scaling benchmark runs, timing reports and field export."""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .parallel import get_num_threads, set_num_threads
from .physics import pressure_from_head
from .strategies import SimulationResult, run_simulation, setup_simulation
from .vem_mech import compute_cell_stress

CSV_COLUMNS = ("n_threads", "T_total", "T_assmbl", "T_precond", "T_iter", "lin_iters", "split_iters",
               "converged")


@dataclass(frozen=True)
class TimingRow:
    n_threads: int
    T_total: float
    T_assmbl: float
    T_precond: float
    T_iter: float
    lin_iters: int
    split_iters: tuple
    converged: bool

    @classmethod
    def from_result(cls, n_threads: int, res: SimulationResult) -> "TimingRow":
        t = res.timer
        return cls(n_threads, res.total_time, t["assembly"], t["precond"], t["iteration"],
                   res.lin_iters, tuple(res.split_iters), res.converged)


@dataclass
class TimingReport:
    scenario: str
    strategy: str
    rows: list = field(default_factory=list)

    @property
    def baseline(self) -> TimingRow:
        """Row with the smallest thread count; speed-ups are relative to it."""
        return min(self.rows, key=lambda r: r.n_threads)

    def speedup(self, stage: str = "T_total") -> list[float]:
        base = getattr(self.baseline, stage)
        return [base / getattr(r, stage) if getattr(r, stage) > 0 else float("nan") for r in self.rows]

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.rows)


def _median_row(n, results):
    rows = [TimingRow.from_result(n, r) for r in results]
    med = {k: statistics.median(getattr(r, k) for r in rows) for k in ("T_total", "T_assmbl", "T_precond", "T_iter")}
    first = rows[0]
    return TimingRow(n, med["T_total"], med["T_assmbl"], med["T_precond"], med["T_iter"],
                     first.lin_iters, first.split_iters, all(r.converged for r in rows))


def run_benchmark(scenario, strategy: str | None = None, threads=(1,), repeat: int = 1, setup=None):
    """One simulation per thread count (``repeat`` times, median timings).

    The mesh, stencils and initial state are built once and shared, so every
    row solves the identical problem.  Returns ``(report, results)`` where
    ``results[i]`` is the last run for ``threads[i]``.
    """
    threads = [int(t) for t in threads]
    if not threads or min(threads) < 1:
        raise ValueError("thread counts must be at least 1")
    if any(b < a for a, b in zip(threads, threads[1:])):
        raise ValueError("thread counts must be nondecreasing")
    if repeat < 1:
        raise ValueError("repeat must be at least 1")
    strategy = (strategy or scenario.strategy).replace("-", "_")
    setup = setup or setup_simulation(scenario)
    report = TimingReport(scenario.name, strategy)
    results = []
    previous = get_num_threads()
    try:
        for n in threads:
            set_num_threads(n)
            runs = [run_simulation(scenario, strategy, setup=setup) for _ in range(repeat)]
            report.rows.append(_median_row(n, runs))
            results.append(runs[-1])
    finally:
        set_num_threads(previous)
    return report, results


def measure_assembly(disc, threads=(1, 2, 4), repeat: int = 3) -> dict:
    """Best-of-``repeat`` wall time of the element stiffness assembly per thread count."""
    out = {}
    previous = get_num_threads()
    try:
        for n in threads:
            set_num_threads(n)
            disc.parts()
            best = float("inf")
            for _ in range(repeat):
                t0 = time.perf_counter()
                disc.stiffness()
                best = min(best, time.perf_counter() - t0)
            out[n] = best
    finally:
        set_num_threads(previous)
    return out


# ---- reports -----------------------------------------------------------------

def report_csv(report: TimingReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([r.n_threads, repr(r.T_total), repr(r.T_assmbl), repr(r.T_precond), repr(r.T_iter),
                    r.lin_iters, ";".join(str(s) for s in r.split_iters), "true" if r.converged else "false"])
    return buf.getvalue()


def parse_report_csv(text: str, scenario: str = "", strategy: str = "") -> TimingReport:
    rd = csv.reader(io.StringIO(text))
    header = next(rd)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in rd:
        if not rec:
            continue
        rows.append(TimingRow(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]),
                              int(rec[5]), tuple(int(s) for s in rec[6].split(";") if s),
                              rec[7] == "true"))
    return TimingReport(scenario, strategy, rows)


def report_table(report: TimingReport) -> str:
    head = ("#threads", "T_total, s", "T_assmbl, s", "T_precond, s", "T_iter, s", "#lin.it", "#split.it",
            "speed-up", "converged")
    lines = [f"scenario: {report.scenario}   strategy: {report.strategy}   "
             f"speed-up baseline: {report.baseline.n_threads} thread(s)"]
    rows = []
    for r, s in zip(report.rows, report.speedup()):
        rows.append((str(r.n_threads), f"{r.T_total:.3f}", f"{r.T_assmbl:.3f}", f"{r.T_precond:.3f}",
                     f"{r.T_iter:.3f}", str(r.lin_iters), ";".join(map(str, r.split_iters)), f"{s:.2f}",
                     "yes" if r.converged else "NO"))
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    fmt = " | ".join(f"{{:>{w}}}" for w in widths)
    lines.append(fmt.format(*head))
    lines.append("-+-".join("-" * w for w in widths))
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def emit_report(report: TimingReport, path, fmt: str = "csv") -> Path:
    if not report.rows:
        raise ValueError("empty report")
    if fmt not in ("csv", "text"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.write_text(report_csv(report) if fmt == "csv" else report_table(report))
    return path


# ---- fields ------------------------------------------------------------------

def stress_magnitude(result: SimulationResult, state=None) -> np.ndarray:
    disc = result.disc
    state = state or result.final
    P = pressure_from_head(state.h, disc.mesh.cell_centroids[:, 2], disc.rho_g)
    _, mag = compute_cell_stress(disc.mesh, disc.media.stiffness, state.u, disc.media.alpha, P)
    return mag


def export_fields(path, mesh, state, stress_mag=None) -> Path:
    """Legacy ASCII VTK unstructured grid with head, displacement and stress magnitude."""
    h = np.asarray(state.h, dtype=float)
    u = np.asarray(state.u, dtype=float).reshape(-1, 3)
    if h.shape != (mesh.n_cells,) or u.shape != (mesh.n_nodes, 3):
        raise ValueError("state sizes do not match the mesh")
    mag = np.zeros(mesh.n_cells) if stress_mag is None else np.asarray(stress_mag, dtype=float)
    out = ["# vtk DataFile Version 3.0", "porobench fields", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_nodes} double"]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    sizes = np.diff(mesh.vtk_ptr)
    out.append(f"CELLS {mesh.n_cells} {int(sizes.sum() + mesh.n_cells)}")
    for c in range(mesh.n_cells):
        ids = mesh.vtk_nodes[mesh.vtk_ptr[c]:mesh.vtk_ptr[c + 1]]
        out.append(" ".join(map(str, [len(ids), *ids.tolist()])))
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out += [str(int(t)) for t in mesh.vtk_types]
    out += [f"CELL_DATA {mesh.n_cells}", "SCALARS head double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in h.tolist()]
    out += ["SCALARS stress_magnitude double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in mag.tolist()]
    out += [f"POINT_DATA {mesh.n_nodes}", "VECTORS displacement double"]
    out += [f"{a!r} {b!r} {c!r}" for a, b, c in u.tolist()]
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def read_vtk_fields(path) -> dict:
    """Parse the arrays written by ``export_fields`` (for checks and tooling)."""
    toks = Path(path).read_text().split("\n")
    out = {}
    i = 0
    n_cells = n_points = 0
    while i < len(toks):
        line = toks[i].split()
        if not line:
            i += 1
            continue
        key = line[0]
        if key == "POINTS":
            n_points = int(line[1])
            out["points"] = np.loadtxt(toks[i + 1:i + 1 + n_points]).reshape(-1, 3)
            i += 1 + n_points
        elif key == "CELLS":
            n_cells = int(line[1])
            out["cells"] = [list(map(int, t.split()))[1:] for t in toks[i + 1:i + 1 + n_cells]]
            i += 1 + n_cells
        elif key == "CELL_TYPES":
            out["cell_types"] = np.array([int(t) for t in toks[i + 1:i + 1 + n_cells]])
            i += 1 + n_cells
        elif key == "SCALARS":
            out[line[1]] = np.array([float(t) for t in toks[i + 2:i + 2 + n_cells]])
            i += 2 + n_cells
        elif key == "VECTORS":
            out[line[1]] = np.loadtxt(toks[i + 1:i + 1 + n_points]).reshape(-1, 3)
            i += 1 + n_points
        else:
            i += 1
    return out
