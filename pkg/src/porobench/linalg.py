"""Sparse kernels: dual-threshold ILU, Bi-CGSTAB, block systems, stage timers."""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.io
import scipy.sparse as sps
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .parallel import get_num_threads, run_chunks

PIVOT_TOL = 1e-30
BREAKDOWN_TOL = 1e-60


class ZeroPivotError(ArithmeticError):
    def __init__(self, row: int):
        super().__init__(f"zero pivot in incomplete factorization at row {row}")
        self.row = row


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_iters: int = 5000
    drop_tol: float = 1e-3
    fill: int = 25
    reorder: bool = True

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if not self.rel_tol < 1:
            raise ValueError("rel_tol must be below 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.drop_tol < 0 or (self.fill is not None and self.fill < 0):
            raise ValueError("drop_tol and fill must be non-negative")


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    initial_residual: float = 0.0
    precond_time: float = 0.0
    iter_time: float = 0.0
    converged: bool = False
    breakdown: bool = False


# ---- timers ------------------------------------------------------------------

@dataclass
class StageTimer:
    """Accumulates wall time per named stage."""

    totals: dict = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) + time.perf_counter() - t0

    def __getitem__(self, name: str) -> float:
        return self.totals.get(name, 0.0)


# ---- sparse matrix helpers ---------------------------------------------------

def as_csr(A) -> sps.csr_matrix:
    A = sps.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


class ThreadedOperator:
    """Row-chunked SpMV over the worker pool; each chunk writes its own rows."""

    def __init__(self, A, nchunks: int | None = None):
        self.A = as_csr(A)
        self.shape = self.A.shape
        n = self.shape[0]
        k = nchunks or get_num_threads()
        # balance by nonzeros
        cuts = np.searchsorted(self.A.indptr, np.linspace(0, self.A.nnz, k + 1))
        cuts[0], cuts[-1] = 0, n
        self.bounds = [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]
        self.blocks = [self.A[a:b] for a, b in self.bounds]

    def __matmul__(self, x):
        if len(self.blocks) == 1:
            return self.A @ x
        y = np.empty(self.shape[0])

        def work(i):
            a, b = self.bounds[i]
            y[a:b] = self.blocks[i] @ x

        run_chunks(work, range(len(self.blocks)))
        return y

    matvec = __matmul__


# ---- ILUT --------------------------------------------------------------------

@numba.njit(cache=True)
def _grow(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), a.dtype)
    b[: a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _keep_largest(idx, val, cnt, limit):
    """Return the indices (into idx/val) of the ``limit`` largest |val|, sorted by column."""
    if cnt > limit:
        order = np.argsort(-np.abs(val[:cnt]), kind="mergesort")[:limit]
    else:
        order = np.arange(cnt)
    cols = idx[order]
    o2 = np.argsort(cols)
    return order[o2]


@numba.njit(cache=True)
def _ilut_kernel(n, indptr, indices, data, tau, p):
    w = np.zeros(n)
    nzmark = np.full(n, -1, np.int64)
    lidx = np.empty(n, np.int64)
    uidx = np.empty(n, np.int64)
    lval = np.empty(n)
    uval = np.empty(n)
    Lp = np.zeros(n + 1, np.int64)
    Up = np.zeros(n + 1, np.int64)
    cap = max(16, 4 * indptr[n])
    Li = np.empty(cap, np.int64)
    Lx = np.empty(cap)
    Ui = np.empty(cap, np.int64)
    Ux = np.empty(cap)
    diag = np.zeros(n)
    for i in range(n):
        nl = 0
        nu = 0
        norm = 0.0
        nlo = 0
        nuo = 0
        has_diag = False
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            v = data[k]
            norm += v * v
            w[j] = v
            nzmark[j] = i
            if j < i:
                lidx[nl] = j
                nl += 1
                nlo += 1
            elif j > i:
                uidx[nu] = j
                nu += 1
                nuo += 1
            else:
                has_diag = True
        if not has_diag:
            w[i] = 0.0
            nzmark[i] = i
        norm = math.sqrt(norm)
        thresh = tau * norm
        # eliminate lower entries in increasing column order
        done = 0
        nkept = 0
        while done < nl:
            m = done
            for t in range(done + 1, nl):
                if lidx[t] < lidx[m]:
                    m = t
            k = lidx[m]
            lidx[m] = lidx[done]
            lidx[done] = k
            done += 1
            wk = w[k] / diag[k]
            if abs(wk) < thresh:
                w[k] = 0.0
                continue
            w[k] = wk
            lval[nkept] = wk
            lidx[nkept] = k  # safe: nkept < done
            nkept += 1
            for t in range(Up[k], Up[k + 1]):
                j = Ui[t]
                if nzmark[j] != i:
                    nzmark[j] = i
                    w[j] = 0.0
                    if j < i:
                        lidx[nl] = j
                        nl += 1
                    elif j > i:
                        uidx[nu] = j
                        nu += 1
                w[j] -= wk * Ux[t]
        # L part: drop by threshold (already done) and cap
        sel = _keep_largest(lidx, lval, nkept, nlo + p)
        nL = sel.shape[0]
        Li = _grow(Li, Lp[i] + nL)
        Lx = _grow(Lx, Lp[i] + nL)
        for t in range(nL):
            Li[Lp[i] + t] = lidx[sel[t]]
            Lx[Lp[i] + t] = lval[sel[t]]
        Lp[i + 1] = Lp[i] + nL
        # U part
        cnt = 0
        for t in range(nu):
            j = uidx[t]
            v = w[j]
            w[j] = 0.0
            if abs(v) >= thresh and v != 0.0:
                uidx[cnt] = j
                uval[cnt] = v
                cnt += 1
        sel = _keep_largest(uidx, uval, cnt, nuo + p)
        nU = sel.shape[0]
        Ui = _grow(Ui, Up[i] + nU)
        Ux = _grow(Ux, Up[i] + nU)
        for t in range(nU):
            Ui[Up[i] + t] = uidx[sel[t]]
            Ux[Up[i] + t] = uval[sel[t]]
        Up[i + 1] = Up[i] + nU
        d = w[i]
        w[i] = 0.0
        for t in range(nl):
            w[lidx[t]] = 0.0
        if abs(d) < PIVOT_TOL:
            return i, Lp, Li, Lx, Up, Ui, Ux, diag
        diag[i] = d
    return -1, Lp, Li[: Lp[n]], Lx[: Lp[n]], Up, Ui[: Up[n]], Ux[: Up[n]], diag


@numba.njit(cache=True)
def _lu_solve(n, Lp, Li, Lx, Up, Ui, Ux, diag, b):
    x = b.copy()
    for i in range(n):
        s = x[i]
        for t in range(Lp[i], Lp[i + 1]):
            s -= Lx[t] * x[Li[t]]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for t in range(Up[i], Up[i + 1]):
            s -= Ux[t] * x[Ui[t]]
        x[i] = s / diag[i]
    return x


class ILUTPreconditioner:
    """Dual-threshold incomplete LU, optionally after reverse Cuthill-McKee ordering.

    Row i keeps entries with ``|w| >= tau * ||a_i||_2`` and at most ``p`` more
    entries than the original row has in each of its L and U parts.  ``p``
    of ``None`` means no cap.
    """

    def __init__(self, A, tau: float = 1e-3, p: int | None = 25, reorder: bool = True):
        A = as_csr(A)
        n = A.shape[0]
        if A.shape[1] != n:
            raise ValueError("matrix must be square")
        self.n = n
        self.tau, self.p = tau, p
        if reorder and n > 1:
            pat = abs(A) + abs(A).T
            self.perm = reverse_cuthill_mckee(pat.tocsr(), symmetric_mode=True).astype(np.int64)
            A = A[self.perm][:, self.perm]
            A.sort_indices()
        else:
            self.perm = None
        cap = n if p is None else int(p)
        status, *fac = _ilut_kernel(n, A.indptr.astype(np.int64), A.indices.astype(np.int64),
                                    A.data.astype(float), float(tau), cap)
        if status >= 0:
            row = int(self.perm[status]) if self.perm is not None else int(status)
            raise ZeroPivotError(row)
        self._fac = fac

    @property
    def nnz(self) -> int:
        Lp, _, _, Up, *_ = self._fac
        return int(Lp[-1] + Up[-1] + self.n)

    @property
    def L(self) -> sps.csr_matrix:
        Lp, Li, Lx = self._fac[:3]
        return sps.csr_matrix((Lx, Li, Lp), shape=(self.n, self.n)) + sps.identity(self.n, format="csr")

    @property
    def U(self) -> sps.csr_matrix:
        Up, Ui, Ux, diag = self._fac[3:]
        return sps.csr_matrix((Ux, Ui, Up), shape=(self.n, self.n)) + sps.diags(diag, format="csr")

    def solve(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.perm is None:
            return _lu_solve(self.n, *self._fac, r)
        z = _lu_solve(self.n, *self._fac, r[self.perm])
        out = np.empty_like(z)
        out[self.perm] = z
        return out

    __call__ = solve


def ilut_factor(A, tau: float, p: int | None = 25, reorder: bool = True) -> ILUTPreconditioner:
    return ILUTPreconditioner(A, tau, p, reorder)


def build_preconditioner(A, config: SolverConfig, retries: int = 3) -> ILUTPreconditioner:
    """Factor with ``config.drop_tol``, retrying with tenfold smaller tolerances on zero pivots."""
    tau = config.drop_tol
    for attempt in range(retries + 1):
        try:
            return ILUTPreconditioner(A, tau, config.fill, config.reorder)
        except ZeroPivotError:
            if attempt == retries:
                raise
            tau /= 10.0


# ---- Bi-CGSTAB ---------------------------------------------------------------

def bicgstab(A, b, x0=None, precond=None, config: SolverConfig = SolverConfig()):
    """Right-preconditioned Bi-CGSTAB.

    Stops when ``||r|| <= max(rel_tol ||r0||, abs_tol)``.  On breakdown the
    best iterate seen is returned with ``breakdown=True``.  Convergence of the
    recursive residual is confirmed against the true residual, restarting if
    they disagree.
    """
    t0 = time.perf_counter()
    op = A if isinstance(A, ThreadedOperator) else as_csr(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    M = precond if precond is not None else (lambda v: v)
    r = b - op @ x
    r0n = float(np.linalg.norm(r))
    stats = SolveStats(initial_residual=r0n, residual=r0n)
    target = max(config.rel_tol * r0n, config.abs_tol)
    if r0n <= target:
        stats.converged = True
        stats.iter_time = time.perf_counter() - t0
        return x, stats
    best_x, best_r = x.copy(), r0n
    restart_r = r0n
    it = 0
    while it < config.max_iters:
        rhat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        broke = False
        while it < config.max_iters:
            it += 1
            rho_new = float(rhat @ r)
            if abs(rho_new) < BREAKDOWN_TOL or abs(omega) < BREAKDOWN_TOL:
                broke = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            phat = M(p)
            v = op @ phat
            denom = float(rhat @ v)
            if abs(denom) < BREAKDOWN_TOL:
                broke = True
                break
            alpha = rho / denom
            s = r - alpha * v
            if float(np.linalg.norm(s)) <= target:
                x = x + alpha * phat
                break
            shat = M(s)
            t = op @ shat
            tt = float(t @ t)
            if tt < BREAKDOWN_TOL:
                x = x + alpha * phat
                broke = True
                break
            omega = float(t @ s) / tt
            x = x + alpha * phat + omega * shat
            r = s - omega * t
            rn = float(np.linalg.norm(r))
            if not np.isfinite(rn):
                broke = True
                break
            if rn <= target:
                break
        r = b - op @ x
        rn = float(np.linalg.norm(r))
        if np.isfinite(rn) and rn < best_r:
            best_x, best_r = x.copy(), rn
        if rn <= target:
            stats.converged = True
            break
        if broke:
            # restarting only helps if this cycle made progress
            if not (np.isfinite(rn) and rn < restart_r):
                stats.breakdown = True
                break
            restart_r = rn
        if not np.isfinite(rn):
            stats.breakdown = True
            break
    stats.iterations = it
    stats.residual = best_r
    stats.iter_time = time.perf_counter() - t0
    return best_x, stats


# ---- block systems -----------------------------------------------------------

class BlockSystem:
    """Monolithic system with cells first, then 3 dofs per node.

    Holds the four blocks; the composed matrix is built on first use.
    """

    def __init__(self, A_F, A_FM, A_MF, A_M, b_F, b_M):
        self.A_F, self.A_FM, self.A_MF, self.A_M = (as_csr(m) for m in (A_F, A_FM, A_MF, A_M))
        self.b_F = np.asarray(b_F, dtype=float)
        self.b_M = np.asarray(b_M, dtype=float)
        self.n_flow = self.A_F.shape[0]
        self._A = None

    @classmethod
    def from_matrix(cls, A, b, n_flow: int) -> "BlockSystem":
        A = as_csr(A)
        f, m = slice(0, n_flow), slice(n_flow, A.shape[0])
        sys_ = cls(A[f][:, f], A[f][:, m], A[m][:, f], A[m][:, m], b[f], b[m])
        sys_._A = A
        return sys_

    @property
    def A(self) -> sps.csr_matrix:
        if self._A is None:
            self._A = as_csr(sps.bmat([[self.A_F, self.A_FM], [self.A_MF, self.A_M]], format="csr"))
        return self._A

    @property
    def b(self) -> np.ndarray:
        return np.concatenate([self.b_F, self.b_M])

    @property
    def n(self) -> int:
        return self.n_flow + self.A_M.shape[0]

    @property
    def flow(self) -> slice:
        return slice(0, self.n_flow)

    @property
    def mech(self) -> slice:
        return slice(self.n_flow, self.n)

    def residuals(self, h, u) -> tuple[np.ndarray, np.ndarray]:
        h, u = np.ravel(h), np.ravel(u)
        return self.b_F - self.A_F @ h - self.A_FM @ u, self.b_M - self.A_MF @ h - self.A_M @ u


def block_residuals(system: BlockSystem, h, u) -> tuple[float, float]:
    """Euclidean norms of the flow and mechanics residuals."""
    rF, rM = system.residuals(h, u)
    return float(np.linalg.norm(rF)), float(np.linalg.norm(rM))


def jacobi_scaling(A) -> np.ndarray:
    """``1/sqrt|a_ii|`` (1 where the diagonal vanishes) for symmetric two-sided scaling."""
    d = np.abs(A.diagonal())
    out = np.ones_like(d)
    nz = d > 0
    out[nz] = 1.0 / np.sqrt(d[nz])
    return out


class ScaledSolver:
    """Factor ``D R A D`` once; solve ``A x = b`` for many right-hand sides.

    ``row_scale`` (R) brings rows to comparable units before the symmetric
    Jacobi scaling D.  The convergence test is applied to the scaled system.
    """

    def __init__(self, A, config: SolverConfig, row_scale=None):
        t0 = time.perf_counter()
        A = as_csr(A)
        self.r = np.ones(A.shape[0]) if row_scale is None else np.asarray(row_scale, dtype=float)
        As = as_csr(sps.diags(self.r) @ A)
        self.d = jacobi_scaling(As)
        Ds = sps.diags(self.d)
        self.As = as_csr(Ds @ As @ Ds)
        self.op = ThreadedOperator(self.As)
        self.config = config
        self.M = build_preconditioner(self.As, config)
        self.precond_time = time.perf_counter() - t0

    def solve(self, b, x0=None):
        """Solve from ``x0`` by correction: ``A dx = b - A x0`` with ``dx`` from zero.

        Iterating on the correction keeps round-off in ``A x0`` out of the
        convergence test when ``x0`` is already close.
        """
        bs = self.d * self.r * np.asarray(b, dtype=float)
        if x0 is None:
            y, stats = bicgstab(self.op, bs, None, self.M, self.config)
            return self.d * y, stats
        y0 = np.asarray(x0, dtype=float) / self.d
        dy, stats = bicgstab(self.op, bs - self.op @ y0, None, self.M, self.config)
        return self.d * (y0 + dy), stats


def export_matrix_market(path, A, comment: str = "") -> None:
    """Write ``A`` in coordinate real general format."""
    scipy.io.mmwrite(str(path), sps.coo_matrix(A), comment=comment, field="real", symmetry="general")


def read_matrix_market(path) -> sps.csr_matrix:
    return as_csr(scipy.io.mmread(str(path)))
