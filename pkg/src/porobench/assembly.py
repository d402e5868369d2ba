"""Per-step assembly of the coupled block system.

Everything that does not change between time steps (flux stencils, the
divergence operator, the symbolic stiffness pattern, boundary data) lives in a
``Discretization``.  ``assemble_system`` recomputes the element stiffness on
the worker pool and combines the blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .coupling import divergence_operator
from .fvm_flow import boundary_data, cell_face_incidence, flux_stencils
from .linalg import BlockSystem, as_csr
from .mesh import PolyMesh, partition_contiguous
from .parallel import get_num_threads
from .physics import CellMedia
from .vem_mech import MechPattern, mech_constraints, traction_loads


@dataclass(eq=False)
class Discretization:
    mesh: PolyMesh
    media: CellMedia
    rho_g: float
    flow_bc: tuple
    mech_bc: tuple
    scheme: str = "tpfa"

    def __post_init__(self):
        mesh = self.mesh
        self.stencil = flux_stencils(mesh, self.media.K, self.flow_bc[0], self.scheme)
        inc = cell_face_incidence(mesh)
        self.flow_operator = as_csr(inc @ self.stencil.cell)
        h_bnd, q_bnd = boundary_data(*self.flow_bc)
        self.flow_bnd_rhs = -(inc @ (self.stencil.head @ h_bnd + self.stencil.flux @ q_bnd))
        self.div = divergence_operator(mesh)
        self.alpha_div = as_csr(sps.diags(self.media.alpha) @ self.div)
        self.pattern = MechPattern(mesh)
        self.traction = traction_loads(mesh, *self.mech_bc)
        self.fixed_dofs, self.fixed_values = mech_constraints(mesh, *self.mech_bc)
        keep = np.ones(3 * mesh.n_nodes)
        keep[self.fixed_dofs] = 0.0
        self._keep = sps.diags(keep)
        self._parts = {}

    @property
    def n_flow(self) -> int:
        return self.mesh.n_cells

    @property
    def n_mech(self) -> int:
        return 3 * self.mesh.n_nodes

    def parts(self, nparts: int | None = None):
        nparts = nparts or get_num_threads()
        if nparts not in self._parts:
            part = partition_contiguous(self.mesh, min(nparts, self.mesh.n_cells))
            self._parts[nparts] = [part.cells_of(p) for p in range(part.nparts)]
        return self._parts[nparts]

    def stiffness(self) -> sps.csr_matrix:
        parts = self.parts()
        values = self.pattern.local_values(self.media.stiffness, parts)
        return self.pattern.assemble(values, parts)

    def constrain(self, A_M, A_FM, A_MF, b_F, b_M):
        """Eliminate displacement and roller dofs from the mechanics rows and columns."""
        dofs = self.fixed_dofs
        if len(dofs) == 0:
            return A_M, A_FM, A_MF, b_F, b_M
        g = np.zeros(self.n_mech)
        g[dofs] = self.fixed_values
        b_M = b_M - A_M @ g
        b_F = b_F - A_FM @ g
        scale = float(np.mean(np.abs(A_M.diagonal()[dofs]))) or 1.0
        K = self._keep
        diag = np.zeros(self.n_mech)
        diag[dofs] = scale
        A_M = as_csr(K @ A_M @ K + sps.diags(diag))
        A_FM = as_csr(A_FM @ K)
        A_MF = as_csr(K @ A_MF)
        for m in (A_M, A_FM, A_MF):
            m.eliminate_zeros()
        b_M = b_M.copy()
        b_M[dofs] = scale * self.fixed_values
        return A_M, A_FM, A_MF, b_F, b_M


def assemble_system(disc: Discretization, h_prev, u_prev, dt: float, source=None,
                    mechanics_first: bool = False) -> BlockSystem:
    """Backward-Euler block system for one step from ``(h_prev, u_prev)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    mesh = disc.mesh
    u_prev = np.ravel(u_prev)

    def flow():
        store = disc.media.s_stor * mesh.cell_volumes / dt
        A_F = as_csr(disc.flow_operator + sps.diags(store))
        b_F = store * np.asarray(h_prev) + disc.flow_bnd_rhs
        if source is not None:
            b_F = b_F + np.asarray(source) * mesh.cell_volumes
        A_FM = as_csr(disc.alpha_div / dt)
        return A_F, A_FM, b_F + A_FM @ u_prev

    def mech():
        A_M = disc.stiffness()
        A_MF = as_csr(-disc.rho_g * disc.alpha_div.T)
        b_M = disc.traction + A_MF @ mesh.cell_centroids[:, 2]
        return A_M, A_MF, b_M

    if mechanics_first:
        A_M, A_MF, b_M = mech()
        A_F, A_FM, b_F = flow()
    else:
        A_F, A_FM, b_F = flow()
        A_M, A_MF, b_M = mech()
    A_M, A_FM, A_MF, b_F, b_M = disc.constrain(A_M, A_FM, A_MF, b_F, b_M)
    return BlockSystem(A_F, A_FM, A_MF, A_M, b_F, b_M)


def equilibrium_displacement(disc: Discretization, h, with_traction: bool = False) -> np.ndarray:
    """Displacement in mechanical equilibrium with head ``h`` (direct solve), shape (N, 3)."""
    mesh = disc.mesh
    A_M = disc.stiffness()
    A_MF = as_csr(-disc.rho_g * disc.alpha_div.T)
    b_M = A_MF @ (mesh.cell_centroids[:, 2] - np.asarray(h))
    if with_traction:
        b_M = b_M + disc.traction
    A_FM = sps.csr_matrix((disc.n_flow, disc.n_mech))
    A_M, _, _, _, b_M = disc.constrain(A_M, A_FM, A_MF, np.zeros(disc.n_flow), b_M)
    u = spla.splu(A_M.tocsc()).solve(b_M)
    return u.reshape(-1, 3)
