"""Off-diagonal blocks linking cell heads and nodal displacements.

The discrete divergence of cell c is ``d_c . u = sum_i g_ci . u_i``, the
boundary integral of u.n for the virtual element trace, exact for linear u.

With ``P = rho_g (h - z)`` the blocks are

* flow rows: ``A_FM = (alpha/dt) d`` and ``b_F += (alpha/dt) d u_prev``;
* mechanics rows: ``A_MF = -alpha rho_g d^T`` and ``b_M += -alpha rho_g sum_c z_c d_c``.

so that ``A_FM = -(1/(dt rho_g)) A_MF^T`` holds for any per-cell alpha.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from .mesh import PolyMesh


def divergence_operator(mesh: PolyMesh) -> sps.csr_matrix:
    """(n_cells, 3 n_nodes) matrix mapping nodal displacements to cell volume change."""
    counts = np.diff(mesh.cell_node_ptr)
    rows = np.repeat(np.repeat(np.arange(mesh.n_cells), counts), 3)
    cols = (3 * mesh.cell_nodes[:, None] + np.arange(3)).ravel()
    D = sps.csr_matrix((mesh.cell_node_vectors.ravel(), (rows, cols)),
                       shape=(mesh.n_cells, 3 * mesh.n_nodes))
    D.sort_indices()
    return D


def coupling_blocks(mesh: PolyMesh, alpha, rho_g: float, dt: float, u_prev,
                    div: sps.csr_matrix | None = None):
    """Return ``(A_FM, A_MF, b_F_extra, b_M_extra)``."""
    D = divergence_operator(mesh) if div is None else div
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (mesh.n_cells,))
    A_FM = (sps.diags(a / dt) @ D).tocsr()
    A_MF = (-rho_g * (sps.diags(a) @ D).T).tocsr()
    b_F = A_FM @ np.ravel(u_prev)
    b_M = A_MF @ mesh.cell_centroids[:, 2]
    A_FM.sort_indices()
    A_MF.sort_indices()
    return A_FM, A_MF, b_F, b_M
