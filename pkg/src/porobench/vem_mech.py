"""Lowest-order nodal virtual elements for linear elasticity.

For a cell with nodes x_1..x_n, volume V and boundary vectors
``g_i = integral over the cell boundary of phi_i n dS`` (see
``PolyMesh.cell_node_vectors``) the projected displacement gradient is
``G = (1/V) sum_i u_i g_i^T``.  The projection onto linear fields is
``Pi u (x_j) = mean(u) + G (x_j - xbar)``, which acts componentwise through the
scalar n x n matrix ``P_ji = 1/n + (x_j - xbar) . g_i / V``.  The local
stiffness is ``V B^T C B + tau (I - P)^T (I - P)`` (expanded over the three
components) with ``tau = trace(V B^T C B) / (3n)``.

Degrees of freedom are node-major: dof ``3*node + component``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import PolyMesh
from .parallel import run_chunks
from .physics import DISPLACEMENT, ROLLER, TRACTION

DEGENERATE_VOLUME = 1e-14


class MechanicsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellProjection:
    nodes: np.ndarray
    P: np.ndarray
    B: np.ndarray
    volume: float
    consistency: np.ndarray
    stabilization: np.ndarray
    tau: float

    @property
    def Pi(self) -> np.ndarray:
        """Projection acting on the 3n nodal displacement vector."""
        return np.kron(self.P, np.eye(3))

    @property
    def stiffness(self) -> np.ndarray:
        return self.consistency + self.stabilization


def strain_operator(g: np.ndarray, vol) -> np.ndarray:
    """Voigt strain operator B (..., 6, 3n) from boundary vectors g (..., n, 3)."""
    g = g / np.asarray(vol)[..., None, None]
    shape = g.shape[:-2]
    n = g.shape[-2]
    B = np.zeros(shape + (6, 3 * n))
    gx, gy, gz = g[..., 0], g[..., 1], g[..., 2]
    B[..., 0, 0::3] = gx
    B[..., 1, 1::3] = gy
    B[..., 2, 2::3] = gz
    B[..., 3, 1::3] = gz
    B[..., 3, 2::3] = gy
    B[..., 4, 0::3] = gz
    B[..., 4, 2::3] = gx
    B[..., 5, 0::3] = gy
    B[..., 5, 1::3] = gx
    return B


def _local_batch(X, g, vol, C):
    """Local stiffness matrices for cells sharing the node count n."""
    k, n = X.shape[:2]
    B = strain_operator(g, vol)
    Kc = vol[:, None, None] * np.matmul(np.matmul(B.transpose(0, 2, 1), C), B)
    dx = X - X.mean(axis=1, keepdims=True)
    P = 1.0 / n + np.einsum("kjd,kid->kji", dx, g) / vol[:, None, None]
    IP = np.eye(n) - P
    S = np.matmul(IP.transpose(0, 2, 1), IP)
    tau = np.trace(Kc, axis1=1, axis2=2) / (3 * n)
    K = Kc.reshape(k, n, 3, n, 3)
    for a in range(3):
        K[:, :, a, :, a] += tau[:, None, None] * S
    return Kc.reshape(k, 3 * n, 3 * n), B, P, tau


def vem_local_stiffness(coords, g, vol, C) -> np.ndarray:
    """Single-cell stiffness from node coordinates (n, 3), boundary vectors (n, 3), volume, 6x6 C."""
    coords = np.asarray(coords, float)
    diam = np.max(np.linalg.norm(coords[:, None] - coords[None], axis=-1))
    if vol < DEGENERATE_VOLUME * diam ** 3:
        raise MechanicsError("degenerate cell")
    K, *_ = _local_batch(coords[None], np.asarray(g)[None], np.array([vol]), np.asarray(C)[None])
    return K[0]


def cell_projection(mesh: PolyMesh, c: int, C) -> CellProjection:
    sl = slice(mesh.cell_node_ptr[c], mesh.cell_node_ptr[c + 1])
    nodes = mesh.cell_nodes[sl]
    X = mesh.nodes[nodes]
    g = mesh.cell_node_vectors[sl]
    vol = mesh.cell_volumes[c]
    n = len(nodes)
    B = strain_operator(g, vol)
    Kc = vol * B.T @ C @ B
    P = 1.0 / n + (X - X.mean(axis=0)) @ g.T / vol
    IP = np.eye(n) - P
    tau = np.trace(Kc) / (3 * n)
    Ks = tau * np.kron(IP.T @ IP, np.eye(3))
    return CellProjection(nodes, P, B, vol, Kc, Ks, tau)


def cell_dofs(nodes: np.ndarray) -> np.ndarray:
    return (3 * np.asarray(nodes)[..., :, None] + np.arange(3)).reshape(*np.shape(nodes)[:-1], -1)


class MechPattern:
    """Symbolic assembly of the nodal stiffness: local entry layout and CSR slots.

    Local matrices are laid out cell by cell in ``values``; ``assemble`` sums
    them into the CSR data array with a fixed order, so results do not depend
    on how the cells were split among workers.
    """

    def __init__(self, mesh: PolyMesh):
        self.mesh = mesh
        counts = np.diff(mesh.cell_node_ptr)
        self.offsets = np.zeros(mesh.n_cells + 1, dtype=np.int64)
        self.offsets[1:] = np.cumsum((3 * counts) ** 2)
        self.groups = {}
        for n in np.unique(counts):
            cells = np.flatnonzero(counts == n)
            nodes = mesh.cell_nodes[mesh.cell_node_ptr[cells][:, None] + np.arange(n)]
            self.groups[int(n)] = (cells, nodes)
        rows = np.empty(self.offsets[-1], dtype=np.int64)
        cols = np.empty(self.offsets[-1], dtype=np.int64)
        for n, (cells, nodes) in self.groups.items():
            dofs = cell_dofs(nodes)
            pos = self.offsets[cells][:, None] + np.arange(9 * n * n)
            rows[pos] = np.repeat(dofs, 3 * n, axis=1)
            cols[pos] = np.tile(dofs, (1, 3 * n))
        ndof = 3 * mesh.n_nodes
        key = rows * ndof + cols
        self.order = np.argsort(key, kind="stable")
        sk = key[self.order]
        first = np.r_[True, sk[1:] != sk[:-1]]
        self.seg = np.flatnonzero(first)
        uk = sk[first]
        self.indices = uk % ndof
        r = uk // ndof
        self.indptr = np.zeros(ndof + 1, dtype=np.int64)
        np.add.at(self.indptr, r + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.shape = (ndof, ndof)

    def local_values(self, C_cells, parts=None) -> np.ndarray:
        """Compute all local stiffness entries; ``parts`` is a list of cell-index chunks."""
        mesh = self.mesh
        values = np.empty(self.offsets[-1])
        if parts is None:
            parts = [np.arange(mesh.n_cells)]

        def work(chunk):
            mask = np.zeros(mesh.n_cells, dtype=bool)
            mask[chunk] = True
            for n, (cells, nodes) in self.groups.items():
                sel = mask[cells]
                cs, ns = cells[sel], nodes[sel]
                if len(cs) == 0:
                    continue
                gpos = mesh.cell_node_ptr[cs][:, None] + np.arange(n)
                K, *_ = _local_batch(mesh.nodes[ns], mesh.cell_node_vectors[gpos],
                                     mesh.cell_volumes[cs], C_cells[cs])
                pos = self.offsets[cs][:, None] + np.arange(9 * n * n)
                values[pos] = K.reshape(len(cs), -1)

        run_chunks(work, parts)
        return values

    def assemble(self, values, parts=None) -> sps.csr_matrix:
        sv = values[self.order]
        nseg = len(self.seg)
        data = np.empty(nseg)
        if parts is None or len(parts) <= 1:
            data[:] = np.add.reduceat(sv, self.seg)
        else:
            bounds = np.linspace(0, nseg, len(parts) + 1).astype(np.int64)
            ends = np.r_[self.seg[1:], len(sv)]

            def work(k):
                a, b = bounds[k], bounds[k + 1]
                if b > a:
                    data[a:b] = np.add.reduceat(sv[self.seg[a]:ends[b - 1]], self.seg[a:b] - self.seg[a])

            run_chunks(work, range(len(parts)))
        return sps.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def mech_stiffness(mesh: PolyMesh, C_cells, parts=None, pattern: MechPattern | None = None) -> sps.csr_matrix:
    """Global nodal stiffness without boundary conditions."""
    pattern = pattern or MechPattern(mesh)
    return pattern.assemble(pattern.local_values(np.asarray(C_cells), parts), parts)


def traction_loads(mesh: PolyMesh, kind: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Consistent nodal loads of the traction faces (using the face node weights)."""
    b = np.zeros(3 * mesh.n_nodes)
    faces = mesh.boundary_faces[kind[mesh.boundary_faces] == TRACTION]
    faces = faces[np.any(value[faces] != 0.0, axis=1)]
    for f in faces:
        sl = slice(mesh.face_ptr[f], mesh.face_ptr[f + 1])
        nodes = mesh.face_nodes[sl]
        w = mesh.face_weights[sl]
        np.add.at(b, (3 * nodes[:, None] + np.arange(3)).ravel(), (w[:, None] * value[f][None, :]).ravel())
    return b


def mech_constraints(mesh: PolyMesh, kind: np.ndarray, value: np.ndarray):
    """Constrained dofs and their values from displacement and roller faces.

    Roller faces must be axis-aligned planes; they fix the normal component.
    Displacement faces fix all three components and win over rollers.
    """
    fixed: dict[int, float] = {}
    bnd = mesh.boundary_faces
    for f in bnd[kind[bnd] == ROLLER]:
        n = mesh.face_normals[f]
        axis = int(np.argmax(np.abs(n)))
        if abs(abs(n[axis]) - 1.0) > 1e-10:
            raise MechanicsError(f"roller face {f} is not an axis-aligned plane")
        for node in mesh.face(f):
            fixed[3 * int(node) + axis] = 0.0
    for f in bnd[kind[bnd] == DISPLACEMENT]:
        for node in mesh.face(f):
            for a in range(3):
                fixed[3 * int(node) + a] = float(value[f, a])
    dofs = np.array(sorted(fixed), dtype=np.int64)
    return dofs, np.array([fixed[d] for d in dofs])


def apply_dirichlet(A: sps.csr_matrix, b: np.ndarray, dofs, values, scale=None):
    """Replace constrained rows by scaled identity rows with their columns moved to the rhs.

    Keeps a symmetric matrix symmetric.  Returns new ``(A, b)``.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    if len(dofs) == 0:
        return A.tocsr(), b.copy()
    n = A.shape[0]
    if scale is None:
        scale = float(np.mean(np.abs(A.diagonal()[dofs]))) or 1.0
    g = np.zeros(n)
    g[dofs] = values
    b = b - A @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    Dk = sps.diags(keep)
    A = (Dk @ A @ Dk).tocsr()
    A.eliminate_zeros()
    diag = np.zeros(n)
    diag[dofs] = scale
    A = (A + sps.diags(diag)).tocsr()
    A.sort_indices()
    b[dofs] = scale * np.asarray(values)
    return A, b


def assemble_mech(mesh: PolyMesh, C_cells, bc, parts=None):
    """Stiffness and load vector with boundary conditions applied; ``bc`` from ``MechBC.resolve``."""
    kind, value = bc
    A = mech_stiffness(mesh, C_cells, parts)
    b = traction_loads(mesh, kind, value)
    dofs, vals = mech_constraints(mesh, kind, value)
    return apply_dirichlet(A, b, dofs, vals)


def cell_strains(mesh: PolyMesh, u: np.ndarray) -> np.ndarray:
    """Projected Voigt strain per cell (engineering shear)."""
    u = np.asarray(u).reshape(-1, 3)
    cid = np.repeat(np.arange(mesh.n_cells), np.diff(mesh.cell_node_ptr))
    # G_ab = (1/V) sum_i u_ia g_ib
    outer = u[mesh.cell_nodes][:, :, None] * mesh.cell_node_vectors[:, None, :]
    G = np.zeros((mesh.n_cells, 3, 3))
    np.add.at(G, cid, outer)
    G /= mesh.cell_volumes[:, None, None]
    return np.stack([G[:, 0, 0], G[:, 1, 1], G[:, 2, 2],
                     G[:, 1, 2] + G[:, 2, 1], G[:, 0, 2] + G[:, 2, 0], G[:, 0, 1] + G[:, 1, 0]], axis=1)


def compute_cell_stress(mesh: PolyMesh, C_cells, u, alpha=None, pressure=None):
    """Total Voigt stress ``C eps(Pi u) - alpha P I`` per cell and its Frobenius norm."""
    eps = cell_strains(mesh, u)
    sig = np.einsum("cij,cj->ci", np.asarray(C_cells), eps)
    if pressure is not None:
        sig[:, :3] -= (np.asarray(alpha) * np.asarray(pressure))[:, None]
    mag = np.sqrt(np.sum(sig[:, :3] ** 2, axis=1) + 2 * np.sum(sig[:, 3:] ** 2, axis=1))
    return sig, mag
