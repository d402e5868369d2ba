"""Cell-centred finite volumes for the storage/Darcy flow equation in head form.

Face fluxes are volumetric rates (m^3/s) along the stored face normal, linear in
cell heads, boundary heads and prescribed boundary fluxes::

    Q = T_cell @ h + T_head @ h_bnd + T_flux @ q_bnd

where ``h_bnd`` and ``q_bnd`` are per-face arrays (only boundary entries matter).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import PolyMesh, face_geometry
from .physics import FLUX, HEAD

TPFA = "tpfa"
MPFA_O = "mpfa_o"


class StencilError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FluxStencil:
    scheme: str
    cell: sps.csr_matrix
    head: sps.csr_matrix
    flux: sps.csr_matrix

    def face_fluxes(self, h, h_bnd=None, q_bnd=None) -> np.ndarray:
        q = self.cell @ h
        if h_bnd is not None:
            q = q + self.head @ h_bnd
        if q_bnd is not None:
            q = q + self.flux @ q_bnd
        return q

    def entries(self, f: int) -> list[tuple[str, int, float]]:
        """Stencil of face ``f`` as ``(slot kind, index, coefficient)`` triples."""
        out = []
        for kind, mat in (("cell", self.cell), ("head", self.head), ("flux", self.flux)):
            row = mat.getrow(f)
            out.extend((kind, int(j), float(v)) for j, v in zip(row.indices, row.data))
        return out


def _csr(rows, cols, vals, shape):
    m = sps.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    m.sum_duplicates()
    return m


def tpfa_stencils(mesh: PolyMesh, K: np.ndarray, bc_kind: np.ndarray) -> FluxStencil:
    """Two-point fluxes with harmonic averaging of one-sided transmissibilities.

    ``K`` is (n_cells, 3, 3); ``bc_kind`` holds per-face HEAD/FLUX codes.
    """
    nf, nc = mesh.n_faces, mesh.n_cells
    n, a, xf = mesh.face_normals, mesh.face_areas, mesh.face_centroids
    c0, c1 = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    knn0 = np.einsum("fi,fij,fj->f", n, K[c0], n)
    d0 = np.einsum("fi,fi->f", xf - mesh.cell_centroids[c0], n)
    _check_distance(d0, c0)
    t0 = knn0 * a / d0
    inner = mesh.interior_faces
    ci = c1[inner]
    d1 = np.einsum("fi,fi->f", mesh.cell_centroids[ci] - xf[inner], n[inner])
    _check_distance(d1, ci)
    t1 = np.einsum("fi,fij,fj->f", n[inner], K[ci], n[inner]) * a[inner] / d1
    t = t0[inner] * t1 / (t0[inner] + t1)
    cell = _csr(np.r_[inner, inner], np.r_[c0[inner], ci], np.r_[t, -t], (nf, nc))
    bnd = mesh.boundary_faces
    dir_ = bnd[bc_kind[bnd] == HEAD]
    neu = bnd[bc_kind[bnd] == FLUX]
    cell = cell + _csr(dir_, c0[dir_], t0[dir_], (nf, nc))
    head = _csr(dir_, dir_, -t0[dir_], (nf, nf))
    flux = _csr(neu, neu, a[neu], (nf, nf))
    return FluxStencil(TPFA, cell.tocsr(), head, flux)


def _check_distance(d, cells):
    bad = np.flatnonzero(d <= 0)
    if len(bad):
        raise StencilError(f"cell {int(cells[bad[0]])} centroid lies on the wrong side of a face")


def mpfa_o_stencils(mesh: PolyMesh, K: np.ndarray, bc_kind: np.ndarray) -> FluxStencil:
    """O-method multipoint fluxes.

    Each vertex's interaction region couples the sub-faces meeting at it.
    Sub-faces between the same pair of cells (or the same cell and boundary
    condition) form one group with a single continuity point, the sub-area
    weighted mean of their face centroids.  Heads are continuous at those points
    and group fluxes are continuous; every cell carries a gradient fitted (by
    least squares when it has more than three groups at the vertex) to its
    centroid head and its continuity values.  Linear head fields are reproduced
    exactly on any admissible mesh.
    """
    nf, nc = mesh.n_faces, mesh.n_cells
    geo = face_geometry(mesh.nodes, mesh.face_ptr, mesh.face_nodes)
    ta = geo["tri_areas"]
    sizes = np.diff(mesh.face_ptr)
    start = mesh.face_ptr[:-1]
    nptr, nfaces, npos = mesh.node_faces
    xc, xf, nrm = mesh.cell_centroids, mesh.face_centroids, mesh.face_normals
    fcells, tags = mesh.face_cells, mesh.face_tags
    out = {"cell": ([], [], []), "head": ([], [], []), "flux": ([], [], [])}

    for v in range(mesh.n_nodes):
        F = nfaces[nptr[v]:nptr[v + 1]]
        pos = npos[nptr[v]:nptr[v + 1]]
        prev = (pos - 1) % sizes[F]
        sub = 0.5 * (ta[start[F] + pos] + ta[start[F] + prev])
        c0, c1 = fcells[F, 0], fcells[F, 1]
        bnd = c1 < 0
        dirichlet = bnd & (bc_kind[F] == HEAD)
        keys = [(min(a, b), max(a, b)) if b >= 0 else (a, -1 - int(t), int(k))
                for a, b, t, k in zip(c0, c1, tags[F], bc_kind[F])]
        group_of = {}
        gid = np.empty(len(F), dtype=np.int64)
        for j, key in enumerate(keys):
            gid[j] = group_of.setdefault(key, len(group_of))
        ng = len(group_of)
        gref = np.array([key[0] for key in group_of])
        # orient every sub-face out of its group's reference cell
        orient = np.where(c0 == gref[gid], 1.0, -1.0)
        avec = (orient * sub)[:, None] * nrm[F]
        garea = np.zeros((ng, 3))
        np.add.at(garea, gid, avec)
        gsub = np.bincount(gid, weights=sub, minlength=ng)
        w = sub / gsub[gid]
        gx = np.zeros((ng, 3))
        np.add.at(gx, gid, w[:, None] * xf[F])
        gdir = np.zeros(ng, dtype=bool)
        gdir[gid[dirichlet]] = True
        gbnd = np.zeros(ng, dtype=bool)
        gbnd[gid[bnd]] = True
        gcells = [(key[0], key[1]) if len(key) == 2 else (key[0],) for key in group_of]

        cells = np.unique(np.r_[c0, c1[c1 >= 0]])
        cloc = {c: i for i, c in enumerate(cells)}
        ncl = len(cells)
        # gradient of each cell as coefficients over [group values | cell values]
        grad = {}
        for c in cells:
            S = np.array([g for g in range(ng) if c in gcells[g]])
            D = gx[S] - xc[c]
            if len(S) < 3 or np.linalg.matrix_rank(D) < 3:
                raise StencilError(f"degenerate interaction region at vertex {v} (cell {c})")
            G = np.linalg.pinv(D)
            M = np.zeros((3, ng + ncl))
            M[:, S] = G
            M[:, ng + cloc[c]] = -G.sum(axis=1)
            grad[c] = M

        def outflow(a, c):
            # flux along area vector a computed from cell c's gradient
            return -(a @ K[c]) @ grad[c]

        unknown = np.flatnonzero(~gdir)
        known = np.flatnonzero(gdir)
        E = np.zeros((len(unknown), ng + ncl))
        Eq = np.zeros((len(unknown), len(F)))
        for r, g in enumerate(unknown):
            if gbnd[g]:
                E[r] = outflow(garea[g], gcells[g][0])
                members = np.flatnonzero(gid == g)
                Eq[r, members] = -sub[members]
            else:
                E[r] = outflow(garea[g], gcells[g][0]) - outflow(garea[g], gcells[g][1])
        if len(unknown):
            EU = E[:, unknown]
            if np.linalg.cond(EU) > 1e13:
                raise StencilError(f"singular interaction system at vertex {v}")
            inv = np.linalg.solve(EU, -np.eye(len(unknown)))
            XD = inv @ E[:, known]
            XC = inv @ E[:, ng:]
            XQ = inv @ Eq
        # Dirichlet group values are sub-area weighted face heads
        WD = np.zeros((len(known), len(F)))
        for r, g in enumerate(known):
            members = np.flatnonzero(gid == g)
            WD[r, members] = w[members]

        for j in range(len(F)):
            g = gid[j]
            row = np.mean([outflow(avec[j], c) for c in gcells[g]], axis=0) * orient[j]
            tc = row[ng:].copy()
            th = row[known] @ WD
            tq = np.zeros(len(F))
            if len(unknown):
                ru = row[unknown]
                tc += ru @ XC
                th += (ru @ XD) @ WD
                tq += ru @ XQ
            f = F[j]
            for name, idx, coef in (("cell", cells, tc), ("head", F, th), ("flux", F, tq)):
                nz = np.flatnonzero(coef)
                r_, c_, v_ = out[name]
                r_.extend([f] * len(nz))
                c_.extend(idx[nz])
                v_.extend(coef[nz])

    cell = _csr(*out["cell"], (nf, nc))
    head = _csr(*out["head"], (nf, nf))
    flux = _csr(*out["flux"], (nf, nf))
    return FluxStencil(MPFA_O, cell, head, flux)


def flux_stencils(mesh, K, bc_kind, scheme=TPFA) -> FluxStencil:
    if scheme == TPFA:
        return tpfa_stencils(mesh, K, bc_kind)
    if scheme == MPFA_O:
        return mpfa_o_stencils(mesh, K, bc_kind)
    raise ValueError(f"unknown flux scheme {scheme!r}")


def cell_face_incidence(mesh: PolyMesh) -> sps.csr_matrix:
    """Signed (n_cells, n_faces) incidence: +1 where the face normal points out of the cell."""
    cid = np.repeat(np.arange(mesh.n_cells), np.diff(mesh.cell_ptr))
    return sps.csr_matrix(
        (mesh.cell_signs.astype(float), (cid, mesh.cell_faces)), shape=(mesh.n_cells, mesh.n_faces)
    )


def boundary_data(bc_kind, bc_value):
    h_bnd = np.where(bc_kind == HEAD, bc_value, 0.0)
    q_bnd = np.where(bc_kind == FLUX, bc_value, 0.0)
    return h_bnd, q_bnd


def assemble_flow(mesh, stencil, s_stor, bc, dt, h_prev, source=None):
    """Backward-Euler flow rows without the deformation coupling.

    Row c reads ``(s V/dt) h_c + sum_f sign Q_f(h) = Q_c V + (s V/dt) h_prev_c``
    with boundary contributions moved to the right-hand side.  ``bc`` is the
    per-face ``(kind, value)`` pair from ``FlowBC.resolve``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    div = cell_face_incidence(mesh)
    vol = mesh.cell_volumes
    store = np.asarray(s_stor) * vol / dt
    A = (sps.diags(store) + div @ stencil.cell).tocsr()
    h_bnd, q_bnd = boundary_data(*bc)
    b = store * h_prev - div @ (stencil.head @ h_bnd + stencil.flux @ q_bnd)
    if source is not None:
        b = b + np.asarray(source) * vol
    A.sort_indices()
    return A, b
