"""Polyhedral meshes: storage, structured generators, geometry, ordering and partitioning.

Faces are stored once and shared by their (at most two) cells.  A face's stored
node cycle defines its unit normal; ``cell_signs`` records whether that normal
points out of (+1) or into (-1) each cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import reverse_cuthill_mckee

BOUNDARY_TAGS = ("x-", "x+", "y-", "y+", "z-", "z+", "other")
OTHER_TAG = 6

VTK_TETRA = 10
VTK_HEXAHEDRON = 12
VTK_WEDGE = 13

PLANARITY_TOL = 1e-10


class MeshError(ValueError):
    """Raised for invalid mesh input or geometry."""


def _csr(lists):
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    flat = np.fromiter((v for x in lists for v in x), dtype=np.int64, count=ptr[-1])
    return ptr, flat


def _segments(ptr, ids):
    """Flat positions of the CSR segments ``ids`` and the owning segment of each."""
    counts = ptr[ids + 1] - ptr[ids]
    owner = np.repeat(np.arange(len(ids)), counts)
    start = np.repeat(ptr[ids] - np.cumsum(counts) + counts, counts)
    return start + np.arange(counts.sum()), owner


def face_geometry(nodes, face_ptr, face_nodes):
    """Fan-triangulated face geometry about the arithmetic node mean.

    Returns a dict with per-face ``centroids``, ``areas``, ``normals``,
    ``planarity`` (max off-plane distance over face diameter), and per face-node
    ``weights`` (exact integrals of the nodal hat functions of the fan
    triangulation, so that sum_i w_i f(x_i) integrates linear f exactly),
    ``tri_vectors`` and ``tri_areas`` of the triangle (mean, v_i, v_i+1).
    """
    nf = len(face_ptr) - 1
    sizes = np.diff(face_ptr)
    centroids = np.empty((nf, 3))
    normals = np.empty((nf, 3))
    areas = np.empty(nf)
    planarity = np.empty(nf)
    means = np.empty((nf, 3))
    weights = np.empty(len(face_nodes))
    tri_vectors = np.empty((len(face_nodes), 3))
    tri_areas = np.empty(len(face_nodes))
    for m in np.unique(sizes):
        if m < 3:
            raise MeshError("faces need at least 3 nodes")
        fids = np.flatnonzero(sizes == m)
        pos = face_ptr[fids][:, None] + np.arange(m)
        x = nodes[face_nodes[pos]]
        xbar = x.mean(axis=1)
        xn = np.roll(x, -1, axis=1)
        tri = 0.5 * np.cross(x - xbar[:, None], xn - xbar[:, None])
        avec = tri.sum(axis=1)
        area = np.linalg.norm(avec, axis=1)
        if np.any(area <= 0.0):
            bad = fids[np.flatnonzero(area <= 0.0)[0]]
            raise MeshError(f"face {bad} has zero area")
        n = avec / area[:, None]
        ta = np.einsum("kmi,ki->km", tri, n)
        tc = (xbar[:, None] + x + xn) / 3.0
        c = np.einsum("km,kmi->ki", ta, tc) / ta.sum(axis=1)[:, None]
        diam = np.max(np.linalg.norm(x[:, :, None] - x[:, None, :], axis=-1), axis=(1, 2))
        off = np.abs(np.einsum("kmi,ki->km", x - c[:, None], n)).max(axis=1)
        centroids[fids] = c
        normals[fids] = n
        areas[fids] = area
        means[fids] = xbar
        planarity[fids] = off / diam
        weights[pos] = (area[:, None] / m + ta + np.roll(ta, 1, axis=1)) / 3.0
        tri_vectors[pos] = tri
        tri_areas[pos] = ta
    return dict(
        centroids=centroids,
        normals=normals,
        areas=areas,
        means=means,
        planarity=planarity,
        weights=weights,
        tri_vectors=tri_vectors,
        tri_areas=tri_areas,
    )


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Immutable polyhedral mesh with precomputed geometry.

    Face ``f`` has nodes ``face_nodes[face_ptr[f]:face_ptr[f+1]]`` in cyclic
    order; ``face_cells[f] = (c0, c1)`` with ``c1 = -1`` on the boundary.  The
    face normal points out of ``c0``.  ``face_tags`` indexes ``BOUNDARY_TAGS``
    (-1 for interior faces).
    """

    nodes: np.ndarray
    face_ptr: np.ndarray
    face_nodes: np.ndarray
    face_cells: np.ndarray
    face_tags: np.ndarray
    cell_ptr: np.ndarray
    cell_faces: np.ndarray
    cell_signs: np.ndarray
    vtk_types: np.ndarray
    vtk_ptr: np.ndarray
    vtk_nodes: np.ndarray
    face_centroids: np.ndarray = field(init=False)
    face_areas: np.ndarray = field(init=False)
    face_normals: np.ndarray = field(init=False)
    face_weights: np.ndarray = field(init=False)
    face_planarity: np.ndarray = field(init=False)
    cell_node_ptr: np.ndarray = field(init=False)
    cell_nodes: np.ndarray = field(init=False)
    cell_volumes: np.ndarray = field(init=False)
    cell_centroids: np.ndarray = field(init=False)
    cell_node_vectors: np.ndarray = field(init=False)

    def __post_init__(self):
        set_ = object.__setattr__
        geo = face_geometry(self.nodes, self.face_ptr, self.face_nodes)
        set_(self, "face_centroids", geo["centroids"])
        set_(self, "face_areas", geo["areas"])
        set_(self, "face_normals", geo["normals"])
        set_(self, "face_weights", geo["weights"])
        set_(self, "face_planarity", geo["planarity"])
        self._cell_geometry(geo)
        for name in self.__dataclass_fields__:
            arr = getattr(self, name)
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    def _cell_geometry(self, geo):
        set_ = object.__setattr__
        nc, nn = self.n_cells, self.n_nodes
        inc_cell = np.repeat(np.arange(nc), np.diff(self.cell_ptr))
        inc_face = self.cell_faces
        inc_sign = self.cell_signs.astype(float)
        # expand cell-face incidences over the face nodes
        pos, owner = _segments(self.face_ptr, inc_face)
        fn_cell = inc_cell[owner]
        fn_node = self.face_nodes[pos]
        keys = np.unique(fn_cell * nn + fn_node)
        cell_of_key = keys // nn
        node_ptr = np.zeros(nc + 1, dtype=np.int64)
        np.add.at(node_ptr, cell_of_key + 1, 1)
        node_ptr = np.cumsum(node_ptr)
        cell_nodes = keys % nn
        set_(self, "cell_node_ptr", node_ptr)
        set_(self, "cell_nodes", cell_nodes)

        xr = np.add.reduceat(self.nodes[cell_nodes], node_ptr[:-1], axis=0)
        xr /= np.diff(node_ptr)[:, None]
        # tetrahedra (x_ref, face mean, v_i, v_i+1)
        sgn = inc_sign[owner]
        tri = geo["tri_vectors"][pos] * sgn[:, None]
        fmean = geo["means"][inc_face][owner]
        xi = self.nodes[fn_node]
        nxt = self._next_in_face()[pos]
        xj = self.nodes[nxt]
        ref = xr[fn_cell]
        tv = np.einsum("ki,ki->k", tri, fmean - ref) / 3.0
        tcen = (ref + fmean + xi + xj) / 4.0
        vol = np.bincount(fn_cell, weights=tv, minlength=nc)
        cen = np.stack([np.bincount(fn_cell, weights=tv * tcen[:, d], minlength=nc) for d in range(3)], axis=1)
        if np.any(vol <= 0.0):
            bad = int(np.flatnonzero(vol <= 0.0)[0])
            raise MeshError(f"cell {bad} has non-positive volume {vol[bad]:.3e}")
        set_(self, "cell_volumes", vol)
        set_(self, "cell_centroids", cen / vol[:, None])

        # boundary integrals of nodal hat functions times the outward normal
        contrib = (sgn * self.face_weights[pos])[:, None] * self.face_normals[inc_face][owner]
        slot = np.searchsorted(keys, fn_cell * nn + fn_node)
        vecs = np.zeros((len(keys), 3))
        np.add.at(vecs, slot, contrib)
        set_(self, "cell_node_vectors", vecs)

    def _next_in_face(self):
        nxt = np.empty_like(self.face_nodes)
        sizes = np.diff(self.face_ptr)
        idx = np.arange(len(self.face_nodes))
        local = idx - np.repeat(self.face_ptr[:-1], sizes)
        wrap = np.repeat(self.face_ptr[:-1], sizes) + (local + 1) % np.repeat(sizes, sizes)
        nxt[:] = self.face_nodes[wrap]
        return nxt

    # ---- sizes -------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_faces(self) -> int:
        return len(self.face_ptr) - 1

    @property
    def n_cells(self) -> int:
        return len(self.cell_ptr) - 1

    # ---- accessors ---------------------------------------------------------
    def face(self, f: int) -> np.ndarray:
        return self.face_nodes[self.face_ptr[f]:self.face_ptr[f + 1]]

    def faces_of(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(self.cell_ptr[c], self.cell_ptr[c + 1])
        return self.cell_faces[sl], self.cell_signs[sl]

    def nodes_of(self, c: int) -> np.ndarray:
        return self.cell_nodes[self.cell_node_ptr[c]:self.cell_node_ptr[c + 1]]

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    @cached_property
    def node_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Node to cell adjacency as CSR ``(ptr, cells)``."""
        m = sps.csr_matrix(
            (np.ones(len(self.cell_nodes)),
             (self.cell_nodes, np.repeat(np.arange(self.n_cells), np.diff(self.cell_node_ptr)))),
            shape=(self.n_nodes, self.n_cells),
        )
        m.sort_indices()
        return m.indptr.astype(np.int64), m.indices.astype(np.int64)

    @cached_property
    def node_faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node to face adjacency ``(ptr, faces, position of node in face)``."""
        sizes = np.diff(self.face_ptr)
        fid = np.repeat(np.arange(self.n_faces), sizes)
        local = np.arange(len(self.face_nodes)) - np.repeat(self.face_ptr[:-1], sizes)
        order = np.lexsort((fid, self.face_nodes))
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(np.bincount(self.face_nodes, minlength=self.n_nodes))
        return ptr, fid[order], local[order]

    @cached_property
    def cell_adjacency(self) -> sps.csr_matrix:
        """Symmetric cell graph with an edge for every shared face."""
        f = self.interior_faces
        a, b = self.face_cells[f, 0], self.face_cells[f, 1]
        g = sps.coo_matrix(
            (np.ones(2 * len(f)), (np.r_[a, b], np.r_[b, a])), shape=(self.n_cells, self.n_cells)
        ).tocsr()
        g.data[:] = 1.0
        return g

    def cell_diameters(self) -> np.ndarray:
        x = self.nodes[self.cell_nodes]
        cid = np.repeat(np.arange(self.n_cells), np.diff(self.cell_node_ptr))
        lo = np.full((self.n_cells, 3), np.inf)
        hi = np.full((self.n_cells, 3), -np.inf)
        np.minimum.at(lo, cid, x)
        np.maximum.at(hi, cid, x)
        return np.linalg.norm(hi - lo, axis=1)

    def closedness(self) -> np.ndarray:
        """Per cell |sum of signed face area vectors| divided by cell surface area."""
        cid = np.repeat(np.arange(self.n_cells), np.diff(self.cell_ptr))
        avec = (self.cell_signs * self.face_areas[self.cell_faces])[:, None] * self.face_normals[self.cell_faces]
        s = np.stack([np.bincount(cid, weights=avec[:, d], minlength=self.n_cells) for d in range(3)], axis=1)
        surf = np.bincount(cid, weights=self.face_areas[self.cell_faces], minlength=self.n_cells)
        return np.linalg.norm(s, axis=1) / surf

    def check(self) -> list[str]:
        """Return a list of violated mesh invariants (empty when valid)."""
        problems = []
        if np.any(np.diff(self.face_ptr) < 3):
            problems.append("face with fewer than 3 nodes")
        bad = np.flatnonzero(self.face_planarity > PLANARITY_TOL)
        if len(bad):
            problems.append(f"{len(bad)} non-planar faces (first {bad[0]})")
        if np.any(self.cell_volumes <= 0):
            problems.append("non-positive cell volume")
        cl = self.closedness()
        if np.any(cl > 1e-12):
            problems.append(f"cell {int(np.argmax(cl))} not closed ({cl.max():.2e})")
        count = np.bincount(self.cell_faces, minlength=self.n_faces)
        expect = np.where(self.face_cells[:, 1] >= 0, 2, 1)
        if np.any(count != expect):
            problems.append("face shared by the wrong number of cells")
        if np.any((self.face_tags >= 0) != (self.face_cells[:, 1] < 0)):
            problems.append("boundary tags inconsistent with face cells")
        return problems


def face_key(nodes) -> tuple:
    return tuple(sorted(nodes))


def mesh_from_cells(nodes, cells, vtk_types, vtk_cells, tag_faces=True) -> PolyMesh:
    """Build a mesh from per-cell outward-oriented face node cycles.

    ``cells[c]`` is a list of node cycles, each oriented so that the right-hand
    normal points out of cell ``c``.  Shared faces are deduplicated by node set.
    Boundary faces are tagged by the bounding-box plane they lie on, or
    ``"other"`` when they lie on none.
    """
    nodes = np.asarray(nodes, dtype=float)
    index: dict[tuple, int] = {}
    face_list: list = []
    face_cells: list = []
    cell_faces: list = []
    cell_signs: list = []
    for c, faces in enumerate(cells):
        fl, sl = [], []
        for cyc in faces:
            key = face_key(cyc)
            f = index.get(key)
            if f is None:
                f = len(face_list)
                index[key] = f
                face_list.append(tuple(cyc))
                face_cells.append([c, -1])
                sl.append(1)
            else:
                if face_cells[f][1] >= 0:
                    raise MeshError(f"face {cyc} shared by more than two cells")
                face_cells[f][1] = c
                sl.append(-1)
            fl.append(f)
        cell_faces.append(fl)
        cell_signs.append(sl)
    face_ptr, face_nodes = _csr(face_list)
    cell_ptr, cf = _csr(cell_faces)
    cs = np.fromiter((s for x in cell_signs for s in x), dtype=np.int8, count=len(cf))
    fc = np.asarray(face_cells, dtype=np.int64)
    vtk_ptr, vtk_nodes = _csr(vtk_cells)
    tags = np.full(len(face_list), -1, dtype=np.int8)
    if tag_faces:
        tags = _tag_boundary(nodes, face_ptr, face_nodes, fc)
    return PolyMesh(
        nodes=nodes,
        face_ptr=face_ptr,
        face_nodes=face_nodes,
        face_cells=fc,
        face_tags=tags,
        cell_ptr=cell_ptr,
        cell_faces=cf,
        cell_signs=cs,
        vtk_types=np.asarray(vtk_types, dtype=np.int8),
        vtk_ptr=vtk_ptr,
        vtk_nodes=vtk_nodes,
    )


def _tag_boundary(nodes, face_ptr, face_nodes, face_cells):
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    tol = 1e-9 * np.max(hi - lo)
    tags = np.full(len(face_cells), -1, dtype=np.int8)
    for f in np.flatnonzero(face_cells[:, 1] < 0):
        x = nodes[face_nodes[face_ptr[f]:face_ptr[f + 1]]]
        for d in range(3):
            if np.all(np.abs(x[:, d] - lo[d]) <= tol):
                tags[f] = 2 * d
                break
            if np.all(np.abs(x[:, d] - hi[d]) <= tol):
                tags[f] = 2 * d + 1
                break
        else:
            tags[f] = OTHER_TAG
    return tags


# ---- generators -------------------------------------------------------------

def _levels(n, lo, hi, levels):
    if levels is not None:
        lv = np.asarray(levels, dtype=float)
        if len(lv) != n + 1 or np.any(np.diff(lv) <= 0):
            raise MeshError("coordinate levels must be strictly increasing with n+1 entries")
        return lv
    return np.linspace(lo, hi, n + 1)


def build_structured_hex(nx, ny, nz, extents=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
                         x_levels=None, y_levels=None, z_levels=None) -> PolyMesh:
    """Hexahedral box mesh with ``nx*ny*nz`` cells.

    ``extents`` is ``(lower corner, upper corner)``.  Optional level arrays
    replace the uniform spacing along an axis.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError("cell counts must be at least 1")
    lo, hi = np.asarray(extents[0], float), np.asarray(extents[1], float)
    if np.any(hi - lo <= 0):
        raise MeshError("degenerate extents")
    xs = _levels(nx, lo[0], hi[0], x_levels)
    ys = _levels(ny, lo[1], hi[1], y_levels)
    zs = _levels(nz, lo[2], hi[2], z_levels)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    cells, vtk = [], []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                n000, n100 = nid(i, j, k), nid(i + 1, j, k)
                n010, n110 = nid(i, j + 1, k), nid(i + 1, j + 1, k)
                n001, n101 = nid(i, j, k + 1), nid(i + 1, j, k + 1)
                n011, n111 = nid(i, j + 1, k + 1), nid(i + 1, j + 1, k + 1)
                cells.append([
                    (n000, n001, n011, n010),
                    (n100, n110, n111, n101),
                    (n000, n100, n101, n001),
                    (n010, n011, n111, n110),
                    (n000, n010, n110, n100),
                    (n001, n101, n111, n011),
                ])
                vtk.append((n000, n100, n110, n010, n001, n101, n111, n011))
    return mesh_from_cells(nodes, cells, [VTK_HEXAHEDRON] * len(cells), vtk)


def square_triangulation(nx, ny, extents=((0.0, 0.0), (1.0, 1.0))):
    """Split an ``nx`` by ``ny`` grid of rectangles into counter-clockwise triangles."""
    lo, hi = extents
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(order="F"), Y.ravel(order="F")], axis=1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = i + (nx + 1) * j
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            tris.append((a, b, c))
            tris.append((a, c, d))
    return pts, np.asarray(tris)


def build_prismatic(tri_nodes, triangles, z_levels) -> PolyMesh:
    """Extrude a 2D triangulation through ``z_levels`` into triangular prisms."""
    pts = np.asarray(tri_nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    z = np.asarray(z_levels, dtype=float)
    if len(z) < 2:
        raise MeshError("need at least 2 z levels")
    if np.any(np.diff(z) <= 0):
        raise MeshError("z levels must be strictly increasing")
    if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
        raise MeshError("triangles must be node triples")
    p = pts[tris]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    if np.any(signed <= 0):
        raise MeshError(f"triangle {int(np.flatnonzero(signed <= 0)[0])} is inverted or degenerate")
    npl = len(pts)
    nodes = np.concatenate([np.column_stack([pts, np.full(npl, zk)]) for zk in z])
    cells, vtk = [], []
    for k in range(len(z) - 1):
        lo_, up = k * npl, (k + 1) * npl
        for a, b, c in tris:
            A, B, C = a + lo_, b + lo_, c + lo_
            A2, B2, C2 = a + up, b + up, c + up
            cells.append([
                (A, C, B),
                (A2, B2, C2),
                (A, B, B2, A2),
                (B, C, C2, B2),
                (C, A, A2, C2),
            ])
            vtk.append((A, C, B, A2, C2, B2))
    return mesh_from_cells(nodes, cells, [VTK_WEDGE] * len(cells), vtk)


def _cell_cycles(mesh: PolyMesh):
    """Per-cell outward face cycles of an existing mesh."""
    out = []
    for c in range(mesh.n_cells):
        faces, signs = mesh.faces_of(c)
        out.append([tuple(mesh.face(f)) if s > 0 else tuple(mesh.face(f)[::-1])
                    for f, s in zip(faces, signs)])
    return out


def perturb_nodes(mesh: PolyMesh, amplitude: float, seed: int = 0) -> PolyMesh:
    """Randomly displace nodes by up to ``amplitude`` times their shortest incident edge.

    Boundary nodes stay inside every bounding-box plane they lie on.  Faces that
    end up non-planar are fan-triangulated from their first node, identically
    for both cells that share them.
    """
    if not 0.0 <= amplitude < 0.3:
        raise MeshError("amplitude must lie in [0, 0.3)")
    if amplitude == 0.0:
        return mesh
    rng = np.random.default_rng(seed)
    x = mesh.nodes
    a = mesh.face_nodes
    b = mesh._next_in_face()
    elen = np.linalg.norm(x[a] - x[b], axis=1)
    hmin = np.full(mesh.n_nodes, np.inf)
    np.minimum.at(hmin, a, elen)
    np.minimum.at(hmin, b, elen)
    direction = rng.normal(size=(mesh.n_nodes, 3))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    radius = rng.uniform(size=mesh.n_nodes) ** (1.0 / 3.0)
    disp = (amplitude * hmin * radius)[:, None] * direction
    lo, hi = mesh.bounding_box
    tol = 1e-9 * np.max(hi - lo)
    on_plane = (np.abs(x - lo) <= tol) | (np.abs(x - hi) <= tol)
    disp[on_plane] = 0.0
    new_nodes = x + disp

    geo = face_geometry(new_nodes, mesh.face_ptr, mesh.face_nodes)
    split = geo["planarity"] > PLANARITY_TOL
    cells = []
    for c in range(mesh.n_cells):
        faces, signs = mesh.faces_of(c)
        cyc = []
        for f, s in zip(faces, signs):
            fn = tuple(mesh.face(f))
            pieces = [fn] if not split[f] else [(fn[0], fn[i], fn[i + 1]) for i in range(1, len(fn) - 1)]
            cyc.extend(p if s > 0 else p[::-1] for p in pieces)
        cells.append(cyc)
    vtk = [tuple(mesh.vtk_nodes[mesh.vtk_ptr[c]:mesh.vtk_ptr[c + 1]]) for c in range(mesh.n_cells)]
    try:
        out = mesh_from_cells(new_nodes, cells, mesh.vtk_types, vtk, tag_faces=False)
    except MeshError as exc:
        raise MeshError(f"perturbation with amplitude {amplitude} rejected: {exc}") from None
    # boundary faces keep their tag, split pieces inherit it
    tags = np.full(out.n_faces, -1, dtype=np.int8)
    old = {face_key(mesh.face(f)): mesh.face_tags[f] for f in mesh.boundary_faces}
    for f in out.boundary_faces:
        key = face_key(out.face(f))
        if key in old:
            tags[f] = old[key]
    missing = out.boundary_faces[tags[out.boundary_faces] < 0]
    if len(missing):
        tags[missing] = _tag_boundary(out.nodes, out.face_ptr, out.face_nodes, out.face_cells)[missing]
    object.__setattr__(out, "face_tags", tags)
    tags.setflags(write=False)
    return out


# ---- ordering and partitioning ---------------------------------------------

def bandwidth(adjacency, perm=None) -> int:
    """Half bandwidth max |p(i) - p(j)| over edges, under the ordering ``perm``."""
    a = sps.coo_matrix(adjacency)
    if a.nnz == 0:
        return 0
    if perm is None:
        return int(np.max(np.abs(a.row - a.col)))
    pos = np.empty(len(perm), dtype=np.int64)
    pos[np.asarray(perm)] = np.arange(len(perm))
    return int(np.max(np.abs(pos[a.row] - pos[a.col])))


def rcm_order(adjacency) -> np.ndarray:
    """Reverse Cuthill-McKee permutation: ``perm[k]`` is the k-th vertex in the new order."""
    a = sps.csr_matrix(adjacency)
    if a.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return reverse_cuthill_mckee(a, symmetric_mode=True).astype(np.int64)


@dataclass(frozen=True)
class Partition:
    cell_part: np.ndarray
    node_owner: np.ndarray
    nparts: int
    order: np.ndarray
    empty_parts: tuple[int, ...] = ()

    def cells_of(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.cell_part == p)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.cell_part, minlength=self.nparts)


def partition_contiguous(mesh: PolyMesh, nparts: int) -> Partition:
    """Chunk the RCM-ordered cells into ``nparts`` contiguous, balanced ranges."""
    if nparts < 1:
        raise ValueError("nparts must be at least 1")
    order = rcm_order(mesh.cell_adjacency)
    labels = np.empty(mesh.n_cells, dtype=np.int64)
    for p, chunk in enumerate(np.array_split(order, nparts)):
        labels[chunk] = p
    ptr, cells = mesh.node_cells
    owner = np.minimum.reduceat(labels[cells], ptr[:-1])
    empty = tuple(range(mesh.n_cells, nparts)) if nparts > mesh.n_cells else ()
    return Partition(labels, owner, nparts, order, empty)
