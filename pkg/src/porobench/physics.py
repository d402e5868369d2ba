"""Continuum model data: media, boundary conditions, head/pressure conversion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import BOUNDARY_TAGS, PolyMesh

DEFAULT_RHO_G = 9810.0


class PhysicsError(ValueError):
    pass


def stiffness_from_E_nu(E: float, nu: float) -> np.ndarray:
    """Isotropic 6x6 stiffness in Voigt order (xx, yy, zz, yz, xz, xy).

    Shear rows act on engineering shear strains (gamma = 2 eps_ij), so the
    shear diagonal is the shear modulus.
    """
    if E <= 0:
        raise PhysicsError("Young's modulus must be positive")
    if not -1.0 < nu < 0.5:
        raise PhysicsError("Poisson ratio must lie in (-1, 0.5)")
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[[0, 1, 2], [0, 1, 2]] += 2 * mu
    C[[3, 4, 5], [3, 4, 5]] = mu
    return C


def lame_parameters(E: float, nu: float) -> tuple[float, float]:
    return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


def pressure_from_head(h, z, rho_g=DEFAULT_RHO_G):
    return rho_g * (np.asarray(h) - np.asarray(z))


def conductivity_tensor(values) -> np.ndarray:
    """1 value: isotropic; 3 values: diagonal; 9 values: full (row-major)."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.size == 1:
        return v[0] * np.eye(3)
    if v.size == 3:
        return np.diag(v)
    if v.size == 9:
        return v.reshape(3, 3)
    raise PhysicsError("conductivity needs 1, 3 or 9 values")


@dataclass(frozen=True, eq=False)
class MediaProperties:
    name: str
    K: np.ndarray
    s_stor: float
    stiffness: np.ndarray
    alpha: float = 1.0
    region_id: int = 0
    young: float | None = None
    poisson: float | None = None

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        C = np.asarray(self.stiffness, dtype=float)
        if K.shape != (3, 3) or not np.allclose(K, K.T, rtol=1e-12, atol=0):
            raise PhysicsError(f"media {self.name}: K must be a symmetric 3x3 tensor")
        if np.linalg.eigvalsh(K).min() <= 0:
            raise PhysicsError(f"media {self.name}: K must be positive definite")
        if C.shape != (6, 6) or not np.allclose(C, C.T, rtol=1e-12, atol=0):
            raise PhysicsError(f"media {self.name}: stiffness must be a symmetric 6x6 matrix")
        if np.linalg.eigvalsh(C).min() <= 0:
            raise PhysicsError(f"media {self.name}: stiffness must be positive definite")
        if not 0.0 <= self.alpha <= 1.0:
            raise PhysicsError(f"media {self.name}: alpha must lie in [0, 1]")
        if self.s_stor < 0:
            raise PhysicsError(f"media {self.name}: negative specific storage")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "stiffness", C)

    @classmethod
    def isotropic(cls, name, K, s_stor, E, nu, alpha=1.0, region_id=0):
        return cls(name, conductivity_tensor(K), s_stor, stiffness_from_E_nu(E, nu), alpha, region_id,
                   float(E), float(nu))

    def __eq__(self, other):
        if not isinstance(other, MediaProperties):
            return NotImplemented
        return (self.name == other.name and np.array_equal(self.K, other.K)
                and self.s_stor == other.s_stor and np.array_equal(self.stiffness, other.stiffness)
                and self.alpha == other.alpha)


@dataclass(frozen=True)
class FluidConstants:
    rho_g: float = DEFAULT_RHO_G

    def __post_init__(self):
        if not self.rho_g > 0:
            raise PhysicsError("rho_g must be positive")


# ---- boundary conditions -----------------------------------------------------

FLOW_KINDS = {"head": 1, "flux": 1}
MECH_KINDS = {"displacement": 3, "traction": 3, "roller": 0}

FLUX, HEAD = 0, 1
TRACTION, DISPLACEMENT, ROLLER = 0, 1, 2


@dataclass(frozen=True)
class BCRule:
    """One boundary rule; later rules override earlier ones on the faces they select.

    ``media`` restricts the rule to faces whose cell belongs to that medium;
    ``box`` (x0, y0, z0, x1, y1, z1) to faces whose centroid lies inside.
    """

    tag: str
    kind: str
    value: tuple = ()
    media: str | None = None
    box: tuple | None = None

    def select(self, mesh: PolyMesh, cell_media: np.ndarray, media_names: list[str]) -> np.ndarray:
        faces = mesh.boundary_faces
        sel = mesh.face_tags[faces] == BOUNDARY_TAGS.index(self.tag)
        if self.media is not None:
            sel &= cell_media[mesh.face_cells[faces, 0]] == media_names.index(self.media)
        if self.box is not None:
            lo, hi = np.asarray(self.box[:3]), np.asarray(self.box[3:])
            x = mesh.face_centroids[faces]
            sel &= np.all((x >= lo) & (x <= hi), axis=1)
        return faces[sel]


def _check_rule(rule: BCRule, kinds):
    if rule.tag not in BOUNDARY_TAGS:
        raise PhysicsError(f"unknown boundary tag {rule.tag!r}")
    if rule.kind not in kinds:
        raise PhysicsError(f"unknown condition kind {rule.kind!r} on {rule.tag}")
    if len(rule.value) != kinds[rule.kind]:
        raise PhysicsError(f"{rule.kind} on {rule.tag} needs {kinds[rule.kind]} value(s)")


@dataclass(frozen=True)
class FlowBC:
    """Flow rules; faces not selected by any rule are zero-flux."""

    rules: tuple[BCRule, ...] = ()

    def __post_init__(self):
        for r in self.rules:
            _check_rule(r, FLOW_KINDS)

    def resolve(self, mesh, cell_media, media_names):
        """Per-face arrays ``(kind, value)``; value is head (m) or outward flux (m/s)."""
        kind = np.full(mesh.n_faces, FLUX, dtype=np.int8)
        value = np.zeros(mesh.n_faces)
        for r in self.rules:
            f = r.select(mesh, cell_media, media_names)
            kind[f] = HEAD if r.kind == "head" else FLUX
            value[f] = r.value[0]
        return kind, value


@dataclass(frozen=True)
class MechBC:
    """Mechanics rules; faces not selected by any rule are traction-free."""

    rules: tuple[BCRule, ...] = ()

    def __post_init__(self):
        for r in self.rules:
            _check_rule(r, MECH_KINDS)

    def resolve(self, mesh, cell_media, media_names):
        """Per-face arrays ``(kind, value[3])``."""
        kind = np.full(mesh.n_faces, TRACTION, dtype=np.int8)
        value = np.zeros((mesh.n_faces, 3))
        codes = {"traction": TRACTION, "displacement": DISPLACEMENT, "roller": ROLLER}
        for r in self.rules:
            f = r.select(mesh, cell_media, media_names)
            kind[f] = codes[r.kind]
            value[f] = r.value if r.value else 0.0
        return kind, value


@dataclass(frozen=True, eq=False)
class CellMedia:
    """Media properties broadcast to cells."""

    index: np.ndarray
    media: tuple[MediaProperties, ...]
    K: np.ndarray = field(init=False)
    s_stor: np.ndarray = field(init=False)
    stiffness: np.ndarray = field(init=False)
    alpha: np.ndarray = field(init=False)

    def __post_init__(self):
        idx = np.asarray(self.index)
        set_ = object.__setattr__
        set_(self, "K", np.stack([m.K for m in self.media])[idx])
        set_(self, "s_stor", np.array([m.s_stor for m in self.media])[idx])
        set_(self, "stiffness", np.stack([m.stiffness for m in self.media])[idx])
        set_(self, "alpha", np.array([m.alpha for m in self.media])[idx])

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.media]

    @classmethod
    def uniform(cls, n_cells, medium: MediaProperties):
        return cls(np.zeros(n_cells, dtype=np.int64), (medium,))
