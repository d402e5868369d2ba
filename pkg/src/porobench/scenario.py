"""Scenario definition, the line-oriented scenario file format, and built-in cases.

File layout (``#`` starts a comment, keys are lowercase)::

    name = problem_a                      # optional, before any section
    [mesh]
    generator = prism                     # hex | prism
    cells = 12 12 12                      # nx ny nz (prism: nx x ny squares, 2 triangles each)
    extents = 0 0 0 900 900 900
    z_levels = 0 80 160 ...               # optional, overrides uniform layering
    perturb = 0.0                         # node perturbation amplitude (hex only)
    seed = 0
    flux_scheme = mpfa_o                  # tpfa | mpfa_o
    [media aquifer]
    k = 1.5e-10                           # 1, 3 or 9 values (m/s)
    s_stor = 8.20116e-7                   # 1/m
    young = 1.44e10                       # Pa
    poisson = 0.2
    alpha = 1.0
    [regions]                             # ordered; later rules override
    fill = all
    aquifer = box 0 0 400 900 900 500
    fault = slab 450 450 80 50            # x0 z0 dip(deg) thickness, strike along y
    [bc.flow]                             # ordered; later rules override
    x- = flux 0
    x- = head 10193.7 media=aquifer box=0,0,0,900,450,900
    [bc.mech]
    z+ = traction 0 0 0
    x- = roller
    [time]
    initial_head = 305.81
    total_time = 4e9
    steps = 4
    equilibrate = true
    [solver]
    strategy = monolithic
    rel_tol = 1e-9 ...
    [split]
    eps_rel = 1e-6 ...
    [fluid]
    rho_g = 9810

Every boundary tag of the box must appear in both BC sections with at least
one unrestricted rule.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .linalg import SolverConfig
from .strategies import SplitConfig
from .mesh import (BOUNDARY_TAGS, PolyMesh, build_prismatic, build_structured_hex, perturb_nodes,
                   square_triangulation)
from .physics import (BCRule, CellMedia, FlowBC, FluidConstants, MechBC, MediaProperties,
                      PhysicsError, conductivity_tensor, stiffness_from_E_nu)

STRATEGIES = ("monolithic", "fixed_strain")
BOX_TAGS = BOUNDARY_TAGS[:6]


class ScenarioError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class MeshSpec:
    generator: str = "hex"
    cells: tuple = (4, 4, 4)
    extents: tuple = (0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
    z_levels: tuple | None = None
    perturb: float = 0.0
    seed: int = 0
    flux_scheme: str = "tpfa"

    def build(self) -> PolyMesh:
        nx, ny, nz = self.cells
        lo, hi = self.extents[:3], self.extents[3:]
        z = None if self.z_levels is None else np.asarray(self.z_levels, dtype=float)
        if self.generator == "hex":
            mesh = build_structured_hex(nx, ny, nz, (lo, hi), z_levels=z)
            return perturb_nodes(mesh, self.perturb, self.seed) if self.perturb else mesh
        if self.generator == "prism":
            if self.perturb:
                raise ScenarioError("perturbation is only supported for hex meshes")
            pts, tris = square_triangulation(nx, ny, ((lo[0], lo[1]), (hi[0], hi[1])))
            if z is None:
                z = np.linspace(lo[2], hi[2], nz + 1)
            return build_prismatic(pts, tris, z)
        raise ScenarioError(f"unknown mesh generator {self.generator!r}")


@dataclass(frozen=True)
class RegionRule:
    media: str
    kind: str  # all | box | slab
    params: tuple = ()

    def select(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "all":
            return np.ones(len(x), dtype=bool)
        if self.kind == "box":
            lo, hi = np.asarray(self.params[:3]), np.asarray(self.params[3:])
            return np.all((x >= lo) & (x <= hi), axis=1)
        x0, z0, dip, thick = self.params
        th = math.radians(dip)
        dist = np.abs(-(x[:, 0] - x0) * math.sin(th) + (x[:, 2] - z0) * math.cos(th))
        return dist <= 0.5 * thick


@dataclass(frozen=True, eq=False)
class Scenario:
    mesh: MeshSpec
    media: tuple
    regions: tuple
    flow_bc: FlowBC
    mech_bc: MechBC
    initial_head: float
    total_time: float
    n_steps: int
    name: str = "scenario"
    strategy: str = "monolithic"
    solver: SolverConfig = field(default_factory=SolverConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    fluid: FluidConstants = field(default_factory=FluidConstants)
    equilibrate: bool = True

    def __post_init__(self):
        if self.n_steps < 1:
            raise ScenarioError("steps must be at least 1")
        if not self.total_time > 0:
            raise ScenarioError("total_time must be positive")
        if self.strategy not in STRATEGIES:
            raise ScenarioError(f"unknown strategy {self.strategy!r}")
        names = [m.name for m in self.media]
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate media name")
        for r in self.regions:
            if r.media not in names:
                raise ScenarioError(f"region refers to undefined media {r.media!r}")
        for rule in self.flow_bc.rules + self.mech_bc.rules:
            if rule.media is not None and rule.media not in names:
                raise ScenarioError(f"boundary rule refers to undefined media {rule.media!r}")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps

    @property
    def media_names(self) -> list[str]:
        return [m.name for m in self.media]

    def assign_regions(self, mesh: PolyMesh) -> np.ndarray:
        idx = np.full(mesh.n_cells, -1, dtype=np.int64)
        names = self.media_names
        for r in self.regions:
            idx[r.select(mesh.cell_centroids)] = names.index(r.media)
        if np.any(idx < 0):
            raise ScenarioError(f"{int(np.sum(idx < 0))} cells are not covered by any region")
        return idx

    def cell_media(self, mesh: PolyMesh) -> CellMedia:
        return CellMedia(self.assign_regions(mesh), tuple(self.media))

    def with_(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def equivalent(self, other: "Scenario") -> bool:
        return all(getattr(self, f.name) == getattr(other, f.name) for f in fields(self))


# ---- parsing -----------------------------------------------------------------

_SECTIONS = ("mesh", "media", "regions", "bc.flow", "bc.mech", "time", "solver", "split", "fluid")
_REQUIRED = ("mesh", "media", "regions", "bc.flow", "bc.mech", "time")
_KEYS = {
    "mesh": {"generator", "cells", "extents", "z_levels", "perturb", "seed", "flux_scheme"},
    "media": {"k", "s_stor", "young", "poisson", "alpha"},
    "time": {"initial_head", "total_time", "steps", "equilibrate"},
    "solver": {"strategy", "rel_tol", "abs_tol", "max_iters", "drop_tol", "fill", "reorder"},
    "split": {"eps_abs", "eps_rel", "max_split_iters"},
    "fluid": {"rho_g"},
}
_LINE = re.compile(r"^([A-Za-z0-9_+\-.]+)\s*=\s*(.*)$")


def _floats(text, line, n=None):
    try:
        vals = tuple(float(t) for t in text.split())
    except ValueError:
        raise ScenarioError(f"expected numbers, got {text!r}", line) from None
    if n is not None and len(vals) != n:
        raise ScenarioError(f"expected {n} numbers, got {len(vals)}", line)
    return vals


def _bool(text, line):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ScenarioError(f"expected true/false, got {text!r}", line)


def _int(text, line):
    try:
        return int(text)
    except ValueError:
        raise ScenarioError(f"expected an integer, got {text!r}", line) from None


def _bc_rule(tag, text, line, kinds):
    if tag not in BOUNDARY_TAGS:
        raise ScenarioError(f"unknown boundary tag {tag!r}", line)
    toks = text.split()
    if not toks:
        raise ScenarioError(f"missing condition for {tag}", line)
    kind, rest = toks[0], toks[1:]
    if kind not in kinds:
        raise ScenarioError(f"unknown condition kind {kind!r}", line)
    media = box = None
    vals = []
    for t in rest:
        if t.startswith("media="):
            media = t[6:]
        elif t.startswith("box="):
            box = _floats(t[4:].replace(",", " "), line, 6)
        else:
            vals.append(t)
    value = _floats(" ".join(vals), line, kinds[kind])
    return BCRule(tag, kind, value, media, box)


def load_scenario(text: str, name: str | None = None) -> Scenario:
    """Parse scenario text; errors carry line numbers."""
    from .physics import FLOW_KINDS, MECH_KINDS

    sections: dict = {}
    media: dict = {}
    media_lines: dict = {}
    ordered = {"regions": [], "bc.flow": [], "bc.mech": []}
    top: dict = {}
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"malformed section header {line!r}", ln)
            head = line[1:-1].strip()
            if head.startswith("media "):
                mname = head[6:].strip()
                if not mname:
                    raise ScenarioError("media section needs a name", ln)
                if mname in media:
                    raise ScenarioError(f"duplicate media {mname!r}", ln)
                media[mname] = {}
                media_lines[mname] = ln
                current = ("media", mname)
                sections["media"] = True
                continue
            if head not in _SECTIONS or head == "media":
                raise ScenarioError(f"unknown section [{head}]", ln)
            if head in sections:
                raise ScenarioError(f"repeated section [{head}]", ln)
            sections.setdefault(head, {})
            current = (head, None)
            continue
        m = _LINE.match(line)
        if not m:
            raise ScenarioError(f"expected 'key = value', got {line!r}", ln)
        key, val = m.group(1), m.group(2).strip()
        if current is None:
            if key != "name":
                raise ScenarioError(f"unknown top-level key {key!r}", ln)
            top[key] = val
            continue
        sec, mname = current
        if sec in ordered:
            ordered[sec].append((key, val, ln))
            continue
        if key not in _KEYS[sec]:
            raise ScenarioError(f"unknown key {key!r} in [{sec}]", ln)
        target = media[mname] if sec == "media" else sections[sec]
        if key in target:
            raise ScenarioError(f"duplicate key {key!r}", ln)
        target[key] = (val, ln)
    for sec in _REQUIRED:
        if sec not in sections:
            raise ScenarioError(f"missing section [{sec}]" if sec != "media" else "no [media <name>] section")

    ms = sections["mesh"]
    gen = ms.get("generator", ("hex", None))[0]
    cells = tuple(int(v) for v in _floats(*ms["cells"], 3)) if "cells" in ms else (4, 4, 4)
    mesh = MeshSpec(
        generator=gen,
        cells=cells,
        extents=_floats(*ms["extents"], 6) if "extents" in ms else MeshSpec.extents,
        z_levels=_floats(*ms["z_levels"]) if "z_levels" in ms else None,
        perturb=_floats(*ms["perturb"], 1)[0] if "perturb" in ms else 0.0,
        seed=_int(*ms["seed"]) if "seed" in ms else 0,
        flux_scheme=ms.get("flux_scheme", ("tpfa", None))[0],
    )
    if gen not in ("hex", "prism"):
        raise ScenarioError(f"unknown mesh generator {gen!r}", ms["generator"][1])
    if mesh.flux_scheme not in ("tpfa", "mpfa_o"):
        raise ScenarioError(f"unknown flux scheme {mesh.flux_scheme!r}", ms["flux_scheme"][1])

    props = []
    for rid, (mname, kv) in enumerate(media.items()):
        ln = media_lines[mname]
        for req in ("k", "s_stor", "young", "poisson"):
            if req not in kv:
                raise ScenarioError(f"media {mname!r} lacks {req!r}", ln)
        try:
            props.append(MediaProperties(
                mname, conductivity_tensor(_floats(*kv["k"])), _floats(*kv["s_stor"], 1)[0],
                stiffness_from_E_nu(_floats(*kv["young"], 1)[0], _floats(*kv["poisson"], 1)[0]),
                _floats(*kv["alpha"], 1)[0] if "alpha" in kv else 1.0, rid,
                _floats(*kv["young"], 1)[0], _floats(*kv["poisson"], 1)[0]))
        except PhysicsError as e:
            raise ScenarioError(str(e), ln) from None
    names = [p.name for p in props]

    regions = []
    for mname, val, ln in ordered["regions"]:
        if mname not in names:
            raise ScenarioError(f"region refers to undefined media {mname!r}", ln)
        toks = val.split()
        kind = toks[0] if toks else ""
        nparam = {"all": 0, "box": 6, "slab": 4}.get(kind)
        if nparam is None:
            raise ScenarioError(f"unknown region kind {kind!r}", ln)
        regions.append(RegionRule(mname, kind, _floats(" ".join(toks[1:]), ln, nparam)))
    if not regions:
        raise ScenarioError("[regions] is empty")

    bcs = {}
    for sec, kinds in (("bc.flow", FLOW_KINDS), ("bc.mech", MECH_KINDS)):
        rules = []
        for tag, val, ln in ordered[sec]:
            rule = _bc_rule(tag, val, ln, kinds)
            if rule.media is not None and rule.media not in names:
                raise ScenarioError(f"boundary rule refers to undefined media {rule.media!r}", ln)
            rules.append(rule)
        covered = {r.tag for r in rules if r.media is None and r.box is None}
        for tag in BOX_TAGS:
            if tag not in covered:
                raise ScenarioError(f"[{sec}] does not cover boundary {tag}")
        bcs[sec] = tuple(rules)

    ts = sections["time"]
    for req in ("initial_head", "total_time", "steps"):
        if req not in ts:
            raise ScenarioError(f"[time] lacks {req!r}")
    sv = sections.get("solver", {})
    sk = {}
    for key in ("rel_tol", "abs_tol", "drop_tol"):
        if key in sv:
            sk[key] = _floats(*sv[key], 1)[0]
    for key in ("max_iters", "fill"):
        if key in sv:
            sk[key] = _int(*sv[key])
    if "reorder" in sv:
        sk["reorder"] = _bool(*sv["reorder"])
    strategy = sv.get("strategy", ("monolithic", None))
    sp = sections.get("split", {})
    spk = {k: _floats(*sp[k], 1)[0] for k in ("eps_abs", "eps_rel") if k in sp}
    if "max_split_iters" in sp:
        spk["max_split_iters"] = _int(*sp["max_split_iters"])
    fl = sections.get("fluid", {})
    try:
        return Scenario(
            mesh=mesh, media=tuple(props), regions=tuple(regions),
            flow_bc=FlowBC(bcs["bc.flow"]), mech_bc=MechBC(bcs["bc.mech"]),
            initial_head=_floats(*ts["initial_head"], 1)[0],
            total_time=_floats(*ts["total_time"], 1)[0],
            n_steps=_int(*ts["steps"]),
            name=top.get("name", name or "scenario"),
            strategy=strategy[0].replace("-", "_"),
            solver=SolverConfig(**sk), split=SplitConfig(**spk),
            fluid=FluidConstants(_floats(*fl["rho_g"], 1)[0]) if "rho_g" in fl else FluidConstants(),
            equilibrate=_bool(*ts["equilibrate"]) if "equilibrate" in ts else True,
        )
    except (ValueError, PhysicsError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise ScenarioError(str(e)) from None


def _num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def _nums(xs) -> str:
    return " ".join(_num(x) for x in xs)


def _media_values(m: MediaProperties):
    """Recover (k values, E, nu) from stored tensors."""
    K = m.K
    if np.allclose(K, K[0, 0] * np.eye(3), rtol=0, atol=0):
        k = (K[0, 0],)
    elif np.count_nonzero(K - np.diag(np.diag(K))) == 0:
        k = tuple(np.diag(K))
    else:
        k = tuple(K.ravel())
    if m.young is None:
        raise ScenarioError(f"media {m.name!r} has no isotropic elastic constants to render")
    return k, m.young, m.poisson


def render_scenario(s: Scenario) -> str:
    out = [f"name = {s.name}", "", "[mesh]", f"generator = {s.mesh.generator}",
           f"cells = {_nums(s.mesh.cells)}", f"extents = {_nums(s.mesh.extents)}"]
    if s.mesh.z_levels is not None:
        out.append(f"z_levels = {_nums(s.mesh.z_levels)}")
    if s.mesh.perturb:
        out += [f"perturb = {_num(s.mesh.perturb)}", f"seed = {s.mesh.seed}"]
    out.append(f"flux_scheme = {s.mesh.flux_scheme}")
    for m in s.media:
        k, E, nu = _media_values(m)
        out += ["", f"[media {m.name}]", f"k = {_nums(k)}", f"s_stor = {_num(m.s_stor)}",
                f"young = {_num(E)}", f"poisson = {_num(nu)}", f"alpha = {_num(m.alpha)}"]
    out += ["", "[regions]"]
    for r in s.regions:
        out.append(f"{r.media} = {r.kind} {_nums(r.params)}".rstrip())
    for sec, bc in (("bc.flow", s.flow_bc), ("bc.mech", s.mech_bc)):
        out += ["", f"[{sec}]"]
        for r in bc.rules:
            line = f"{r.tag} = {r.kind} {_nums(r.value)}".rstrip()
            if r.media is not None:
                line += f" media={r.media}"
            if r.box is not None:
                line += " box=" + ",".join(_num(v) for v in r.box)
            out.append(line)
    sv = s.solver
    out += ["", "[time]", f"initial_head = {_num(s.initial_head)}", f"total_time = {_num(s.total_time)}",
            f"steps = {s.n_steps}", f"equilibrate = {'true' if s.equilibrate else 'false'}",
            "", "[solver]", f"strategy = {s.strategy}", f"rel_tol = {_num(sv.rel_tol)}",
            f"abs_tol = {_num(sv.abs_tol)}", f"max_iters = {sv.max_iters}",
            f"drop_tol = {_num(sv.drop_tol)}", f"fill = {sv.fill}",
            f"reorder = {'true' if sv.reorder else 'false'}",
            "", "[split]", f"eps_abs = {_num(s.split.eps_abs)}", f"eps_rel = {_num(s.split.eps_rel)}",
            f"max_split_iters = {s.split.max_split_iters}",
            "", "[fluid]", f"rho_g = {_num(s.fluid.rho_g)}", ""]
    return "\n".join(out)


# ---- built-in scenarios ------------------------------------------------------

MPA = 1e6
PROBLEM_A_TOP_HEAD = 305.81
PROBLEM_A_INJECTION_HEAD = 10193.7


def problem_a_media():
    return (
        MediaProperties.isotropic("fill", 2e-13, 8.46603e-7, 29400 * MPA, 0.12, region_id=0),
        MediaProperties.isotropic("aquifer", 1.5e-10, 8.20116e-7, 14400 * MPA, 0.2, region_id=1),
        MediaProperties.isotropic("fault", 1.5e-9, 1.92276e-6, 14400 * MPA, 0.2, region_id=2),
    )


def _roller_sides(top_rule, bottom="roller"):
    rules = [BCRule(t, "roller") for t in ("x-", "x+", "y-", "y+")]
    rules.append(BCRule("z-", bottom, (0.0, 0.0, 0.0) if bottom == "displacement" else ()))
    rules.append(top_rule)
    return MechBC(tuple(rules))


def problem_a_levels(res: int, height=900.0, aq=(400.0, 500.0)) -> tuple:
    """Layering with nodes on both aquifer interfaces."""
    n_aq = max(1, round(res / 6))
    n_lo = (res - n_aq) // 2
    n_hi = res - n_aq - n_lo
    z = np.r_[np.linspace(0.0, aq[0], n_lo + 1), np.linspace(aq[0], aq[1], n_aq + 1)[1:],
              np.linspace(aq[1], height, n_hi + 1)[1:]]
    return tuple(float(v) for v in z)


def builtin_problem_a(resolution: int = 12, fault_dip: float = 80.0, fault_thickness: float = 50.0,
                      strategy: str = "monolithic", drop_tol: float = 0.1) -> Scenario:
    """Faulted three-layer reservoir on a prismatic mesh with ``resolution`` cells per axis."""
    if resolution < 6:
        raise ScenarioError("problem A needs at least 6 cells per axis")
    L = 900.0
    flow = FlowBC((
        *(BCRule(t, "flux", (0.0,)) for t in ("x-", "x+", "y-", "y+", "z-")),
        BCRule("z+", "head", (PROBLEM_A_TOP_HEAD,)),
        BCRule("x-", "head", (PROBLEM_A_INJECTION_HEAD,), media="aquifer"),
    ))
    return Scenario(
        mesh=MeshSpec("prism", (resolution, resolution, resolution), (0, 0, 0, L, L, L),
                      problem_a_levels(resolution), flux_scheme="mpfa_o"),
        media=problem_a_media(),
        regions=(RegionRule("fill", "all"), RegionRule("aquifer", "box", (0, 0, 400, L, L, 500)),
                 RegionRule("fault", "slab", (L / 2, L / 2, fault_dip, fault_thickness))),
        flow_bc=flow,
        mech_bc=_roller_sides(BCRule("z+", "traction", (0.0, 0.0, 0.0))),
        initial_head=PROBLEM_A_TOP_HEAD, total_time=4e9, n_steps=4,
        name=f"problem_a_r{resolution}", strategy=strategy,
        solver=SolverConfig(drop_tol=drop_tol),
        # flow residuals here are ~1e-6 m^3/s, so the absolute test must sit well below eps_rel * r0
        split=SplitConfig(eps_abs=1e-12),
    )


def builtin_problem_b_analog(resolution: int = 9, strategy: str = "monolithic") -> Scenario:
    """Nine-layer box with two lenses (11 media) and a corner injection into layer 8."""
    if resolution < 9:
        raise ScenarioError("problem B analog needs at least 9 cells vertically")
    Lx, Ly, H = 1800.0, 1800.0, 900.0
    nsub = resolution // 9
    z = tuple(float(v) for v in np.linspace(0.0, H, 9 * nsub + 1))
    kh = np.logspace(np.log10(1.2e-12), np.log10(2e-5), 9)
    ss = np.logspace(-6, -5, 9)
    media = []
    for i in range(9):
        k = (kh[i], kh[i], max(kh[i] / 10, 1.2e-12))
        media.append(MediaProperties.isotropic(f"layer{i + 1}", k, float(ss[i]), 10000 * MPA, 0.2, 1.0, i))
    media.append(MediaProperties.isotropic("lens1", float(kh[1]), float(ss[4]), 10000 * MPA, 0.2, 1.0, 9))
    media.append(MediaProperties.isotropic("lens2", float(kh[7]), float(ss[2]), 10000 * MPA, 0.2, 1.0, 10))
    dz = H / 9
    regions = [RegionRule(f"layer{i + 1}", "box", (0, 0, i * dz, Lx, Ly, (i + 1) * dz)) for i in range(9)]
    regions[0] = RegionRule("layer1", "all")
    regions += [RegionRule("lens1", "box", (400, 400, 2 * dz, 1000, 1000, 3 * dz)),
                RegionRule("lens2", "box", (800, 900, 5 * dz, 1500, 1500, 6 * dz))]
    flow = FlowBC((
        *(BCRule(t, "flux", (0.0,)) for t in BOX_TAGS),
        BCRule("x-", "head", (1000.0,), media="layer8", box=(0, 0, 0, 0, Ly / 4, H)),
        BCRule("x+", "head", (100.0,)),
    ))
    return Scenario(
        mesh=MeshSpec("prism", (resolution, resolution, 9 * nsub), (0, 0, 0, Lx, Ly, H), z),
        media=tuple(media), regions=tuple(regions), flow_bc=flow,
        mech_bc=_roller_sides(BCRule("z+", "traction", (0.0, 0.0, 0.0)), bottom="displacement"),
        initial_head=100.0, total_time=2e8, n_steps=4,
        name=f"problem_b_analog_r{resolution}", strategy=strategy,
        solver=SolverConfig(drop_tol=1e-5),
    )


TERZAGHI = dict(rho_g=1.0, young=1.0, poisson=0.0, k=1.0, s_stor=0.1, alpha=1.0, load=1.0, h0=1.0)


def terzaghi_cv(p=TERZAGHI) -> float:
    """Consolidation coefficient K / (s + alpha^2 rho_g / M) of the column."""
    nu = p["poisson"]
    M = p["young"] * (1 - nu) / ((1 + nu) * (1 - 2 * nu))
    return p["k"] / (p["s_stor"] + p["alpha"] ** 2 * p["rho_g"] / M)


def builtin_terzaghi(n_layers: int = 40, t_v: float = 1.0, n_steps: int = 40) -> Scenario:
    """Unit column, drained loaded top, run to dimensionless time ``t_v``."""
    if n_layers < 20:
        raise ScenarioError("terzaghi column needs at least 20 layers")
    p = TERZAGHI
    flow = FlowBC((*(BCRule(t, "flux", (0.0,)) for t in BOX_TAGS[:5]),
                   BCRule("z+", "head", (p["h0"],))))
    mech = _roller_sides(BCRule("z+", "traction", (0.0, 0.0, -p["load"])))
    medium = MediaProperties.isotropic("column", p["k"], p["s_stor"], p["young"], p["poisson"], p["alpha"])
    return Scenario(
        mesh=MeshSpec("hex", (1, 1, n_layers)), media=(medium,), regions=(RegionRule("column", "all"),),
        flow_bc=flow, mech_bc=mech, initial_head=p["h0"], total_time=t_v / terzaghi_cv(),
        n_steps=n_steps, name=f"terzaghi_n{n_layers}", solver=SolverConfig(drop_tol=1e-4),
        fluid=FluidConstants(p["rho_g"]),
    )


def builtin_split_stress() -> Scenario:
    """Weakly storing, nearly impermeable column with a large step: fixed-strain diverges."""
    medium = MediaProperties.isotropic("tight", 1e-13, 3e-6, 1e9, 0.25)
    flow = FlowBC((*(BCRule(t, "flux", (0.0,)) for t in BOX_TAGS[:5]), BCRule("z+", "head", (0.0,))))
    mech = _roller_sides(BCRule("z+", "traction", (0.0, 0.0, -1e6)))
    return Scenario(
        mesh=MeshSpec("hex", (3, 3, 8), (0, 0, 0, 100, 100, 200)), media=(medium,),
        regions=(RegionRule("tight", "all"),), flow_bc=flow, mech_bc=mech,
        initial_head=0.0, total_time=1e6, n_steps=1, name="split_stress", strategy="fixed_strain",
        solver=SolverConfig(drop_tol=1e-4),
    )


BUILTINS = {
    "problem_a": builtin_problem_a,
    "problem_a_coarse": lambda: builtin_problem_a(12),
    "problem_b_analog": builtin_problem_b_analog,
    "terzaghi": builtin_terzaghi,
    "split_stress": builtin_split_stress,
}

# built-ins shipped as files
SHIPPED = {
    "problem_a_coarse": lambda: builtin_problem_a(12),
    "problem_b_analog": lambda: builtin_problem_b_analog(9),
    "terzaghi": lambda: builtin_terzaghi(40),
    "split_stress": builtin_split_stress,
}


def shipped_scenario_text(name: str) -> str:
    return resources.files("porobench").joinpath("scenarios", f"{name}.scn").read_text()


def resolve_scenario(ref: str) -> Scenario:
    """``builtin:<name>`` (shipped file) or a path to a scenario file."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in SHIPPED:
            raise ScenarioError(f"unknown built-in {name!r}; available: {', '.join(SHIPPED)}")
        return load_scenario(shipped_scenario_text(name), name)
    path = Path(ref)
    return load_scenario(path.read_text(), path.stem)


def write_shipped(directory=None) -> None:
    """Regenerate the shipped scenario files from the built-in constructors."""
    d = Path(directory) if directory else Path(__file__).parent / "scenarios"
    d.mkdir(parents=True, exist_ok=True)
    for name, fn in SHIPPED.items():
        (d / f"{name}.scn").write_text(render_scenario(fn()))
