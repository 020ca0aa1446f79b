"""Sewing two surfaces along boundary circles.

``M1`` and ``M2`` are meshes with boundary cycles.  Each is capped off to a
closed mesh ``M1~`` / ``M2~``, and the two are glued along the cycles into
the closed mesh ``M``.  Boundary amplitudes are conditional expectations
onto the circle in the capped mesh; the maps ``J1``, ``J2`` push factors
forward into ``M`` and re-tag the Wick ordering to ``M``'s covariance.  The
sewing identity says

    int (J1 A1 F) (J2 A2 G) dmu_M  ==  int (J1 F) (J2 G) dmu_M.

Vertex conventions: capped meshes keep the source indices and append cap
vertices; ``j1[v]`` is the glued index of ``M1~`` vertex ``v`` (``-1`` on
the cap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .mesh import (
    Mesh,
    MeshError,
    GluedMesh,
    _as_cycles,
    _assemble,
    _mass_from_parts,
    cylinder_collar,
    glue_meshes,
    sphere_halves,
)
from .positivity import SupportError
from .sobolev import FieldOperator, assemble_operator, project_support
from .wick import VECTORS, WickPolynomial, _ctx, _map_vectors, conditional_expectation, wick_inner

__all__ = [
    "CapSpec",
    "CONE",
    "RING_CONE",
    "cap_disk",
    "cap_boundary",
    "SewSetup",
    "SewReport",
    "build_sew_setup",
    "cylinder_setup",
    "sphere_halves_setup",
    "boundary_amplitude",
    "j_map",
    "sew_check",
    "intertwining_residual",
]


@dataclass(frozen=True)
class CapSpec:
    """Combinatorial disk used to close a boundary cycle.

    ``cone``: one apex joined to every cycle vertex (spoke weight
    ``spoke``), cycle edges get an extra ``rim``, cycle vertices an extra
    ``rim_mass``.  ``ring_cone``: ``rings`` lattice rings (edge weight
    ``ring_weight``, assembled square by square like the lattice
    generators) followed by the same cone.
    """

    kind: str = "cone"
    spoke: float = 1.0
    rim: float = 0.5
    rim_mass: float = 0.25
    apex_mass: float | None = None
    rings: int = 1
    ring_weight: float = 1.0
    ring_mass: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


CONE = CapSpec("cone")
RING_CONE = CapSpec("ring_cone", rings=2)


def cap_disk(n: int, cap: CapSpec) -> Mesh:
    """Disk whose boundary cycle ``"rim"`` is ``0..n-1``."""
    if n < 3:
        raise MeshError(f"cap needs a cycle of length >= 3, got {n}")
    if cap.kind == "cone":
        rings = 0
    elif cap.kind == "ring_cone":
        rings = int(cap.rings)
        if rings < 1:
            raise MeshError("ring_cone needs at least one ring")
    else:
        raise MeshError(f"unknown cap kind {cap.kind!r}")
    nv = (rings + 1) * n + 1
    apex = nv - 1
    contrib: dict[tuple[int, int], list[float]] = {}
    mass_parts: list[list[float]] = [[] for _ in range(nv)]

    def add(i, j, w):
        contrib.setdefault((min(i, j), max(i, j)), []).append(w)

    quads, tris = [], []
    for r in range(rings):
        for c in range(n):
            q = (r * n + c, r * n + (c + 1) % n, (r + 1) * n + (c + 1) % n, (r + 1) * n + c)
            quads.append(q)
            for a in range(4):
                add(q[a], q[(a + 1) % 4], 0.5 * cap.ring_weight)
                mass_parts[q[a]].append(cap.ring_mass / 4.0)
    last = rings * n
    for c in range(n):
        i, j = last + c, last + (c + 1) % n
        add(i, j, cap.rim)
        add(i, apex, cap.spoke)
        mass_parts[i].append(cap.rim_mass)
        tris.append((i, j, apex))
    mass_parts[apex].append(n / 4.0 if cap.apex_mass is None else cap.apex_mass)
    return Mesh(
        _assemble(nv, contrib),
        _mass_from_parts(nv, mass_parts),
        triangles=np.array(tris),
        quads=np.array(quads) if quads else None,
        cycles={"rim": tuple(range(n))},
        meta={"kind": "cap", **cap.to_dict()},
    )


def cap_boundary(mesh: Mesh, cycles, cap: CapSpec = CONE) -> tuple[Mesh, np.ndarray]:
    """Close every listed boundary cycle with a copy of ``cap``.

    Returns the closed mesh and the embedding of the original vertices
    (the identity: source indices are kept, cap vertices are appended).
    """
    current = mesh
    for cyc in _as_cycles(cycles, mesh):
        disk = cap_disk(len(cyc), cap)
        current = glue_meshes(current, cyc, disk, "rim", check_collar=False).mesh
    kept = {k: v for k, v in current.cycles.items() if not k.startswith("seam")}
    capped = Mesh(
        current.stiffness, current.mass, positions=None,
        triangles=current.triangles, quads=current.quads,
        cycles={k.removeprefix("a."): v for k, v in kept.items()},
        meta={"kind": "capped", "source": dict(mesh.meta), "cap": cap.to_dict()},
    )
    return capped, np.arange(mesh.vertex_count)


@dataclass(frozen=True, eq=False)
class SewSetup:
    m1_tilde: Mesh
    m2_tilde: Mesh
    glued: GluedMesh
    circle1: np.ndarray
    circle2: np.ndarray
    circle: np.ndarray
    region1: np.ndarray
    region2: np.ndarray
    j1: np.ndarray
    j2: np.ndarray
    mass: float
    fop1: FieldOperator
    fop2: FieldOperator
    fop: FieldOperator
    sources: tuple = field(repr=False, default=())

    def side(self, s: int):
        """(capped operator, region, circle, j-map) for side 1 or 2."""
        if s == 1:
            return self.fop1, self.region1, self.circle1, self.j1
        if s == 2:
            return self.fop2, self.region2, self.circle2, self.j2
        raise ValueError("side must be 1 or 2")

    def swapped(self) -> "SewSetup":
        m1, c1, m2, c2, cap1, cap2 = self.sources
        return build_sew_setup(m2, c2, m1, c1, self.mass, cap2, cap1)


@dataclass
class SewReport:
    lhs: float
    rhs: float
    tol: float = 1e-8

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), abs(self.rhs), 1.0)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "tolerance": self.tol, "verdict": "pass" if self.passed else "fail"}


def _check_side(name, mt: Mesh, region, circle, j, M: Mesh, tol: float) -> None:
    interior = np.setdiff1d(region, circle)
    cap = np.setdiff1d(np.arange(mt.vertex_count), region)
    Lt, L = mt.stiffness, M.stiffness
    if interior.size and cap.size and Lt[interior][:, cap].count_nonzero():
        raise MeshError(f"{name}: circle does not separate the interior from the cap")
    outside = np.setdiff1d(np.arange(M.vertex_count), j[region])
    if interior.size and outside.size and L[j[interior]][:, outside].count_nonzero():
        raise MeshError(f"{name}: seam does not separate the interior in the glued mesh")
    a = Lt[region][:, interior]
    b = L[j[region]][:, j[interior]]
    scale = max(1.0, abs(Lt).max())
    if a.shape != b.shape or (a.nnz + b.nnz and abs(a - b).max() > tol * scale):
        raise MeshError(f"{name}: embedding is not isometric on the stiffness entries")
    if np.abs(mt.mass[interior] - M.mass[j[interior]]).max(initial=0.0) > tol * mt.mass.max():
        raise MeshError(f"{name}: embedding is not isometric on the mass entries")


def build_sew_setup(
    mesh1: Mesh,
    cycles1,
    mesh2: Mesh,
    cycles2,
    mass: float,
    cap1: CapSpec = CONE,
    cap2: CapSpec | None = None,
    check_collar: bool = True,
    tol: float = 0.0,
) -> SewSetup:
    """Cap both sides, glue them, and verify the embedding hypotheses."""
    if not mass > 0:
        raise ValueError("sewing needs m > 0")
    cap2 = cap1 if cap2 is None else cap2
    c1, c2 = _as_cycles(cycles1, mesh1), _as_cycles(cycles2, mesh2)
    glued = glue_meshes(mesh1, c1, mesh2, c2, check_collar=check_collar)
    m1t, e1 = cap_boundary(mesh1, c1, cap1)
    m2t, e2 = cap_boundary(mesh2, c2, cap2)
    j1 = -np.ones(m1t.vertex_count, dtype=np.int64)
    j1[e1] = glued.map_a
    j2 = -np.ones(m2t.vertex_count, dtype=np.int64)
    j2[e2] = glued.map_b
    circle1 = np.unique(np.concatenate([np.asarray(c) for c in c1]))
    circle2 = np.unique(np.concatenate([np.asarray(c) for c in c2]))
    _check_side("side 1", m1t, e1, circle1, j1, glued.mesh, tol)
    _check_side("side 2", m2t, e2, circle2, j2, glued.mesh, tol)
    return SewSetup(
        m1t, m2t, glued, circle1, circle2, glued.seam_vertices, e1, e2, j1, j2, float(mass),
        assemble_operator(m1t, mass), assemble_operator(m2t, mass),
        assemble_operator(glued.mesh, mass),
        sources=(mesh1, c1, mesh2, c2, cap1, cap2),
    )


def cylinder_setup(n: int = 8, k1: int = 4, k2: int = 4, mass: float = 1.0,
                   cap1: CapSpec = CONE, cap2: CapSpec | None = None) -> SewSetup:
    """Two lattice cylinders glued along both ends into an ``n x (k1 + k2 - 2)`` torus."""
    a, b = cylinder_collar(n, k1), cylinder_collar(n, k2)
    return build_sew_setup(a, ["top", "bottom"], b, ["bottom", "top"], mass, cap1, cap2)


def sphere_halves_setup(subdiv: int = 2, mass: float = 1.0,
                        cap1: CapSpec = CONE, cap2: CapSpec | None = None) -> SewSetup:
    """Upper and lower hemispheres of the octahedral sphere glued along the equator."""
    upper, lower = sphere_halves(subdiv)
    return build_sew_setup(upper, "equator", lower, "equator", mass, cap1, cap2)


def _check_region(p: WickPolynomial, region: np.ndarray, n: int, what: str) -> None:
    mask = np.zeros(n, dtype=bool)
    mask[region] = True
    for i in p.vector_ids():
        bad = np.flatnonzero((VECTORS[i] != 0) & ~mask)
        if bad.size:
            raise SupportError(f"{what}: factor supported outside the source surface", bad)


def boundary_amplitude(setup: SewSetup, side: int, F: WickPolynomial, strict: bool = True) -> WickPolynomial:
    """``A_{C,M} F``: conditional expectation onto the circle inside the capped mesh."""
    fop_s, region, circle, _ = setup.side(side)
    _ctx(fop_s, F)
    if strict:
        _check_region(F, region, fop_s.n, f"side {side}")
    return conditional_expectation(fop_s, circle, F)


def _push(setup: SewSetup, side: int, v: np.ndarray, strict: bool) -> np.ndarray:
    _, region, _, j = setup.side(side)
    if strict:
        off = np.flatnonzero((v != 0) & (j < 0))
        if off.size:
            raise SupportError(f"side {side}: factor outside the embedding domain", off)
    out = np.zeros(setup.fop.n)
    out[j[region]] = v[region]
    return out


def j_map(setup: SewSetup, side: int, p: WickPolynomial, strict: bool = True) -> WickPolynomial:
    """``J p``: push factors into the glued mesh, Wick ordered against its covariance.

    With ``strict=False`` cap entries are silently dropped (restriction),
    which is only useful to show what goes wrong outside the hypotheses.
    """
    fop_s = setup.side(side)[0]
    _ctx(fop_s, p)
    images = {i: _push(setup, side, VECTORS[i], strict) for i in p.vector_ids()}
    return _map_vectors(p, images, setup.fop.id)


def sew_check(setup: SewSetup, F: WickPolynomial, G: WickPolynomial,
              tol: float = 1e-8, strict: bool = True) -> SewReport:
    """Compare ``(A1 F, A2 G)`` sewn through ``J1, J2`` with ``int (J1 F)(J2 G) dmu``."""
    AF = boundary_amplitude(setup, 1, F, strict)
    AG = boundary_amplitude(setup, 2, G, strict)
    lhs = wick_inner(setup.fop, j_map(setup, 1, AF, strict), j_map(setup, 2, AG, strict))
    rhs = wick_inner(setup.fop, j_map(setup, 1, F, strict), j_map(setup, 2, G, strict))
    return SewReport(lhs, rhs, tol)


def intertwining_residual(setup: SewSetup, side: int, f: np.ndarray) -> float:
    """``|| j_* e_C~ f - e_C j_* f ||_inf / || f ||_inf`` for ``f`` supported in the source."""
    fop_s, _, circle, _ = setup.side(side)
    left = _push(setup, side, project_support(fop_s, circle, f), strict=True)
    right = project_support(setup.fop, setup.circle, _push(setup, side, f, strict=True))
    return float(np.abs(left - right).max() / max(np.abs(f).max(), 1e-300))
