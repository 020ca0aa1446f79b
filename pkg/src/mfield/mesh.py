"""Discretized closed surfaces and weighted graphs.

A :class:`Mesh` stores the two matrices a scalar field needs: the stiffness
matrix ``L`` (discrete Dirichlet form, ``u^T L u`` approximates the integral of
``|du|^2``) and the lumped mass vector ``W`` (vertex area weights).  Everything
else in the package only touches these two objects plus the sparsity pattern
of ``L``, which doubles as the adjacency relation.

Generators
----------
``torus_lattice``
    Periodic square lattice.  Vertex ``(r, c)`` has index ``r * ny + c``.
``cylinder_collar``
    Square lattice, periodic in ``c`` only.  Vertex ``(r, c)`` has index
    ``r * n + c``; rows ``0`` and ``k - 1`` are the boundary cycles
    ``"bottom"`` and ``"top"``, both listed in increasing ``c``.
``icosphere``
    Geodesic sphere by midpoint subdivision of an icosahedron (or of an
    octahedron with ``base="octahedron"``), cotangent stiffness, barycentric
    mass.  Base vertices come first, then midpoints in creation order.

Lattice meshes are assembled square by square: each square adds ``1/2`` to
the weight of each of its four sides and ``h^2 / 4`` to the mass of each
corner.  Interior edges therefore get weight 1, boundary edges 1/2, and two
meshes glued along a boundary cycle reproduce the lattice exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "MeshError",
    "MeshWarning",
    "InvolutionError",
    "Mesh",
    "RegionPartition",
    "Involution",
    "GluedMesh",
    "build_mesh",
    "torus_lattice",
    "cylinder_collar",
    "icosphere",
    "path_graph",
    "from_weighted_edges",
    "from_triangles",
    "make_partition",
    "validate_involution",
    "lattice_reflection",
    "mirror_involution",
    "glue_meshes",
    "collar_signature",
    "sphere_halves",
    "graph_distances",
    "bump",
    "mesh_to_json",
    "mesh_from_json",
    "save_mesh",
    "load_mesh",
]


class MeshError(ValueError):
    """Invalid mesh data or an operation whose hypotheses fail."""


class MeshWarning(UserWarning):
    pass


class InvolutionError(ValueError):
    """A permutation failed one of the involution conditions.

    ``condition`` names the first violated condition, one of
    ``"not_bijection"``, ``"not_involution"``, ``"stiffness_not_preserved"``,
    ``"mass_not_preserved"``, ``"partition_not_swapped"``,
    ``"boundary_not_fixed"``.
    """

    def __init__(self, condition: str, detail: str):
        super().__init__(f"{condition}: {detail}")
        self.condition = condition
        self.detail = detail


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Stiffness/mass description of a discretized manifold.

    Parameters
    ----------
    stiffness : scipy.sparse matrix
        Symmetric ``L`` with zero row sums; ``-L_ij`` is the weight of edge ij.
    mass : ndarray
        Strictly positive vertex weights ``W``.
    positions, triangles, quads : optional arrays
        Embedding and cell structure.  Only used for Euler characteristics,
        boundary checks and JSON output.
    cycles : mapping of name to vertex cycle
        Named boundary (or seam) cycles.
    meta : mapping
        Generator parameters, e.g. ``{"kind": "torus_lattice", "shape": [8, 8]}``.
    """

    stiffness: sp.csr_matrix
    mass: np.ndarray
    positions: np.ndarray | None = None
    triangles: np.ndarray | None = None
    quads: np.ndarray | None = None
    cycles: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        L = sp.csr_matrix(self.stiffness, dtype=float)
        L.sort_indices()
        object.__setattr__(self, "stiffness", L)
        object.__setattr__(self, "mass", _readonly(np.asarray(self.mass, dtype=float)))
        if self.positions is not None:
            object.__setattr__(self, "positions", _readonly(np.asarray(self.positions, float)))
        for name in ("triangles", "quads"):
            cells = getattr(self, name)
            if cells is not None:
                object.__setattr__(self, name, _readonly(np.asarray(cells, dtype=np.int64)))
        object.__setattr__(
            self, "cycles", {k: tuple(int(i) for i in v) for k, v in dict(self.cycles).items()}
        )
        object.__setattr__(self, "meta", dict(self.meta))
        self.validate()

    @property
    def vertex_count(self) -> int:
        return self.stiffness.shape[0]

    def __len__(self) -> int:
        return self.vertex_count

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Boolean pattern of the nonzero off-diagonal entries of ``L``."""
        A = self.stiffness.copy()
        A.setdiag(0)
        A.eliminate_zeros()
        return (A != 0).tocsr()

    def neighbors(self, i: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[i]:A.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Edges ``(i, j)`` with ``i < j`` and ``L_ij != 0``, sorted."""
        coo = sp.triu(self.stiffness, k=1).tocoo()
        keep = coo.data != 0
        e = np.column_stack([coo.row[keep], coo.col[keep]])
        return e[np.lexsort((e[:, 1], e[:, 0]))] if len(e) else e.reshape(0, 2)

    def edge_weight(self, i: int, j: int) -> float:
        return -float(self.stiffness[i, j])

    @property
    def volume(self) -> float:
        return math.fsum(self.mass)

    def is_connected(self) -> bool:
        if self.vertex_count == 1:
            return True
        ncomp, _ = connected_components(self.adjacency, directed=False)
        return ncomp == 1

    def validate(self) -> None:
        L = self.stiffness
        n = L.shape[0]
        if L.shape != (n, n) or n == 0:
            raise MeshError(f"stiffness must be a nonempty square matrix, got {L.shape}")
        if self.mass.shape != (n,):
            raise MeshError(f"mass has shape {self.mass.shape}, expected ({n},)")
        if not np.all(np.isfinite(L.data)) or not np.all(np.isfinite(self.mass)):
            raise MeshError("non-finite entries in stiffness or mass")
        if np.any(self.mass <= 0):
            bad = np.flatnonzero(self.mass <= 0)[:5].tolist()
            raise MeshError(f"mass must be strictly positive; offending vertices {bad}")
        if abs(L - L.T).max() > 0:
            raise MeshError("stiffness matrix is not symmetric")
        diag = L.diagonal()
        if np.any(diag < 0):
            raise MeshError("stiffness diagonal has negative entries")
        scale = max(1.0, float(np.abs(L.data).max())) if L.nnz else 1.0
        rowsum = np.abs(L @ np.ones(n)).max()
        if rowsum > 1e-12 * scale:
            raise MeshError(f"stiffness rows do not sum to zero (max |L 1| = {rowsum:.3e})")
        for name, cyc in self.cycles.items():
            if any(i < 0 or i >= n for i in cyc):
                raise MeshError(f"cycle {name!r} references vertices outside the mesh")
        off = sp.triu(L, k=1).data
        if np.any(off > 0):
            warnings.warn(
                f"{int(np.sum(off > 0))} negative edge weights (obtuse cotangent weights)",
                MeshWarning,
                stacklevel=3,
            )

    def fingerprint(self) -> str:
        """SHA-256 of the stiffness entries and mass vector."""
        coo = self.stiffness.tocoo()
        order = np.lexsort((coo.col, coo.row))
        h = hashlib.sha256()
        h.update(np.int64(self.vertex_count).tobytes())
        h.update(coo.row[order].astype(np.int64).tobytes())
        h.update(coo.col[order].astype(np.int64).tobytes())
        h.update(coo.data[order].astype(np.float64).tobytes())
        h.update(self.mass.astype(np.float64).tobytes())
        return h.hexdigest()

    def cell_edges(self) -> set[tuple[int, int]]:
        """Edges of the 2-cells (triangle and quad sides)."""
        out = set()
        for cells in (self.triangles, self.quads):
            if cells is None:
                continue
            for cell in cells:
                k = len(cell)
                for a in range(k):
                    i, j = int(cell[a]), int(cell[(a + 1) % k])
                    out.add((min(i, j), max(i, j)))
        return out

    def face_count(self) -> int:
        return sum(len(c) for c in (self.triangles, self.quads) if c is not None)

    def euler_characteristic(self) -> int:
        if self.triangles is None and self.quads is None:
            raise MeshError("Euler characteristic needs a cell structure")
        return self.vertex_count - len(self.cell_edges()) + self.face_count()

    def boundary_edges(self) -> set[tuple[int, int]]:
        """Cell edges that belong to exactly one cell."""
        count: dict[tuple[int, int], int] = defaultdict(int)
        for cells in (self.triangles, self.quads):
            if cells is None:
                continue
            for cell in cells:
                k = len(cell)
                for a in range(k):
                    i, j = int(cell[a]), int(cell[(a + 1) % k])
                    count[(min(i, j), max(i, j))] += 1
        return {e for e, c in count.items() if c == 1}


# ----------------------------------------------------------------------------
# assembly


def _assemble(n: int, contributions: Mapping[tuple[int, int], list[float]]) -> sp.csr_matrix:
    """Stiffness matrix from per-edge weight contributions.

    Each edge weight and each diagonal entry is an exactly rounded sum
    (``math.fsum``), so the result does not depend on the order in which
    cells were visited.  Mirror-symmetric meshes get mirror-symmetric
    matrices bit for bit.
    """
    weights = {}
    for (i, j), parts in contributions.items():
        if i == j:
            raise MeshError(f"self-loop at vertex {i}")
        key = (min(i, j), max(i, j))
        weights.setdefault(key, []).extend(parts)
    rows, cols, vals = [], [], []
    incident: list[list[float]] = [[] for _ in range(n)]
    for (i, j), parts in weights.items():
        w = math.fsum(parts)
        if w == 0.0:
            continue
        rows += [i, j]
        cols += [j, i]
        vals += [-w, -w]
        incident[i].append(w)
        incident[j].append(w)
    diag = [math.fsum(ws) for ws in incident]
    rows += list(range(n))
    cols += list(range(n))
    vals += diag
    L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.eliminate_zeros()
    return L


def _mass_from_parts(n: int, parts: Sequence[list[float]]) -> np.ndarray:
    return np.array([math.fsum(p) for p in parts], dtype=float)


def from_weighted_edges(
    n: int,
    edges: Iterable[tuple[int, int, float]],
    mass: Sequence[float] | float = 1.0,
    **kwargs,
) -> Mesh:
    """Mesh of an arbitrary weighted graph; repeated edges are summed."""
    contrib: dict[tuple[int, int], list[float]] = defaultdict(list)
    for i, j, w in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise MeshError(f"edge ({i}, {j}) outside vertex range {n}")
        contrib[(min(i, j), max(i, j))].append(float(w))
    W = np.full(n, float(mass)) if np.isscalar(mass) else np.asarray(mass, float)
    return Mesh(_assemble(n, contrib), W, **kwargs)


def path_graph(n: int, weight: float = 1.0, mass: float = 1.0) -> Mesh:
    """Path ``0 - 1 - ... - (n-1)``; ``n = 1`` gives the single-vertex mesh ``L = 0``."""
    if n < 1:
        raise MeshError("path needs at least one vertex")
    return from_weighted_edges(
        n, [(i, i + 1, weight) for i in range(n - 1)], mass, meta={"kind": "path", "n": n}
    )


def _square_assembly(
    rows: int, cols: int, periodic_rows: bool, periodic_cols: bool, spacing: float
):
    def idx(r, c):
        return (r % rows) * cols + (c % cols)

    n = rows * cols
    contrib: dict[tuple[int, int], list[float]] = defaultdict(list)
    mass_parts: list[list[float]] = [[] for _ in range(n)]
    quads = []
    corner_mass = spacing * spacing / 4.0
    for r in range(rows if periodic_rows else rows - 1):
        for c in range(cols if periodic_cols else cols - 1):
            q = (idx(r, c), idx(r, c + 1), idx(r + 1, c + 1), idx(r + 1, c))
            quads.append(q)
            for a in range(4):
                i, j = q[a], q[(a + 1) % 4]
                contrib[(min(i, j), max(i, j))].append(0.5)
                mass_parts[q[a]].append(corner_mass)
    return _assemble(n, contrib), _mass_from_parts(n, mass_parts), np.array(quads)


def torus_lattice(nx: int, ny: int | None = None, spacing: float = 1.0) -> Mesh:
    """Periodic ``nx x ny`` square lattice with unit edge weights and mass ``h^2``.

    The eigenvalues of ``L`` are ``4 - 2 cos(2 pi p / nx) - 2 cos(2 pi q / ny)``.
    """
    ny = nx if ny is None else ny
    if nx < 3 or ny < 3:
        raise MeshError("torus lattice needs at least 3 sites per periodic direction")
    L, W, quads = _square_assembly(nx, ny, True, True, spacing)
    pos = np.array([(r * spacing, c * spacing, 0.0) for r in range(nx) for c in range(ny)])
    return Mesh(
        L, W, positions=pos, quads=quads,
        meta={"kind": "torus_lattice", "shape": [nx, ny], "spacing": spacing},
    )


def cylinder_collar(n: int, k: int, spacing: float = 1.0) -> Mesh:
    """Lattice cylinder, ``n`` sites around and ``k`` rows, boundary rows halved."""
    if n < 3:
        raise MeshError("cylinder needs at least 3 sites around")
    if k < 2:
        raise MeshError("cylinder needs at least 2 rows")
    L, W, quads = _square_assembly(k, n, False, True, spacing)
    pos = np.array([(r * spacing, c * spacing, 0.0) for r in range(k) for c in range(n)])
    cycles = {
        "bottom": tuple(range(n)),
        "top": tuple((k - 1) * n + c for c in range(n)),
    }
    return Mesh(
        L, W, positions=pos, quads=quads, cycles=cycles,
        meta={"kind": "cylinder_collar", "shape": [n, k], "spacing": spacing},
    )


def _cotangent(p, q, r) -> float:
    """Cotangent of the angle at ``r`` in triangle ``(p, q, r)``."""
    u = p - r
    v = q - r
    cr = np.cross(u, v)
    area2 = math.sqrt(cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2])
    return float(u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / area2


def from_triangles(positions, triangles, **kwargs) -> Mesh:
    """Cotangent stiffness and barycentric lumped mass of a triangle mesh."""
    P = np.asarray(positions, dtype=float)
    T = np.asarray(triangles, dtype=np.int64)
    n = len(P)
    contrib: dict[tuple[int, int], list[float]] = defaultdict(list)
    mass_parts: list[list[float]] = [[] for _ in range(n)]
    for t, (a, b, c) in enumerate(T):
        pa, pb, pc = P[a], P[b], P[c]
        cr = np.cross(pb - pa, pc - pa)
        area = 0.5 * math.sqrt(float(cr @ cr))
        if not area > 0.0:
            raise MeshError(f"degenerate triangle {t} ({a}, {b}, {c}) has zero area")
        for i, j, k in ((a, b, c), (b, c, a), (c, a, b)):
            contrib[(min(i, j), max(i, j))].append(0.5 * _cotangent(P[i], P[j], P[k]))
        for v in (a, b, c):
            mass_parts[v].append(area / 3.0)
    W = _mass_from_parts(n, mass_parts)
    if np.any(W <= 0):
        raise MeshError("vertex not covered by any triangle")
    return Mesh(_assemble(n, contrib), W, positions=P, triangles=T, **kwargs)


_PHI = (1.0 + math.sqrt(5.0)) / 2.0

_ICOSAHEDRON_V = [
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
]
_ICOSAHEDRON_F = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]
_OCTAHEDRON_V = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
_OCTAHEDRON_F = [
    (4, 0, 2), (4, 2, 1), (4, 1, 3), (4, 3, 0),
    (5, 2, 0), (5, 1, 2), (5, 3, 1), (5, 0, 3),
]


def _normalize(v: np.ndarray, radius: float) -> np.ndarray:
    return v * (radius / math.sqrt(float(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])))


def _geodesic_sphere(subdiv: int, base: str, radius: float):
    if base == "icosahedron":
        verts, faces = _ICOSAHEDRON_V, _ICOSAHEDRON_F
    elif base == "octahedron":
        verts, faces = _OCTAHEDRON_V, _OCTAHEDRON_F
    else:
        raise MeshError(f"unknown sphere base {base!r}")
    P = [_normalize(np.array(v, dtype=float), radius) for v in verts]
    F = list(faces)
    for _ in range(subdiv):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = len(P)
                P.append(_normalize((P[i] + P[j]) / 2.0, radius))
            return cache[key]

        F2 = []
        for a, b, c in F:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            F2 += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = F2
    return np.array(P), np.array(F, dtype=np.int64)


def icosphere(subdiv: int = 1, base: str = "icosahedron", radius: float = 1.0) -> Mesh:
    """Geodesic sphere with cotangent stiffness.

    ``base="octahedron"`` gives a sphere whose equator ``z = 0`` is a cycle
    of edges, which is what the equatorial reflection needs: no icosahedral
    mirror plane is a union of mesh edges at any subdivision level.
    """
    if subdiv < 0:
        raise MeshError("subdivision level must be nonnegative")
    P, T = _geodesic_sphere(subdiv, base, radius)
    return from_triangles(
        P, T, meta={"kind": "icosphere", "subdiv": subdiv, "base": base, "radius": radius}
    )


def build_mesh(kind: str, **params) -> Mesh:
    """Dispatch to a generator by name.

    >>> build_mesh("torus_lattice", size=(8, 8)).vertex_count
    64
    """
    if kind == "torus_lattice":
        size = params.pop("size", (8, 8))
        if np.isscalar(size):
            size = (size, size)
        return torus_lattice(int(size[0]), int(size[1]), **params)
    if kind == "cylinder_collar":
        size = params.pop("size")
        return cylinder_collar(int(size[0]), int(size[1]), **params)
    if kind == "icosphere":
        return icosphere(**params)
    if kind == "path":
        return path_graph(**params)
    raise MeshError(f"unknown mesh kind {kind!r}")


# ----------------------------------------------------------------------------
# partitions and involutions


def _vertex_array(vs, n: int) -> np.ndarray:
    a = np.unique(np.asarray(list(vs) if not isinstance(vs, np.ndarray) else vs, dtype=np.int64))
    if a.size and (a[0] < 0 or a[-1] >= n):
        raise MeshError(f"vertex index outside range [0, {n})")
    return a


@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Disjoint vertex sets ``exterior | boundary | omega`` covering the mesh."""

    omega: np.ndarray
    boundary: np.ndarray
    exterior: np.ndarray

    def __post_init__(self):
        for name in ("omega", "boundary", "exterior"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), np.int64)))

    @property
    def closure(self) -> np.ndarray:
        """Omega together with its boundary."""
        return np.union1d(self.omega, self.boundary)

    @property
    def complement(self) -> np.ndarray:
        """Exterior together with the boundary (the closed set ``Omega^c``)."""
        return np.union1d(self.exterior, self.boundary)

    def separation_violations(self, mesh: Mesh) -> list[tuple[int, int]]:
        """Pairs ``(i, j)``, ``i`` in omega and ``j`` in exterior, with ``L_ij != 0``."""
        block = mesh.stiffness[self.omega][:, self.exterior].tocoo()
        keep = block.data != 0
        return [
            (int(self.omega[i]), int(self.exterior[j]))
            for i, j in zip(block.row[keep], block.col[keep])
        ]


def make_partition(mesh: Mesh, omega: Iterable[int]) -> RegionPartition:
    """Split the vertices into omega, its graph boundary, and the rest."""
    n = mesh.vertex_count
    om = _vertex_array(omega, n)
    if om.size == 0:
        raise MeshError("omega must be nonempty")
    if om.size == n:
        raise MeshError("omega must be a proper subset of the vertices")
    A = mesh.adjacency
    touched = np.zeros(n, dtype=bool)
    touched[A[om].indices] = True
    touched[om] = False
    boundary = np.flatnonzero(touched)
    inside = np.zeros(n, dtype=bool)
    inside[om] = True
    exterior = np.flatnonzero(~inside & ~touched)
    if exterior.size == 0:
        warnings.warn(
            "exterior of omega is empty; the boundary space may be trivial",
            MeshWarning,
            stacklevel=2,
        )
    return RegionPartition(om, boundary, exterior)


@dataclass(frozen=True, eq=False)
class Involution:
    """Isometric vertex involution swapping omega and exterior of ``partition``."""

    perm: np.ndarray
    partition: RegionPartition

    def __post_init__(self):
        object.__setattr__(self, "perm", _readonly(np.asarray(self.perm, np.int64)))

    def push(self, f: np.ndarray) -> np.ndarray:
        """Push a vector forward: ``(theta_* f)[theta(i)] = f[i]``."""
        f = np.asarray(f)
        out = np.empty_like(f)
        out[self.perm] = f
        return out


def validate_involution(
    mesh: Mesh, perm: Sequence[int], partition: RegionPartition, tol: float = 0.0
) -> Involution:
    """Check ``theta^2 = id``, isometry, and the swap/fix conditions.

    ``tol`` is a relative tolerance for the entrywise comparison of ``L`` and
    ``W``; the built-in generators are exactly symmetric so the default is 0.
    """
    n = mesh.vertex_count
    p = np.asarray(perm, dtype=np.int64)
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise InvolutionError("not_bijection", "perm is not a permutation of the vertices")
    fixed_pts = np.flatnonzero(p[p] != np.arange(n))
    if fixed_pts.size:
        raise InvolutionError("not_involution", f"theta(theta(i)) != i at vertices {fixed_pts[:5].tolist()}")
    L = mesh.stiffness
    Lp = L[p][:, p]
    diff = abs(Lp - L).max() if L.nnz else 0.0
    if diff > tol * max(1.0, abs(L).max()):
        raise InvolutionError("stiffness_not_preserved", f"max |L[theta,theta] - L| = {diff:.3e}")
    wdiff = np.abs(mesh.mass[p] - mesh.mass).max()
    if wdiff > tol * mesh.mass.max():
        raise InvolutionError("mass_not_preserved", f"max |W[theta] - W| = {wdiff:.3e}")
    if not np.array_equal(np.sort(p[partition.omega]), partition.exterior):
        raise InvolutionError("partition_not_swapped", "theta(omega) != exterior")
    moved = partition.boundary[p[partition.boundary] != partition.boundary]
    if moved.size:
        raise InvolutionError("boundary_not_fixed", f"boundary vertices moved: {moved[:5].tolist()}")
    return Involution(p, partition)


def lattice_reflection(mesh: Mesh, axis: int = 0) -> np.ndarray:
    """Permutation ``r -> -r mod nx`` (axis 0) or ``c -> -c mod ny`` (axis 1) on a torus lattice."""
    if mesh.meta.get("kind") != "torus_lattice":
        raise MeshError("lattice_reflection needs a torus_lattice mesh")
    nx, ny = mesh.meta["shape"]
    r, c = np.divmod(np.arange(nx * ny), ny)
    if axis == 0:
        r = (-r) % nx
    else:
        c = (-c) % ny
    return r * ny + c


def mirror_involution(mesh: Mesh, axis: int = 2) -> np.ndarray:
    """Permutation induced by ``x_axis -> -x_axis`` on an embedded mesh."""
    if mesh.positions is None:
        raise MeshError("mirror involution needs vertex positions")
    P = mesh.positions
    lookup = {tuple(p): i for i, p in enumerate(P.tolist())}
    perm = np.empty(len(P), dtype=np.int64)
    for i, p in enumerate(P.tolist()):
        q = list(p)
        q[axis] = -q[axis] + 0.0
        j = lookup.get(tuple(q))
        if j is None:
            raise MeshError(f"vertex {i} has no exact mirror image")
        perm[i] = j
    return perm


# ----------------------------------------------------------------------------
# gluing


@dataclass(frozen=True, eq=False)
class GluedMesh:
    """Result of identifying boundary cycles of two meshes.

    ``map_a[v]`` / ``map_b[v]`` give the glued index of source vertex ``v``.
    """

    mesh: Mesh
    map_a: np.ndarray
    map_b: np.ndarray
    seam: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "map_a", _readonly(np.asarray(self.map_a, np.int64)))
        object.__setattr__(self, "map_b", _readonly(np.asarray(self.map_b, np.int64)))

    @property
    def seam_vertices(self) -> np.ndarray:
        return np.unique(np.concatenate([np.asarray(c) for c in self.seam]))


def _as_cycles(cyc, mesh: Mesh) -> list[tuple[int, ...]]:
    if isinstance(cyc, str):
        return [mesh.cycles[cyc]]
    cyc = list(cyc)
    if cyc and isinstance(cyc[0], str):
        return [mesh.cycles[c] for c in cyc]
    if cyc and np.ndim(cyc[0]) == 0:
        return [tuple(int(i) for i in cyc)]
    return [tuple(int(i) for i in c) for c in cyc]


def collar_signature(mesh: Mesh, cycle: Sequence[int]) -> list[tuple]:
    """Per cycle position: (next cycle-edge weight, mass, sorted off-cycle weights)."""
    L = mesh.stiffness.tocsr()
    on = set(cycle)
    k = len(cycle)
    sig = []
    for a, v in enumerate(cycle):
        w_next = -float(L[v, cycle[(a + 1) % k]])
        row = L.getrow(v)
        off = sorted(-float(x) for j, x in zip(row.indices, row.data) if j not in on)
        sig.append((w_next, float(mesh.mass[v]), tuple(off)))
    return sig


def _check_cycle(mesh: Mesh, cycle: Sequence[int], label: str) -> None:
    if len(cycle) < 3:
        raise MeshError(f"{label}: cycle needs at least 3 vertices")
    if len(set(cycle)) != len(cycle):
        raise MeshError(f"{label}: cycle repeats a vertex")
    L = mesh.stiffness
    k = len(cycle)
    for a in range(k):
        i, j = cycle[a], cycle[(a + 1) % k]
        if L[i, j] == 0:
            raise MeshError(f"{label}: ({i}, {j}) is not an edge")
    bnd = mesh.boundary_edges() if (mesh.triangles is not None or mesh.quads is not None) else None
    if bnd is not None:
        for a in range(k):
            i, j = cycle[a], cycle[(a + 1) % k]
            if (min(i, j), max(i, j)) not in bnd:
                raise MeshError(f"{label}: edge ({i}, {j}) is not a boundary edge")


def glue_meshes(a: Mesh, cycle_a, b: Mesh, cycle_b, check_collar: bool = True) -> GluedMesh:
    """Identify ``cycle_a[i]`` with ``cycle_b[i]`` and sum the overlapping entries.

    Cycles can be given as vertex sequences, cycle names, or lists of either
    (to glue along several cycles at once).  Pass ``cycle_b`` in the order
    that realizes the orientation-reversing identification.  With
    ``check_collar`` the two collars (cycle edge weights, cycle masses, and
    off-cycle weights per cycle vertex) must agree exactly.

    Glued indices: the vertices of ``a`` keep their index, the remaining
    vertices of ``b`` follow in increasing order.
    """
    ca, cb = _as_cycles(cycle_a, a), _as_cycles(cycle_b, b)
    if len(ca) != len(cb):
        raise MeshError("different number of cycles on the two sides")
    ident: dict[int, int] = {}
    for k, (x, y) in enumerate(zip(ca, cb)):
        if len(x) != len(y):
            raise MeshError(f"cycle pair {k}: lengths {len(x)} and {len(y)} differ")
        _check_cycle(a, x, f"side a cycle {k}")
        _check_cycle(b, y, f"side b cycle {k}")
        if check_collar:
            sa, sb = collar_signature(a, x), collar_signature(b, y)
            for pos, (u, v) in enumerate(zip(sa, sb)):
                if u != v:
                    raise MeshError(
                        f"collar mismatch on cycle pair {k} at position {pos}: {u} vs {v}"
                    )
        for i, j in zip(x, y):
            if j in ident:
                raise MeshError(f"vertex {j} of b appears on two cycles")
            ident[j] = i
    na, nb = a.vertex_count, b.vertex_count
    map_b = np.empty(nb, dtype=np.int64)
    nxt = na
    for v in range(nb):
        if v in ident:
            map_b[v] = ident[v]
        else:
            map_b[v] = nxt
            nxt += 1
    n = nxt
    map_a = np.arange(na)

    contrib: dict[tuple[int, int], list[float]] = defaultdict(list)
    for src, mp in ((a, map_a), (b, map_b)):
        coo = sp.triu(src.stiffness, k=1).tocoo()
        for i, j, x in zip(coo.row, coo.col, coo.data):
            if x != 0:
                gi, gj = int(mp[i]), int(mp[j])
                contrib[(min(gi, gj), max(gi, gj))].append(-float(x))
    mass_parts: list[list[float]] = [[] for _ in range(n)]
    for src, mp in ((a, map_a), (b, map_b)):
        for v, w in enumerate(src.mass):
            mass_parts[mp[v]].append(float(w))

    pos = None
    if a.positions is not None and b.positions is not None:
        pos = np.zeros((n, 3))
        pos[map_b] = b.positions
        pos[map_a] = a.positions

    def cells(name):
        parts = [mp[getattr(src, name)] for src, mp in ((a, map_a), (b, map_b))
                 if getattr(src, name) is not None]
        return np.concatenate(parts) if parts else None

    seam = tuple(tuple(int(i) for i in x) for x in ca)
    cycles = {f"seam{k}": s for k, s in enumerate(seam)}
    glued_ids = set(ident.values())
    for src, mp, tag in ((a, map_a, "a"), (b, map_b, "b")):
        for name, cyc in src.cycles.items():
            img = tuple(int(mp[v]) for v in cyc)
            if not set(img) <= glued_ids:
                cycles[f"{tag}.{name}"] = img
    mesh = Mesh(
        _assemble(n, contrib),
        _mass_from_parts(n, mass_parts),
        positions=pos,
        triangles=cells("triangles"),
        quads=cells("quads"),
        cycles=cycles,
        meta={"kind": "glued", "sources": [dict(a.meta), dict(b.meta)]},
    )
    return GluedMesh(mesh, map_a, map_b, seam)


def sphere_halves(subdiv: int = 2, radius: float = 1.0) -> tuple[Mesh, Mesh]:
    """Upper (``z >= 0``) and lower (``z <= 0``) halves of the octahedral sphere.

    Each half is assembled from its own triangles only, so gluing the halves
    along ``"equator"`` gives back the full sphere.  Both equator cycles are
    ordered by azimuth, so they glue index by index.
    """
    P, T = _geodesic_sphere(subdiv, "octahedron", radius)
    halves = []
    for sign in (1.0, -1.0):
        keep_v = np.flatnonzero(sign * P[:, 2] >= 0.0)
        tri = T[np.all(sign * P[T, 2] >= 0.0, axis=1)]
        relabel = -np.ones(len(P), dtype=np.int64)
        relabel[keep_v] = np.arange(len(keep_v))
        Q = P[keep_v]
        eq = np.flatnonzero(Q[:, 2] == 0.0)
        eq = eq[np.argsort(np.arctan2(Q[eq, 1], Q[eq, 0]))]
        halves.append(
            from_triangles(
                Q, relabel[tri],
                cycles={"equator": tuple(int(i) for i in eq)},
                meta={"kind": "hemisphere", "subdiv": subdiv, "side": "upper" if sign > 0 else "lower"},
            )
        )
    return halves[0], halves[1]


# ----------------------------------------------------------------------------
# test vectors on meshes


def graph_distances(mesh: Mesh, source: int) -> np.ndarray:
    """Hop distances from ``source`` (``-1`` where unreachable)."""
    from scipy.sparse.csgraph import breadth_first_order

    A = mesh.adjacency
    order, pred = breadth_first_order(A, source, directed=False, return_predecessors=True)
    dist = -np.ones(mesh.vertex_count, dtype=np.int64)
    dist[source] = 0
    for v in order[1:]:
        dist[v] = dist[pred[v]] + 1
    return dist


def bump(mesh: Mesh, center: int, radius: int = 1, allowed: Iterable[int] | None = None) -> np.ndarray:
    """Positive tent function ``radius + 1 - dist`` on the graph ball around ``center``.

    ``allowed`` restricts the support further.  The result is a function;
    multiply by ``mesh.mass`` to pair it as a distribution.
    """
    d = graph_distances(mesh, center)
    f = np.where((d >= 0) & (d <= radius), radius + 1.0 - d, 0.0)
    if allowed is not None:
        mask = np.zeros(mesh.vertex_count, dtype=bool)
        mask[np.asarray(list(allowed), dtype=np.int64)] = True
        f = np.where(mask, f, 0.0)
    return f


# ----------------------------------------------------------------------------
# JSON


def mesh_to_json(mesh: Mesh) -> dict:
    coo = sp.triu(mesh.stiffness).tocoo()
    order = np.lexsort((coo.col, coo.row))
    return {
        "vertices": mesh.vertex_count,
        "positions": None if mesh.positions is None else mesh.positions.tolist(),
        "triangles": None if mesh.triangles is None else mesh.triangles.tolist(),
        "quads": None if mesh.quads is None else mesh.quads.tolist(),
        "stiffness": [
            [int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order
        ],
        "mass": mesh.mass.tolist(),
        "cycles": {k: list(v) for k, v in mesh.cycles.items()},
        "meta": dict(mesh.meta),
    }


def mesh_from_json(data: Mapping) -> Mesh:
    """Inverse of :func:`mesh_to_json`; raises :class:`MeshError` on bad input."""
    try:
        n = int(data["vertices"])
        entries = data["stiffness"]
        rows, cols, vals = [], [], []
        for i, j, x in entries:
            i, j = int(i), int(j)
            if j < i:
                raise MeshError("stiffness entries must be upper triangular")
            rows.append(i)
            cols.append(j)
            vals.append(float(x))
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(float(x))
        if any(r < 0 or r >= n for r in rows + cols):
            raise MeshError("stiffness index out of range")
        L = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return Mesh(
            L,
            np.asarray(data["mass"], dtype=float),
            positions=data.get("positions"),
            triangles=data.get("triangles"),
            quads=data.get("quads"),
            cycles=data.get("cycles") or {},
            meta=data.get("meta") or {},
        )
    except MeshError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"malformed mesh JSON: {exc}") from exc


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mesh_to_json(mesh), indent=1))


def load_mesh(path: str | Path) -> Mesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshError(f"{path}: not valid JSON ({exc})") from exc
    return mesh_from_json(data)
