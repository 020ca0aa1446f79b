"""Seeded generators for random meshes, partitions, vectors and polynomials.

Used by the scenario runner, the experiment scripts and the test suite so
that every random sweep is reproducible from one integer seed.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .mesh import Mesh, MeshWarning, RegionPartition, bump, cylinder_collar, icosphere, make_partition, path_graph, torus_lattice
from .sobolev import FieldOperator
from .wick import WickPolynomial

__all__ = [
    "random_mesh",
    "random_partition",
    "random_vector",
    "random_wick_poly",
    "random_family",
    "bump_basis",
]


def random_mesh(gen: np.random.Generator, max_vertices: int = 200) -> Mesh:
    """A torus lattice, cylinder, geodesic sphere or path with at most ``max_vertices`` vertices."""
    kinds = ["torus", "cylinder", "sphere", "path"]
    while True:
        kind = kinds[gen.integers(len(kinds))]
        if kind == "torus":
            nx, ny = gen.integers(3, 15, size=2)
            mesh = torus_lattice(int(nx), int(ny), spacing=float(gen.uniform(0.5, 2.0)))
        elif kind == "cylinder":
            n, k = int(gen.integers(3, 15)), int(gen.integers(2, 12))
            mesh = cylinder_collar(n, k, spacing=float(gen.uniform(0.5, 2.0)))
        elif kind == "sphere":
            base = "icosahedron" if gen.random() < 0.5 else "octahedron"
            mesh = icosphere(int(gen.integers(0, 3)), base=base)
        else:
            mesh = path_graph(int(gen.integers(4, 60)), weight=float(gen.uniform(0.5, 2.0)),
                              mass=float(gen.uniform(0.5, 2.0)))
        if mesh.vertex_count <= max_vertices:
            return mesh


def random_partition(mesh: Mesh, gen: np.random.Generator, max_tries: int = 100) -> RegionPartition:
    """Omega is a random subset (a graph ball or a scattered set) with a nonempty exterior."""
    n = mesh.vertex_count
    A = mesh.adjacency
    for _ in range(max_tries):
        if gen.random() < 0.6:
            ball = {int(gen.integers(n))}
            for _ in range(int(gen.integers(0, 4))):
                ball |= {int(j) for i in ball for j in A[i].indices}
            omega = np.array(sorted(ball))
        else:
            omega = np.flatnonzero(gen.random(n) < gen.uniform(0.05, 0.4))
        if omega.size == 0 or omega.size == n:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MeshWarning)
            part = make_partition(mesh, omega)
        if part.exterior.size:
            return part
    raise RuntimeError("could not draw a partition with a nonempty exterior")


def random_vector(n: int, allowed: Sequence[int], gen: np.random.Generator,
                  mean_zero: bool = False, sparse: bool = False) -> np.ndarray:
    """Gaussian entries on ``allowed`` (optionally thinned and/or centered)."""
    allowed = np.asarray(allowed, dtype=np.int64)
    v = np.zeros(n)
    idx = allowed
    if sparse and allowed.size > 2:
        idx = gen.choice(allowed, size=int(gen.integers(2, min(allowed.size, 6) + 1)), replace=False)
    v[idx] = gen.standard_normal(idx.size)
    if mean_zero:
        if idx.size < 2:
            raise ValueError("a mean-zero vector needs at least two support points")
        v[idx] -= v[idx].mean()
    return v


def random_wick_poly(fop: FieldOperator, allowed: Sequence[int], gen: np.random.Generator,
                     max_degree: int = 3, n_terms: int | None = None, mean_zero: bool = False,
                     basis: Sequence[np.ndarray] | None = None, constant: bool = True) -> WickPolynomial:
    """Sum of random Wick monomials with factors supported in ``allowed``.

    With ``basis`` the factors are drawn from that list instead of fresh
    Gaussian vectors.
    """
    n_terms = int(gen.integers(1, 4)) if n_terms is None else n_terms
    p = WickPolynomial.constant(fop.id, float(gen.standard_normal()) if constant else 0.0)
    for _ in range(n_terms):
        d = int(gen.integers(1, max_degree + 1))
        if basis is not None:
            fs = [basis[int(gen.integers(len(basis)))] for _ in range(d)]
        else:
            fs = [random_vector(fop.n, allowed, gen, mean_zero=mean_zero, sparse=gen.random() < 0.5)
                  for _ in range(d)]
        p = p + WickPolynomial.monomial(fop.id, fs, float(gen.standard_normal()))
    return p


def random_family(fop: FieldOperator, allowed: Sequence[int], gen: np.random.Generator,
                  size: int, max_degree: int = 3, mean_zero: bool = False) -> list[WickPolynomial]:
    """``size`` random polynomials; the constant 1 is always the first member."""
    fam = [WickPolynomial.constant(fop.id, 1.0)]
    while len(fam) < size:
        fam.append(random_wick_poly(fop, allowed, gen, max_degree, mean_zero=mean_zero,
                                    constant=not mean_zero))
    return fam[:size]


def bump_basis(mesh: Mesh, region: Sequence[int], radius: int = 1, count: int | None = None,
               gen: np.random.Generator | None = None) -> list[np.ndarray]:
    """Distributions ``W * bump`` centred at vertices of ``region`` and clipped to it."""
    region = np.asarray(region, dtype=np.int64)
    centers = region if count is None or gen is None else gen.choice(region, size=min(count, region.size), replace=False)
    return [mesh.mass * bump(mesh, int(c), radius, allowed=region) for c in centers]
