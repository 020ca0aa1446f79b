"""Reflection positivity for reflection-symmetric meshes.

Given an involution ``theta`` that swaps omega and exterior and fixes the
boundary ``B`` pointwise, ``Theta = Gamma(theta_*)`` acts on Wick
polynomials factorwise.  For a family ``F_1..F_k`` of polynomials in the
fields on ``omega + B`` the Gram matrix ``M_ij = int Theta(F_i) F_j dmu``
must be positive semidefinite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mesh import Involution, Mesh, MeshError, icosphere, lattice_reflection, make_partition, mirror_involution, torus_lattice, validate_involution
from .sobolev import FieldOperator, assemble_operator, is_mean_zero
from .wick import VECTORS, WickPolynomial, _ctx, apply_gamma, wick_inner

__all__ = [
    "SupportError",
    "GramReport",
    "reflect_poly",
    "rp_gram",
    "check_family_support",
    "rp_inner",
    "torus_reflection",
    "sphere_reflection",
]

DEFAULT_TOL = 1e-9


class SupportError(ValueError):
    """A polynomial has a factor supported outside the allowed region."""

    def __init__(self, message: str, offending: Sequence[int]):
        super().__init__(f"{message}; offending vertices {list(offending)[:10]}")
        self.offending = list(offending)


@dataclass
class GramReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    tol: float
    mass_mode: str
    asymmetry: float
    witnesses: list[str] = field(default_factory=list)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0]) if len(self.eigenvalues) else 0.0

    @property
    def scale(self) -> float:
        """Spectral norm of the Gram matrix."""
        return float(np.abs(self.eigenvalues).max()) if len(self.eigenvalues) else 0.0

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue >= -self.tol * self.scale

    @property
    def null_dimension(self) -> int:
        """Number of eigenvalues within ``tol * scale`` of zero (null vectors of the RP form)."""
        return int(np.sum(np.abs(self.eigenvalues) <= self.tol * self.scale))

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "scale": self.scale,
            "tolerance": self.tol,
            "mass_mode": self.mass_mode,
            "asymmetry": self.asymmetry,
            "null_dimension": self.null_dimension,
            "verdict": "pass" if self.passed else "fail",
            "witnesses": list(self.witnesses),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def reflect_poly(fop: FieldOperator, inv: Involution, p: WickPolynomial) -> WickPolynomial:
    """``Theta p``: every factor ``f`` replaced by ``theta_* f``."""
    if len(inv.perm) != fop.n:
        raise ValueError("involution does not match the mesh")
    return apply_gamma(fop, lambda f: inv.push(f), p)


def check_family_support(
    family: Sequence[WickPolynomial], allowed: np.ndarray, n: int, mean_zero: bool = False
) -> None:
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(allowed, dtype=np.int64)] = True
    for k, F in enumerate(family):
        for i in F.vector_ids():
            v = VECTORS[i]
            bad = np.flatnonzero((v != 0) & ~mask)
            if bad.size:
                raise SupportError(f"family member {k} has a factor outside the allowed region", bad)
            if mean_zero and not is_mean_zero(v):
                raise SupportError(f"family member {k} has a factor with nonzero mean", [])


def rp_inner(fop: FieldOperator, inv: Involution, F: WickPolynomial, G: WickPolynomial) -> float:
    """``int Theta(F) G dmu``."""
    return wick_inner(fop, reflect_poly(fop, inv, F), G)


def rp_gram(
    fop_or_mesh: FieldOperator | Mesh,
    inv: Involution,
    family: Sequence[WickPolynomial],
    mass_mode: str = "massive",
    tol: float = DEFAULT_TOL,
    check_support: bool = True,
    witnesses: Sequence[str] = (),
) -> GramReport:
    """Gram matrix of the reflected pairing on ``family``.

    ``massive``: factors must live on ``omega + B`` and the operator must
    have ``m > 0``.  ``zero_mass_limit``: factors must live on omega only and
    be mean-zero; pairings use the massless pseudo-inverse, and a mesh (or
    an ``m = 0`` operator) is expected.  ``check_support=False`` skips the
    support checks; it exists to exhibit counterexamples.
    """
    if mass_mode == "massive":
        if not isinstance(fop_or_mesh, FieldOperator) or fop_or_mesh.massless:
            raise ValueError("massive mode needs a FieldOperator with m > 0")
        fop = fop_or_mesh
        allowed = inv.partition.closure
    elif mass_mode == "zero_mass_limit":
        if isinstance(fop_or_mesh, Mesh):
            fop = assemble_operator(fop_or_mesh, 0.0)
        else:
            fop = fop_or_mesh
            if not fop.massless:
                raise ValueError("zero_mass_limit mode needs an m = 0 operator or a mesh")
        allowed = inv.partition.omega
    else:
        raise ValueError(f"unknown mass_mode {mass_mode!r}")
    _ctx(fop, *family)
    if check_support:
        check_family_support(family, allowed, fop.n, mean_zero=(mass_mode == "zero_mass_limit"))
    reflected = [reflect_poly(fop, inv, F) for F in family]
    k = len(family)
    M = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            M[i, j] = wick_inner(fop, reflected[i], family[j])
    asym = float(np.abs(M - M.T).max()) if k else 0.0
    eig = np.linalg.eigvalsh(0.5 * (M + M.T)) if k else np.zeros(0)
    return GramReport(M, eig, tol, mass_mode, asym, list(witnesses))


def torus_reflection(nx: int = 8, ny: int | None = None, spacing: float = 1.0) -> tuple[Mesh, Involution]:
    """Torus lattice with the reflection ``r -> -r``; omega is rows ``1 .. nx/2 - 1``."""
    if nx % 2 or nx < 4:
        raise MeshError("torus reflection needs an even nx >= 4")
    mesh = torus_lattice(nx, ny, spacing)
    ny = mesh.meta["shape"][1]
    omega = np.arange(ny, (nx // 2) * ny)
    part = make_partition(mesh, omega)
    return mesh, validate_involution(mesh, lattice_reflection(mesh, 0), part)


def sphere_reflection(subdiv: int = 2, radius: float = 1.0) -> tuple[Mesh, Involution]:
    """Octahedral geodesic sphere with the mirror ``z -> -z``; omega is ``z > 0``."""
    mesh = icosphere(subdiv, base="octahedron", radius=radius)
    omega = np.flatnonzero(mesh.positions[:, 2] > 0)
    part = make_partition(mesh, omega)
    return mesh, validate_involution(mesh, mirror_involution(mesh, 2), part)
