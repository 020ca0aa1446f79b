"""The operator ``S = L + m^2 W`` and the H^{-1}/H^{1} geometry it defines.

Test vectors are plain arrays ``f`` paired against functions as ``f^T u``,
so ``(f, g)_{-1} = f^T S^{-1} g`` is the field covariance.  A function ``u``
becomes a test vector through the mass matrix, ``W * u``.

For ``m = 0`` the pairing is restricted to mean-zero vectors (``1^T f = 0``)
and computed with the pseudo-inverse of ``L`` (constant mode deflated).
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, MeshError, RegionPartition

__all__ = [
    "FieldOperator",
    "assemble_operator",
    "sobolev_inner",
    "support",
    "is_mean_zero",
    "project_support",
    "projection_matrix",
    "triple_decompose",
    "Decomposition",
    "premarkov_residual",
    "zero_mode_coefficient",
    "zero_mode_asymptotics",
]

MEAN_ZERO_TOL = 1e-12


def support(f: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Indices where ``|f| > tol``."""
    return np.flatnonzero(np.abs(np.asarray(f)) > tol)


def is_mean_zero(f: np.ndarray, tol: float = MEAN_ZERO_TOL) -> bool:
    f = np.asarray(f, dtype=float)
    return abs(f.sum()) <= tol * max(1.0, np.abs(f).sum())


def _index(A, n: int) -> np.ndarray:
    a = np.unique(np.asarray(list(A) if not isinstance(A, np.ndarray) else A, dtype=np.int64))
    if a.size and (a[0] < 0 or a[-1] >= n):
        raise ValueError("vertex set outside the mesh")
    return a


@dataclass(frozen=True, eq=False)
class FieldOperator:
    """``S = L + m^2 W`` on a mesh, with solves and the covariance it defines.

    ``solver="factor"`` uses a sparse LU factorization (bordered with the
    constant vector when ``m = 0``); ``solver="spectral"`` uses the dense
    generalized eigendecomposition ``L psi = lambda W psi``, which stays
    accurate as ``m -> 0``.
    """

    mesh: Mesh
    mass: float
    solver: str = "factor"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.mesh.vertex_count

    @property
    def massless(self) -> bool:
        return self.mass == 0.0

    @cached_property
    def matrix(self) -> sp.csc_matrix:
        S = self.mesh.stiffness + (self.mass ** 2) * sp.diags(self.mesh.mass)
        return sp.csc_matrix(S)

    @cached_property
    def id(self) -> str:
        """Covariance identity used to tag Wick polynomials."""
        h = hashlib.sha256(f"{self.mesh.fingerprint()}|{float(self.mass)!r}".encode())
        return "fop-" + h.hexdigest()[:16]

    @cached_property
    def zero_mode(self) -> np.ndarray:
        """Constant ``1 / sqrt(Vol)``, the W-normalized kernel vector of ``L``."""
        return np.full(self.n, 1.0 / np.sqrt(self.mesh.volume))

    @cached_property
    def _lu(self):
        if not self.massless:
            return splu(self.matrix)
        one = sp.csc_matrix(np.ones((self.n, 1)))
        bordered = sp.bmat([[self.mesh.stiffness, one], [one.T, None]], format="csc")
        return splu(bordered)

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Generalized eigenpairs of ``(L, W)``, eigenvectors W-orthonormal."""
        return sla.eigh(self.mesh.stiffness.toarray(), np.diag(self.mesh.mass))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``S u``."""
        return self.matrix @ np.asarray(u, dtype=float)

    def solve(self, f: np.ndarray) -> np.ndarray:
        """``S^{-1} f`` (``m = 0``: pseudo-inverse applied to the mean-zero part of ``f``)."""
        f = np.asarray(f, dtype=float)
        if self.solver == "spectral":
            lam, psi = self.spectrum
            d = lam + self.mass ** 2
            inv = np.zeros_like(d)
            if self.massless:
                inv[1:] = 1.0 / d[1:]
            else:
                inv = 1.0 / d
            g = f.reshape(self.n, -1)
            return (psi @ (inv[:, None] * (psi.T @ g))).reshape(f.shape)
        if not self.massless:
            return self._lu.solve(f)
        g = f.reshape(self.n, -1)
        g = g - g.mean(axis=0)
        rhs = np.vstack([g, np.zeros((1, g.shape[1]))])
        return self._lu.solve(rhs)[: self.n].reshape(f.shape)

    @cached_property
    def covariance(self) -> np.ndarray:
        """Dense ``S^{-1}`` (``m = 0``: a generalized inverse valid on mean-zero pairs)."""
        C = self.solve(np.eye(self.n))
        return 0.5 * (C + C.T)

    def check_pairable(self, *vectors: np.ndarray) -> None:
        if not self.massless:
            return
        for v in vectors:
            v = np.asarray(v, dtype=float).reshape(self.n, -1)
            for col in v.T:
                if not is_mean_zero(col):
                    raise ValueError(
                        "m = 0 pairing requires mean-zero test vectors (1^T f = 0); "
                        f"got 1^T f = {col.sum():.3e}"
                    )

    def gram(self, F: np.ndarray, G: np.ndarray | None = None) -> np.ndarray:
        """Matrix of pairings ``(F[:, a], G[:, b])_{-1}`` for column stacks."""
        F = np.asarray(F, dtype=float).reshape(self.n, -1)
        G = F if G is None else np.asarray(G, dtype=float).reshape(self.n, -1)
        self.check_pairable(F, G)
        return F.T @ self.solve(G)

    def pair(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(self.gram(f, g)[0, 0])

    # -- support projections ------------------------------------------------

    def _block(self, A: np.ndarray):
        """Cached pieces for projecting onto ``A``: complement, LU of ``S_cc``, blocks."""
        key = A.tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        mask = np.ones(self.n, dtype=bool)
        mask[A] = False
        c = np.flatnonzero(mask)
        S = self.matrix
        S_cc = sp.csc_matrix(S[c][:, c])
        entry = (c, splu(S_cc) if c.size else None, S[A][:, A].tocsr(),
                 S[A][:, c].tocsr(), S[c][:, A].tocsr())
        with self._lock:
            self._cache[key] = entry
        return entry

    def harmonic_extension(self, A, values: np.ndarray) -> np.ndarray:
        """Vector equal to ``values`` on ``A`` with ``(S u)_i = 0`` off ``A``."""
        A = _index(A, self.n)
        values = np.asarray(values, dtype=float)
        out = np.zeros((self.n,) + values.shape[1:])
        out[A] = values
        c, lu, _, _, S_cA = self._block(A)
        if c.size:
            out[c] = -lu.solve(np.asarray(S_cA @ values))
        return out


def assemble_operator(mesh: Mesh, m: float, solver: str = "factor") -> FieldOperator:
    """Build ``S = L + m^2 W``; ``m = 0`` needs a connected mesh."""
    m = float(m)
    if m < 0 or not np.isfinite(m):
        raise ValueError(f"mass must be a nonnegative finite number, got {m}")
    if solver not in ("factor", "spectral"):
        raise ValueError(f"unknown solver {solver!r}")
    if m == 0.0 and not mesh.is_connected():
        raise MeshError("m = 0 on a disconnected mesh: the kernel of L is not just the constants")
    return FieldOperator(mesh, m, solver)


def sobolev_inner(fop: FieldOperator, order: int, u: np.ndarray, v: np.ndarray) -> float:
    """``(u, v)_{-1} = u^T S^{-1} v`` or ``(u, v)_{+1} = u^T S v``."""
    if order == -1:
        return fop.pair(u, v)
    if order == 1:
        return float(np.asarray(u, float) @ fop.apply(v))
    raise ValueError("order must be +1 or -1")


def project_support(fop: FieldOperator, A: Iterable[int], f: np.ndarray, method: str = "schur") -> np.ndarray:
    """H^{-1}-orthogonal projection ``e_A f`` onto vectors supported in ``A``.

    On ``A`` the result is ``(Sigma_AA)^{-1} (Sigma f)_A`` with ``Sigma =
    S^{-1}``.  The default evaluates it as ``S`` applied to the harmonic
    extension of ``(S^{-1} f)|_A``, i.e. through the Schur complement of
    ``S_cc``; ``method="dense"`` uses the covariance blocks directly.
    ``f`` may be a single vector or a column stack.
    """
    if fop.massless:
        raise ValueError("support projections need m > 0")
    A = _index(A, fop.n)
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    if A.size == 0:
        return out
    if A.size == fop.n:
        return f.copy()
    u_A = fop.solve(f)[A]
    if method == "dense":
        C = fop.covariance
        out[A] = sla.solve(C[np.ix_(A, A)], u_A, assume_a="pos")
    elif method == "schur":
        c, lu, S_AA, S_Ac, S_cA = fop._block(A)
        out[A] = S_AA @ u_A - S_Ac @ lu.solve(np.asarray(S_cA @ u_A))
    else:
        raise ValueError(f"unknown method {method!r}")
    return out


def projection_matrix(fop: FieldOperator, A: Iterable[int], method: str = "schur") -> np.ndarray:
    """Dense matrix of ``e_A`` acting on R^n."""
    return project_support(fop, A, np.eye(fop.n), method=method)


class Decomposition(NamedTuple):
    exterior: np.ndarray
    boundary: np.ndarray
    interior: np.ndarray


def triple_decompose(fop: FieldOperator, partition: RegionPartition, f: np.ndarray) -> Decomposition:
    """Split ``f = S u_ext + h + S u_int`` with ``h`` on the boundary.

    ``u_ext`` vanishes off the exterior and ``u_int`` off omega.  Entries of
    the three parts are exact copies of ``f`` away from the boundary; the
    boundary entries carry the only round-off.
    """
    if fop.massless:
        raise ValueError("the three-way decomposition needs m > 0")
    f = np.asarray(f, dtype=float)
    p = partition
    u = fop.solve(f)
    w = u - fop.harmonic_extension(p.boundary, u[p.boundary])
    w_ext = np.zeros_like(w)
    w_ext[p.exterior] = w[p.exterior]
    w_int = np.zeros_like(w)
    w_int[p.omega] = w[p.omega]
    f_ext = np.zeros_like(f)
    f_int = np.zeros_like(f)
    f_ext[p.exterior] = f[p.exterior]
    f_int[p.omega] = f[p.omega]
    S = fop.matrix
    f_ext[p.boundary] = S[p.boundary] @ w_ext
    f_int[p.boundary] = S[p.boundary] @ w_int
    f_bdry = np.zeros_like(f)
    f_bdry[p.boundary] = f[p.boundary] - f_ext[p.boundary] - f_int[p.boundary]
    return Decomposition(f_ext, f_bdry, f_int)


def premarkov_residual(fop: FieldOperator, partition: RegionPartition) -> float:
    """``|| E_{Omega^c} E_{closure} - E_{boundary} ||_2`` for the projection matrices."""
    E_c = projection_matrix(fop, partition.complement)
    E_cl = projection_matrix(fop, partition.closure)
    E_b = projection_matrix(fop, partition.boundary)
    return float(np.linalg.norm(E_c @ E_cl - E_b, 2))


def zero_mode_coefficient(mesh: Mesh, u: np.ndarray) -> float:
    """``<u, psi_0> = psi_0^T W u`` for a function ``u``."""
    return float(np.sum(mesh.mass * np.asarray(u, float)) / np.sqrt(mesh.volume))


def zero_mode_asymptotics(mesh: Mesh, u: np.ndarray, v: np.ndarray, m: float) -> tuple[float, float]:
    """``(m^2 <u, (-Delta + m^2)^{-1} v>, u_0 v_0)`` for functions ``u``, ``v``.

    The left value is computed from the generalized eigendecomposition, so it
    is accurate for very small ``m`` where a factorization would lose digits.
    """
    fop = assemble_operator(mesh, m, solver="spectral")
    Wu = mesh.mass * np.asarray(u, float)
    Wv = mesh.mass * np.asarray(v, float)
    lam, psi = fop.spectrum
    a, b = psi.T @ Wu, psi.T @ Wv
    lhs = float(np.sum(m * m * a * b / (lam + m * m)))
    return lhs, zero_mode_coefficient(mesh, u) * zero_mode_coefficient(mesh, v)
