"""Gaussian field computations: moments, Wick polynomials, second quantization.

A polynomial is a finite linear combination of monomials in the fields
``phi(f) = f^T Phi``.  Factor vectors are interned in a process-wide table
and a monomial is keyed by the sorted tuple of its factor ids, which makes
the representation canonical up to multilinear rescaling of factors.  For
comparisons that must not depend on how factors are split, use
:func:`coordinate_form`, which expands onto vertex monomials.

:class:`WickPolynomial` carries the id of the covariance it is Wick ordered
against; :class:`PlainPolynomial` is an ordinary polynomial in the fields.
"""

from __future__ import annotations

import math
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import rng as _rng
from .sobolev import FieldOperator, _index, project_support

__all__ = [
    "MAX_DEGREE",
    "ContextError",
    "VECTORS",
    "PlainPolynomial",
    "WickPolynomial",
    "Estimate",
    "SampleBatch",
    "gaussian_moment",
    "expectation",
    "wick_inner",
    "wick_norm",
    "convert",
    "wick_product",
    "apply_gamma",
    "conditional_expectation",
    "sample_field",
    "conditional_sample",
    "mc_conditional_oracle",
    "coordinate_form",
    "coefficient_distance",
    "poly_allclose",
]

MAX_DEGREE = 8


class ContextError(ValueError):
    """A Wick polynomial was used with a covariance it is not ordered against."""


class _VectorTable:
    """Interning table: identical float vectors get identical ids."""

    def __init__(self):
        self._ids: dict[bytes, int] = {}
        self._vectors: list[np.ndarray] = []
        self._lock = threading.Lock()

    def intern(self, v) -> int:
        a = np.ascontiguousarray(v, dtype=np.float64).ravel() + 0.0  # drop -0.0
        key = len(a).to_bytes(8, "little") + a.tobytes()
        with self._lock:
            i = self._ids.get(key)
            if i is None:
                a.setflags(write=False)
                i = len(self._vectors)
                self._vectors.append(a)
                self._ids[key] = i
        return i

    def __getitem__(self, i: int) -> np.ndarray:
        return self._vectors[i]

    def stack(self, ids: Sequence[int]) -> np.ndarray:
        return np.column_stack([self._vectors[i] for i in ids])


VECTORS = _VectorTable()


def _canonical_terms(terms) -> dict[tuple[int, ...], float]:
    acc: dict[tuple[int, ...], float] = {}
    for k, c in terms:
        k = tuple(sorted(int(i) for i in k))
        if len(k) > MAX_DEGREE:
            raise ValueError(f"monomial degree {len(k)} exceeds the cap {MAX_DEGREE}")
        acc[k] = acc.get(k, 0.0) + float(c)
    return {k: c for k, c in acc.items() if c != 0.0}


class _Polynomial:
    def __init__(self, terms: Mapping[tuple[int, ...], float] | Iterable = ()):
        items = terms.items() if isinstance(terms, Mapping) else terms
        self.terms = _canonical_terms(items)

    # -- construction helpers ---------------------------------------------

    @staticmethod
    def _monomial_terms(factors: Sequence[np.ndarray], coef: float):
        factors = list(factors)
        if any(not np.any(np.asarray(f)) for f in factors):
            return {}
        return {tuple(VECTORS.intern(f) for f in factors): coef}

    def _new(self, terms):
        raise NotImplementedError

    # -- structure --------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((len(k) for k in self.terms), default=0)

    def vector_ids(self) -> list[int]:
        return sorted({i for k in self.terms for i in k})

    def factors(self, key: tuple[int, ...]) -> list[np.ndarray]:
        return [VECTORS[i] for i in key]

    def support(self) -> np.ndarray:
        """Vertices where some factor vector is nonzero."""
        ids = self.vector_ids()
        if not ids:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(np.any(VECTORS.stack(ids) != 0, axis=1))

    def homogeneous(self, k: int):
        return self._new({key: c for key, c in self.terms.items() if len(key) == k})

    def is_zero(self) -> bool:
        return not self.terms

    def constant_term(self) -> float:
        return self.terms.get((), 0.0)

    # -- arithmetic -------------------------------------------------------

    def _check_compatible(self, other) -> None:
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")

    def __add__(self, other):
        if np.isscalar(other):
            other = self._new({(): float(other)})
        self._check_compatible(other)
        return self._new(list(self.terms.items()) + list(other.terms.items()))

    __radd__ = __add__

    def __neg__(self):
        return self._new({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if not np.isscalar(other) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return self._new({k: float(other) * c for k, c in self.terms.items()})
        return NotImplemented

    def __rmul__(self, other):
        if np.isscalar(other):
            return self * other
        return NotImplemented

    def __len__(self) -> int:
        return len(self.terms)


class PlainPolynomial(_Polynomial):
    """Ordinary polynomial ``sum_k c_k phi(f_1) ... phi(f_k)``."""

    def _new(self, terms):
        return PlainPolynomial(terms)

    @classmethod
    def monomial(cls, factors: Sequence[np.ndarray], coef: float = 1.0) -> "PlainPolynomial":
        return cls(cls._monomial_terms(factors, coef))

    @classmethod
    def constant(cls, c: float) -> "PlainPolynomial":
        return cls({(): c})

    def __mul__(self, other):
        if isinstance(other, PlainPolynomial):
            acc = []
            for k1, c1 in self.terms.items():
                for k2, c2 in other.terms.items():
                    acc.append((k1 + k2, c1 * c2))
            return PlainPolynomial(acc)
        return super().__mul__(other)

    def __pow__(self, k: int) -> "PlainPolynomial":
        out = PlainPolynomial.constant(1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def evaluate(self, phi: np.ndarray) -> np.ndarray | float:
        """Value at one configuration (1-D) or at each row of a batch (2-D)."""
        phi = np.asarray(phi, dtype=float)
        single = phi.ndim == 1
        Phi = np.atleast_2d(phi)
        ids = self.vector_ids()
        X = Phi @ VECTORS.stack(ids) if ids else np.zeros((len(Phi), 0))
        col = {i: j for j, i in enumerate(ids)}
        out = np.zeros(len(Phi))
        for key, c in self.terms.items():
            term = np.full(len(Phi), c)
            for i in key:
                term = term * X[:, col[i]]
            out = out + term
        return float(out[0]) if single else out

    def __repr__(self) -> str:
        return f"PlainPolynomial({len(self.terms)} terms, degree {self.degree})"


class WickPolynomial(_Polynomial):
    """``sum_k c_k :phi(f_1) ... phi(f_k):`` ordered against covariance ``context``."""

    def __init__(self, context: str, terms: Mapping[tuple[int, ...], float] | Iterable = ()):
        super().__init__(terms)
        self.context = context

    def _new(self, terms):
        return WickPolynomial(self.context, terms)

    def _check_compatible(self, other) -> None:
        super()._check_compatible(other)
        if other.context != self.context:
            raise ContextError("cannot add Wick polynomials ordered against different covariances")

    @classmethod
    def monomial(cls, context: str, factors: Sequence[np.ndarray], coef: float = 1.0) -> "WickPolynomial":
        return cls(context, cls._monomial_terms(factors, coef))

    @classmethod
    def constant(cls, context: str, c: float) -> "WickPolynomial":
        return cls(context, {(): c})

    def rebase(self, context: str) -> "WickPolynomial":
        """Same coefficients and factors, Wick ordered against another covariance."""
        return WickPolynomial(context, self.terms)

    def __repr__(self) -> str:
        return f"WickPolynomial({self.context}, {len(self.terms)} terms, degree {self.degree})"


def _ctx(fop: FieldOperator, *polys) -> None:
    for p in polys:
        if isinstance(p, WickPolynomial) and p.context != fop.id:
            raise ContextError(
                f"polynomial is Wick ordered against {p.context}, not {fop.id}"
            )


def _gram_by_id(fop: FieldOperator, ids: Sequence[int]) -> tuple[np.ndarray, dict[int, int]]:
    ids = list(ids)
    if not ids:
        return np.zeros((0, 0)), {}
    V = VECTORS.stack(ids)
    G = fop.gram(V)
    return 0.5 * (G + G.T), {i: j for j, i in enumerate(ids)}


# ----------------------------------------------------------------------------
# pairings


def _hafnian(G: np.ndarray, idx: tuple[int, ...]) -> float:
    if not idx:
        return 1.0
    if len(idx) % 2:
        return 0.0
    first, rest = idx[0], idx[1:]
    total = 0.0
    for j in range(len(rest)):
        g = G[first, rest[j]]
        if g != 0.0:
            total += g * _hafnian(G, rest[:j] + rest[j + 1:])
    return total


_SUBSETS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _permanent(M: np.ndarray) -> float:
    """Ryser's formula, vectorized over all column subsets."""
    n = M.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return float(M[0, 0])
    if n not in _SUBSETS:
        masks = ((np.arange(1, 2 ** n)[:, None] >> np.arange(n)) & 1).astype(float)
        signs = (-1.0) ** masks.sum(axis=1)
        _SUBSETS[n] = (masks, signs)
    masks, signs = _SUBSETS[n]
    rowsums = M @ masks.T
    return float((-1) ** n * np.sum(signs * np.prod(rowsums, axis=0)))


def gaussian_moment(fop: FieldOperator, fs: Sequence[np.ndarray]) -> float:
    """``E[phi(f_1) ... phi(f_n)]`` as a sum over pair partitions."""
    fs = list(fs)
    if len(fs) > MAX_DEGREE:
        raise ValueError(f"moment of degree {len(fs)} exceeds the cap {MAX_DEGREE}")
    if len(fs) % 2:
        return 0.0
    if not fs:
        return 1.0
    G = fop.gram(np.column_stack(fs))
    G = 0.5 * (G + G.T)
    return _hafnian(G, tuple(range(len(fs))))


def expectation(fop: FieldOperator, p: _Polynomial) -> float:
    """Integral of a polynomial against the Gaussian measure."""
    if isinstance(p, WickPolynomial):
        _ctx(fop, p)
        return p.constant_term()
    G, col = _gram_by_id(fop, p.vector_ids())
    return math.fsum(c * _hafnian(G, tuple(col[i] for i in k)) for k, c in p.terms.items())


def wick_inner(fop: FieldOperator, a: WickPolynomial, b: WickPolynomial) -> float:
    """``int a b dmu``: monomials of equal degree pair to a permanent of covariances."""
    _ctx(fop, a, b)
    G, col = _gram_by_id(fop, sorted(set(a.vector_ids()) | set(b.vector_ids())))
    by_deg_b: dict[int, list] = defaultdict(list)
    for kb, cb in b.terms.items():
        by_deg_b[len(kb)].append(([col[i] for i in kb], cb))
    parts = []
    for ka, ca in a.terms.items():
        ra = [col[i] for i in ka]
        for rb, cb in by_deg_b.get(len(ka), ()):
            parts.append(ca * cb * _permanent(G[np.ix_(ra, rb)]))
    return math.fsum(parts)


def wick_norm(fop: FieldOperator, p: WickPolynomial) -> float:
    return math.sqrt(max(wick_inner(fop, p, p), 0.0))


# ----------------------------------------------------------------------------
# Wick <-> plain


def _matchings(items: tuple) -> Iterator[tuple[tuple, tuple]]:
    """All partial pairings of ``items``: yields (pairs, unpaired)."""
    if not items:
        yield (), ()
        return
    first, rest = items[0], items[1:]
    for pairs, single in _matchings(rest):
        yield pairs, (first,) + single
    for j in range(len(rest)):
        for pairs, single in _matchings(rest[:j] + rest[j + 1:]):
            yield ((first, rest[j]),) + pairs, single


def convert(fop: FieldOperator, poly: _Polynomial, target: str) -> _Polynomial:
    """Rewrite a polynomial in the Wick basis (``"wick"``) or the plain basis (``"plain"``).

    ``:phi(f_1)...phi(f_k): = sum over partial pairings of (-1)^{#pairs}
    prod (f_i, f_j)_{-1} prod_{unpaired} phi(f)``; the inverse map drops the
    sign.
    """
    if target == "plain":
        if isinstance(poly, PlainPolynomial):
            return poly
        _ctx(fop, poly)
        sign = -1.0
    elif target == "wick":
        if isinstance(poly, WickPolynomial):
            _ctx(fop, poly)
            return poly
        sign = 1.0
    else:
        raise ValueError(f"target must be 'wick' or 'plain', got {target!r}")
    G, col = _gram_by_id(fop, poly.vector_ids())
    acc = []
    for key, coef in poly.terms.items():
        for pairs, single in _matchings(key):
            c = coef * sign ** len(pairs)
            for i, j in pairs:
                c *= G[col[i], col[j]]
            acc.append((single, c))
    if target == "plain":
        return PlainPolynomial(acc)
    return WickPolynomial(fop.id, acc)


def wick_product(fop: FieldOperator, a: WickPolynomial, b: WickPolynomial) -> WickPolynomial:
    """Pointwise product of two Wick polynomials, re-expanded in the Wick basis."""
    _ctx(fop, a, b)
    return convert(fop, convert(fop, a, "plain") * convert(fop, b, "plain"), "wick")


# ----------------------------------------------------------------------------
# second quantization


def _map_vectors(p: WickPolynomial, images: Mapping[int, np.ndarray], context: str) -> WickPolynomial:
    new_id = {}
    for i, v in images.items():
        new_id[i] = VECTORS.intern(v) if np.any(v) else None
    acc = []
    for key, c in p.terms.items():
        ids = [new_id[i] for i in key]
        if any(i is None for i in ids):
            continue
        acc.append((ids, c))
    return WickPolynomial(context, acc)


def apply_gamma(
    fop: FieldOperator,
    T: Callable[[np.ndarray], np.ndarray] | np.ndarray | sp.spmatrix,
    p: WickPolynomial,
    context: str | None = None,
) -> WickPolynomial:
    """``Gamma(T)``: replace every factor ``f`` by ``T f``.

    ``T`` is a matrix or a callable on single vectors.  ``context`` re-tags
    the result (used when ``T`` maps into another mesh).
    """
    _ctx(fop, p)
    ids = p.vector_ids()
    if not ids:
        return WickPolynomial(context or p.context, p.terms)
    if callable(T) and not isinstance(T, np.ndarray) and not sp.issparse(T):
        images = {i: np.asarray(T(VECTORS[i]), dtype=float) for i in ids}
    else:
        img = np.asarray(T @ VECTORS.stack(ids))
        images = {i: img[:, j] for j, i in enumerate(ids)}
    return _map_vectors(p, images, context or p.context)


def conditional_expectation(fop: FieldOperator, A: Iterable[int], p: WickPolynomial) -> WickPolynomial:
    """``E[p | fields supported in A] = Gamma(e_A) p``."""
    _ctx(fop, p)
    ids = p.vector_ids()
    if not ids:
        return p
    img = project_support(fop, A, VECTORS.stack(ids))
    return _map_vectors(p, {i: img[:, j] for j, i in enumerate(ids)}, p.context)


# ----------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class SampleBatch:
    """Rows of ``values`` are independent field configurations."""

    values: np.ndarray
    seed: int
    stream: int = 0

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int
    seed: int

    @classmethod
    def from_values(cls, values: np.ndarray, seed: int) -> "Estimate":
        values = np.asarray(values, dtype=float)
        if len(values) < 2:
            raise ValueError("an estimate needs at least two samples")
        return cls(float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values))),
                   len(values), seed)

    def z(self, target: float) -> float:
        d = self.mean - target
        if self.stderr == 0.0:
            return 0.0 if d == 0.0 else math.copysign(math.inf, d)
        return d / self.stderr


def _cholesky(fop: FieldOperator, key, matrix_fn) -> np.ndarray:
    with fop._lock:
        R = fop._cache.get(key)
    if R is None:
        R = sla.cholesky(matrix_fn(), lower=False)
        with fop._lock:
            fop._cache[key] = R
    return R


def sample_field(fop: FieldOperator, seed: int, n: int, stream: int = 0) -> SampleBatch:
    """``n`` draws of ``Phi = R^{-1} z`` where ``S = R^T R``; covariance ``S^{-1}``."""
    if fop.massless:
        raise ValueError("sampling needs m > 0")
    R = _cholesky(fop, ("chol",), lambda: fop.matrix.toarray())
    z = _rng.stream(seed, 0, stream).standard_normal((int(n), fop.n))
    phi = sla.solve_triangular(R, z.T, lower=False).T
    return SampleBatch(np.ascontiguousarray(phi), int(seed), int(stream))


def conditional_sample(
    fop: FieldOperator, A: Iterable[int], phi_A: np.ndarray, gen: np.random.Generator, n: int
) -> np.ndarray:
    """Full configurations with ``Phi_A = phi_A`` and ``Phi_c`` drawn from
    ``N(-S_cc^{-1} S_cA phi_A, S_cc^{-1})``.

    ``phi_A`` lists values on the sorted vertices of ``A`` (a full-length
    vector is also accepted).
    """
    if fop.massless:
        raise ValueError("conditional sampling needs m > 0")
    A = _index(A, fop.n)
    phi_A = np.asarray(phi_A, dtype=float)
    if phi_A.shape == (fop.n,):
        phi_A = phi_A[A]
    if phi_A.shape != (A.size,):
        raise ValueError(f"phi_A has shape {phi_A.shape}, expected ({A.size},)")
    out = np.empty((int(n), fop.n))
    out[:, A] = phi_A
    c, lu, _, _, S_cA = fop._block(A)
    if c.size == 0:
        return out
    mean_c = -lu.solve(np.asarray(S_cA @ phi_A))
    R = _cholesky(fop, ("chol", A.tobytes()), lambda: fop.matrix[c][:, c].toarray())
    z = gen.standard_normal((int(n), c.size))
    out[:, c] = mean_c + sla.solve_triangular(R, z.T, lower=False).T
    return out


def mc_conditional_oracle(
    fop: FieldOperator,
    A: Iterable[int],
    p: _Polynomial,
    phi_A: np.ndarray,
    seed: int,
    n: int,
    stream: int = 0,
) -> Estimate:
    """Monte Carlo estimate of ``E[p | Phi_A = phi_A]`` by direct conditional sampling."""
    A = _index(A, fop.n)
    if A.size == 0 or A.size == fop.n:
        raise ValueError("conditioning set must be a nonempty proper subset")
    plain = convert(fop, p, "plain")
    X = conditional_sample(fop, A, phi_A, _rng.stream(seed, 1, stream), n)
    return Estimate.from_values(plain.evaluate(X), seed)


# ----------------------------------------------------------------------------
# canonical comparison


def coordinate_form(p: _Polynomial, tol: float = 0.0) -> dict[tuple[int, ...], float]:
    """Coefficients on vertex monomials ``phi_{i_1} ... phi_{i_k}`` (sorted indices).

    Entries with ``|coef| <= tol`` are dropped.
    """
    n = max((len(VECTORS[i]) for i in p.vector_ids()), default=1)
    codes: dict[int, list[np.ndarray]] = defaultdict(list)
    weights: dict[int, list[np.ndarray]] = defaultdict(list)
    const = 0.0
    for key, coef in p.terms.items():
        k = len(key)
        if k == 0:
            const += coef
            continue
        vecs = [VECTORS[i] for i in key]
        U = np.flatnonzero(np.any(np.vstack(vecs) != 0, axis=0))
        T = np.array(coef)
        for v in vecs:
            T = np.multiply.outer(T, v[U])
        labels = np.sort(U[np.indices(T.shape).reshape(k, -1).T], axis=1)
        codes[k].append(_encode(labels, n))
        weights[k].append(T.ravel())
    out: dict[tuple[int, ...], float] = {}
    if const != 0.0 and abs(const) > tol:
        out[()] = const
    for k in sorted(codes):
        c = np.concatenate(codes[k])
        w = np.concatenate(weights[k])
        if c.ndim == 1 and float(n) ** k <= 2 ** 24:
            dense = np.bincount(c, weights=w, minlength=n ** k)
            uniq = np.flatnonzero(dense)
            sums = dense[uniq]
        else:
            uniq, inv = np.unique(c, axis=0, return_inverse=True)
            sums = np.bincount(inv.reshape(-1), weights=w, minlength=len(uniq))
        keep = np.abs(sums) > tol
        rows = _decode(uniq[keep], n, k)
        out.update(zip(map(tuple, rows.tolist()), sums[keep].tolist()))
    return out


def _encode(labels: np.ndarray, n: int) -> np.ndarray:
    """Sorted index rows as mixed-radix integers (rows kept when they would overflow)."""
    k = labels.shape[1]
    if k * math.log2(max(n, 2)) < 62:
        return labels.astype(np.int64) @ (n ** np.arange(k - 1, -1, -1, dtype=np.int64))
    return labels


def _decode(codes: np.ndarray, n: int, k: int) -> np.ndarray:
    if codes.ndim == 2:
        return codes
    out = np.empty((len(codes), k), dtype=np.int64)
    c = codes.copy()
    for j in range(k - 1, -1, -1):
        c, out[:, j] = np.divmod(c, n)
    return out


def coefficient_distance(p: _Polynomial, q: _Polynomial) -> tuple[float, float]:
    """(max coefficient difference, max coefficient magnitude) in coordinate form."""
    if isinstance(p, WickPolynomial) != isinstance(q, WickPolynomial):
        raise TypeError("cannot compare Wick and plain polynomials coefficientwise")
    if isinstance(p, WickPolynomial) and p.context != q.context:
        raise ContextError("polynomials are ordered against different covariances")
    a, b = coordinate_form(p), coordinate_form(q)
    keys = set(a) | set(b)
    diff = max((abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys), default=0.0)
    scale = max((abs(c) for c in list(a.values()) + list(b.values())), default=0.0)
    return diff, scale


def poly_allclose(p: _Polynomial, q: _Polynomial, rtol: float = 1e-9) -> bool:
    diff, scale = coefficient_distance(p, q)
    return diff <= rtol * max(1.0, scale)
