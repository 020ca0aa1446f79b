"""Wick-ordered polynomial interactions and the measure ``nu``.

``V_A(Phi) = sum_{i in A} W_i :P(Phi_i):_{c_i}`` with ``c_i = (S^{-1})_ii``
and ``d nu = exp(-V_M) d mu / Z``.  Expectations under ``nu`` (and its
conditional expectations) are ratio estimators over exact Gaussian draws
from ``mu``, reweighted by ``exp(-V)``.  No Markov chains are involved.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng as _rng
from .mesh import RegionPartition
from .positivity import SupportError
from .sobolev import FieldOperator, _index
from .wick import VECTORS, PlainPolynomial, conditional_sample, sample_field

__all__ = [
    "DegenerateWeightsWarning",
    "ESS_MIN",
    "Potential",
    "wick_power",
    "wick_potential",
    "NuEstimate",
    "nu_moment",
    "nu_conditional",
    "MarkovRow",
    "MarkovReport",
    "nu_markov_report",
    "grid_conditional",
]

ESS_MIN = 10.0
DEFAULT_BATCHES = 20


class DegenerateWeightsWarning(RuntimeWarning):
    """Importance weights concentrated on too few samples."""


def wick_power(x: np.ndarray, n: int, c) -> np.ndarray:
    """``:x^n:_c = c^{n/2} He_n(x / sqrt(c))`` via the three-term recursion."""
    x = np.asarray(x, dtype=float)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for k in range(n):
        prev, cur = cur, x * cur - k * c * prev
    return cur


@dataclass(frozen=True, eq=False)
class Potential:
    """``V_A`` for a fixed field operator.

    ``coeffs[k]`` multiplies ``:x^k:`` (already scaled by ``lambda``);
    ``variances[j]`` is the Wick constant of ``region[j]``.
    """

    coeffs: np.ndarray
    region: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    context: str

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def restrict(self, B: Iterable[int]) -> "Potential":
        """The same density summed over ``region & B`` only."""
        keep = np.isin(self.region, np.asarray(list(B) if not isinstance(B, np.ndarray) else B))
        return Potential(self.coeffs, self.region[keep], self.variances[keep],
                         self.weights[keep], self.context)

    def density(self, x: np.ndarray, c) -> np.ndarray:
        """``:P(x):_c`` elementwise."""
        out = np.zeros_like(np.asarray(x, dtype=float))
        for k, a in enumerate(self.coeffs):
            if a != 0.0:
                out = out + a * wick_power(x, k, c)
        return out

    def __call__(self, phi: np.ndarray) -> np.ndarray | float:
        """``V_A`` for one configuration ``(V,)`` or a batch ``(n, V)``."""
        phi = np.asarray(phi, dtype=float)
        vals = self.density(phi[..., self.region], self.variances)
        return vals @ self.weights


def wick_potential(fop: FieldOperator, A, coeffs: Sequence[float], lam: float = 1.0) -> Potential:
    """Build ``V_A`` for ``lam * P`` with ``P(x) = sum_k coeffs[k] x^k``.

    ``A`` is a vertex set or ``"all"``.  Constant and zero polynomials are
    allowed; otherwise the top degree must be even with a positive leading
    coefficient.
    """
    if fop.massless:
        raise ValueError("interacting measures need m > 0")
    a = np.trim_zeros(np.asarray(coeffs, dtype=float) * float(lam), "b")
    if a.size > 1:
        if (a.size - 1) % 2:
            raise ValueError(f"P has odd top degree {a.size - 1}; not bounded below")
        if a[-1] < 0:
            raise ValueError("P has a negative leading coefficient; not bounded below")
    if a.size == 0:
        a = np.zeros(1)
    region = np.arange(fop.n) if (isinstance(A, str) and A == "all") else _index(A, fop.n)
    c = np.diagonal(fop.covariance)[region].copy()
    return Potential(a, region, c, fop.mesh.mass[region].copy(), fop.id)


@dataclass
class NuEstimate:
    """Ratio estimate ``sum w F / sum w``.

    ``n_outer`` counts batches and ``n_inner`` samples per batch; ``stderr``
    comes from batch means of ``num_b - value * den_b``.
    """

    value: float
    stderr: float
    n_outer: int
    n_inner: int
    seed: int
    ess: float = math.inf
    degenerate: bool = False

    def z(self, target: float) -> float:
        d = self.value - target
        if self.stderr == 0.0:
            return 0.0 if d == 0.0 else math.copysign(math.inf, d)
        return d / self.stderr


def _ratio(F_vals: np.ndarray, logw: np.ndarray, seed: int, batches: int) -> NuEstimate:
    n = len(logw)
    batches = max(2, min(int(batches), n // 2))
    per = n // batches
    if per < 1:
        raise ValueError("not enough samples for batch means")
    w = np.exp(logw - logw.max())
    ess = float(w.sum() ** 2 / np.dot(w, w))
    num = (w * F_vals)[: per * batches].reshape(batches, per).mean(axis=1)
    den = w[: per * batches].reshape(batches, per).mean(axis=1)
    value = float(num.mean() / den.mean())
    resid = num - value * den
    stderr = float(resid.std(ddof=1) / math.sqrt(batches) / den.mean())
    degenerate = ess < ESS_MIN
    if degenerate:
        warnings.warn(f"effective sample size {ess:.1f} < {ESS_MIN:g}", DegenerateWeightsWarning, stacklevel=3)
    return NuEstimate(value, stderr, batches, per, int(seed), ess, degenerate)


def _check_context(fop: FieldOperator, pot: Potential) -> None:
    if pot.context != fop.id:
        raise ValueError("potential was built for a different field operator")


def nu_moment(fop: FieldOperator, pot: Potential, F: PlainPolynomial, seed: int, n: int,
              stream: int = 0, batches: int = DEFAULT_BATCHES) -> NuEstimate:
    """``E_nu[F] = E[F exp(-V)] / E[exp(-V)]`` by reweighting draws from ``mu``."""
    _check_context(fop, pot)
    phi = sample_field(fop, seed, n, stream).values
    return _ratio(np.asarray(F.evaluate(phi), dtype=float), -pot(phi), seed, batches)


def _measurable_on(F: PlainPolynomial, A: np.ndarray, n: int) -> bool:
    mask = np.zeros(n, dtype=bool)
    mask[A] = True
    return all(not np.any((VECTORS[i] != 0) & ~mask) for i in F.vector_ids())


def _conditional(fop, pot, A, F, phi_A, gen, n, seed, batches) -> NuEstimate:
    phi_A = np.asarray(phi_A, dtype=float)
    if phi_A.shape == (fop.n,) and A.size != fop.n:
        phi_A = phi_A[A]
    if phi_A.shape != (A.size,):
        raise ValueError(f"phi_A has shape {phi_A.shape}, expected ({A.size},)")
    if _measurable_on(F, A, fop.n):
        full = np.zeros(fop.n)
        full[A] = phi_A
        return NuEstimate(float(F.evaluate(full)), 0.0, 1, 1, int(seed))
    comp = np.setdiff1d(np.arange(fop.n), A)
    phi = conditional_sample(fop, A, phi_A, gen, n)
    return _ratio(np.asarray(F.evaluate(phi), dtype=float), -pot.restrict(comp)(phi), seed, batches)


def nu_conditional(fop: FieldOperator, pot: Potential, A, F: PlainPolynomial, phi_A: np.ndarray,
                   seed: int, n: int, stream: int = 0, batches: int = DEFAULT_BATCHES) -> NuEstimate:
    """``E^nu_A F`` at ``Phi_A = phi_A``: reweight conditional Gaussian draws by ``exp(-V_{A^c})``.

    When ``F`` only depends on the fields in ``A`` (including ``A`` = all
    vertices) the value is returned exactly with zero stderr.
    """
    _check_context(fop, pot)
    A = _index(A, fop.n)
    return _conditional(fop, pot, A, F, phi_A, _rng.stream(seed, 1, stream), n, seed, batches)


@dataclass
class MarkovRow:
    config: int
    lhs: float
    rhs: float
    diff: float
    stderr: float
    z: float


@dataclass
class MarkovReport:
    rows: list[MarkovRow]
    pooled_z: float
    z_tol: float
    seed: int
    n_outer: int
    n_inner: int
    min_ess: float
    flagged: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return abs(self.pooled_z) <= self.z_tol

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "lhs", "rhs", "diff", "stderr", "z"])
        for r in self.rows:
            w.writerow([r.config, repr(r.lhs), repr(r.rhs), repr(r.diff), repr(r.stderr), repr(r.z)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "pooled_z": self.pooled_z,
            "z_tolerance": self.z_tol,
            "seed": self.seed,
            "n_outer": self.n_outer,
            "n_inner": self.n_inner,
            "min_ess": self.min_ess,
            "flagged": self.flagged,
            "verdict": "pass" if self.passed else "fail",
            **self.meta,
        }


def _outer_configs(fop: FieldOperator, pot: Potential, seed: int, n_outer: int, pool: int) -> np.ndarray:
    gen = _rng.stream(seed, 3)
    R = np.linalg.cholesky(fop.covariance)
    phi = gen.standard_normal((pool, fop.n)) @ R.T
    logw = -pot(phi)
    w = np.exp(logw - logw.max())
    idx = gen.choice(pool, size=n_outer, replace=True, p=w / w.sum())
    return phi[idx]


def nu_markov_report(
    fop: FieldOperator,
    pot: Potential,
    partition: RegionPartition,
    F: PlainPolynomial,
    seed: int,
    n_outer: int = 200,
    n_inner: int = 10_000,
    pool: int | None = None,
    z_tol: float = 3.0,
    batches: int = DEFAULT_BATCHES,
    parallel: bool = False,
) -> MarkovReport:
    """Compare ``E^nu_{Omega^c} F`` with ``E^nu_{dOmega} F`` at configurations drawn from ``nu``.

    Outer configurations come from a pool of ``mu`` draws resampled with
    weights ``exp(-V)``.  Each configuration contributes ``diff = lhs - rhs``
    with stderr ``sqrt(se_l^2 + se_r^2)``; the pooled score is
    ``sum diff / sqrt(sum se^2)``.
    """
    _check_context(fop, pot)
    closure = partition.closure
    mask = np.zeros(fop.n, dtype=bool)
    mask[closure] = True
    for i in F.vector_ids():
        bad = np.flatnonzero((VECTORS[i] != 0) & ~mask)
        if bad.size:
            raise SupportError("F has a factor supported outside omega and its boundary", bad)
    outer = _outer_configs(fop, pot, seed, n_outer, pool or max(20 * n_outer, 4000))
    comp = partition.complement
    bnd = partition.boundary

    def one(k: int):
        phi = outer[k]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateWeightsWarning)
            lhs = _conditional(fop, pot, comp, F, phi[comp], _rng.stream(seed, 2, k, 0), n_inner, seed, batches)
            rhs = _conditional(fop, pot, bnd, F, phi[bnd], _rng.stream(seed, 2, k, 1), n_inner, seed, batches)
        se = math.hypot(lhs.stderr, rhs.stderr)
        diff = lhs.value - rhs.value
        z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        return MarkovRow(k, lhs.value, rhs.value, diff, se, z), min(lhs.ess, rhs.ess), len(caught)

    if parallel:
        with ThreadPoolExecutor() as ex:
            results = list(ex.map(one, range(n_outer)))
    else:
        results = [one(k) for k in range(n_outer)]
    rows = [r for r, _, _ in results]
    diffs = math.fsum(r.diff for r in rows)
    var = math.fsum(r.stderr ** 2 for r in rows)
    pooled = diffs / math.sqrt(var) if var > 0 else (0.0 if diffs == 0 else math.copysign(math.inf, diffs))
    flagged = sum(c for _, _, c in results)
    if flagged:
        warnings.warn(f"{flagged} inner estimates had degenerate weights", DegenerateWeightsWarning, stacklevel=2)
    return MarkovReport(rows, float(pooled), z_tol, int(seed), n_outer, n_inner,
                        float(min(e for _, e, _ in results)), flagged)


def grid_conditional(fop: FieldOperator, pot: Potential, A, F: PlainPolynomial, phi_A: np.ndarray,
                     points: int = 201, width: float = 9.0) -> float:
    """Tensor-grid quadrature of ``E^nu_A F`` over the free coordinates (at most 3).

    The grid spans ``width`` conditional standard deviations around the
    Gaussian conditional mean in each free coordinate.  A deterministic
    oracle for small meshes.
    """
    A = _index(A, fop.n)
    free = np.setdiff1d(np.arange(fop.n), A)
    if free.size > 3:
        raise ValueError("grid quadrature is limited to 3 free coordinates")
    phi_A = np.asarray(phi_A, dtype=float)
    if phi_A.shape == (fop.n,) and A.size != fop.n:
        phi_A = phi_A[A]
    base = np.zeros(fop.n)
    base[A] = phi_A
    if free.size == 0:
        return float(F.evaluate(base))
    S = fop.matrix.toarray()
    S_ff = S[np.ix_(free, free)]
    mean = -np.linalg.solve(S_ff, S[np.ix_(free, A)] @ phi_A)
    sd = np.sqrt(np.diagonal(np.linalg.inv(S_ff)))
    axes = [np.linspace(m - width * s, m + width * s, points) for m, s in zip(mean, sd)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, free.size)
    phi = np.repeat(base[None, :], len(grid), axis=0)
    phi[:, free] = grid
    comp_pot = pot.restrict(free)
    logd = -0.5 * np.einsum("ij,jk,ik->i", phi, S, phi) - comp_pot(phi)
    w = np.exp(logd - logd.max())
    return float(np.dot(w, F.evaluate(phi)) / w.sum())
