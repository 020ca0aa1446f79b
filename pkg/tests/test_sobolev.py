import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfield.families import random_mesh, random_partition
from mfield.mesh import bump, from_weighted_edges, make_partition, path_graph, torus_lattice
from mfield.sobolev import (
    assemble_operator,
    is_mean_zero,
    premarkov_residual,
    project_support,
    projection_matrix,
    sobolev_inner,
    triple_decompose,
    zero_mode_asymptotics,
    zero_mode_coefficient,
)

from conftest import delta


def dense_projection(S, A, f):
    """Oracle: minimize (f - g)^T S^{-1} (f - g) over g supported in A."""
    C = np.linalg.inv(S)
    g = np.zeros_like(f)
    g[A] = np.linalg.solve(C[np.ix_(A, A)], (C @ f)[A])
    return g


class TestOperator:
    def test_two_vertex_covariance(self):
        # S = [[1 + m^2, -1], [-1, 1 + m^2]] with unit weight and mass
        M = path_graph(2)
        fop = assemble_operator(M, 2.0)
        S = np.array([[5.0, -1.0], [-1.0, 5.0]])
        np.testing.assert_allclose(fop.matrix.toarray(), S)
        np.testing.assert_allclose(fop.covariance, np.linalg.inv(S), rtol=1e-14)
        assert sobolev_inner(fop, -1, [1, 0], [0, 1]) == pytest.approx(1 / 24)
        assert sobolev_inner(fop, 1, [1, 0], [0, 1]) == pytest.approx(-1.0)

    def test_id_depends_on_mesh_and_mass(self, torus8):
        a, b = assemble_operator(torus8, 1.0), assemble_operator(torus8, 1.0)
        assert a.id == b.id
        assert a.id != assemble_operator(torus8, 0.5).id
        assert a.id != assemble_operator(torus_lattice(8, 9), 1.0).id

    def test_massless_needs_connected(self):
        M = from_weighted_edges(4, [(0, 1, 1.0), (2, 3, 1.0)], 1.0)
        with pytest.raises(ValueError):
            assemble_operator(M, 0.0)
        assemble_operator(M, 0.1)

    def test_negative_mass_rejected(self, torus8):
        with pytest.raises(ValueError):
            assemble_operator(torus8, -1.0)

    def test_massless_pseudo_inverse(self, torus8, gen):
        f = gen.standard_normal(64)
        f -= f.mean()
        g = gen.standard_normal(64)
        g -= g.mean()
        fop = assemble_operator(torus8, 0.0)
        Lp = np.linalg.pinv(torus8.stiffness.toarray())
        assert fop.pair(f, g) == pytest.approx(f @ Lp @ g, rel=1e-10)
        spec = assemble_operator(torus8, 0.0, solver="spectral")
        assert spec.pair(f, g) == pytest.approx(f @ Lp @ g, rel=1e-10)
        with pytest.raises(ValueError, match="mean-zero"):
            fop.pair(f + 1.0, g)
        assert is_mean_zero(f) and not is_mean_zero(f + 1e-3)

    def test_spectral_matches_factor(self, gen):
        M = random_mesh(gen, 80)
        a = assemble_operator(M, 0.7)
        b = assemble_operator(M, 0.7, solver="spectral")
        F = gen.standard_normal((M.vertex_count, 3))
        np.testing.assert_allclose(a.solve(F), b.solve(F), rtol=1e-9, atol=1e-12)


class TestProjection:
    @given(st.integers(0, 2**31), st.sampled_from([0.1, 1.0, 10.0]))
    def test_schur_matches_dense_oracle(self, seed, m):
        gen = np.random.default_rng(seed)
        M = random_mesh(gen, 60)
        fop = assemble_operator(M, m)
        A = np.flatnonzero(gen.random(M.vertex_count) < 0.4)
        if A.size in (0, M.vertex_count):
            return
        f = gen.standard_normal(M.vertex_count)
        expect = dense_projection(fop.matrix.toarray(), A, f)
        scale = np.abs(expect).max()
        np.testing.assert_allclose(project_support(fop, A, f), expect, atol=1e-10 * scale)
        np.testing.assert_allclose(project_support(fop, A, f, method="dense"), expect, atol=1e-10 * scale)

    def test_projection_properties(self, torus8, gen):
        fop = assemble_operator(torus8, 1.0)
        A = np.arange(10, 30)
        E = projection_matrix(fop, A)
        np.testing.assert_allclose(E @ E, E, atol=1e-12)
        # self-adjoint in the H^{-1} metric: C E = E^T C
        C = fop.covariance
        np.testing.assert_allclose(C @ E, E.T @ C, atol=1e-12)
        f = gen.standard_normal(64)
        r = f - E @ f
        for a in A:
            assert abs(fop.pair(delta(64, a), r)) < 1e-12
        assert np.all(E[np.setdiff1d(np.arange(64), A)] == 0)

    def test_trivial_sets(self, torus8, gen):
        fop = assemble_operator(torus8, 1.0)
        f = gen.standard_normal(64)
        np.testing.assert_array_equal(project_support(fop, [], f), 0)
        np.testing.assert_array_equal(project_support(fop, range(64), f), f)
        f_A = delta(64, 3, 4, values=[1.0, -2.0])
        np.testing.assert_allclose(project_support(fop, [3, 4, 5], f_A), f_A, atol=1e-14)

    def test_massless_rejected(self, torus8):
        with pytest.raises(ValueError):
            project_support(assemble_operator(torus8, 0.0), [0, 1], np.zeros(64))


class TestDecomposition:
    @pytest.mark.parametrize("m", [0.1, 1.0, 10.0])
    def test_premarkov_band(self, torus8, m):
        part = make_partition(torus8, range(8, 32))
        assert premarkov_residual(assemble_operator(torus8, m), part) <= 1e-10

    def test_premarkov_fails_without_boundary(self, torus8):
        # replacing the boundary by a strict subset breaks the identity
        fop = assemble_operator(torus8, 1.0)
        part = make_partition(torus8, range(8, 32))
        E_c = projection_matrix(fop, part.complement)
        E_cl = projection_matrix(fop, part.closure)
        E_b = projection_matrix(fop, part.boundary[:-2])
        assert np.linalg.norm(E_c @ E_cl - E_b, 2) > 1e-3

    @given(st.integers(0, 2**31), st.sampled_from([0.1, 1.0, 10.0]))
    def test_triple_decomposition(self, seed, m):
        gen = np.random.default_rng(seed)
        M = random_mesh(gen, 120)
        part = random_partition(M, gen)
        fop = assemble_operator(M, m)
        f = gen.standard_normal(M.vertex_count)
        d = triple_decompose(fop, part, f)
        np.testing.assert_allclose(d.exterior + d.boundary + d.interior, f, rtol=0, atol=1e-12 * np.abs(f).max())
        norm2 = fop.pair(f, f)
        for a, b in ((d.exterior, d.boundary), (d.exterior, d.interior), (d.boundary, d.interior)):
            assert abs(fop.pair(a, b)) <= 1e-10 * norm2
        # supports: exterior part on ext + bdry, interior part on omega + bdry, h on bdry
        assert np.all(d.exterior[part.omega] == 0)
        assert np.all(d.interior[part.exterior] == 0)
        np.testing.assert_array_equal(d.boundary[part.omega], 0)
        np.testing.assert_array_equal(d.boundary[part.exterior], 0)
        np.testing.assert_array_equal(d.interior[part.omega], f[part.omega])

    def test_boundary_part_is_projection(self, torus8, gen):
        # h = e_B f when f is supported in the closure of omega
        fop = assemble_operator(torus8, 1.0)
        part = make_partition(torus8, range(8, 32))
        f = np.zeros(64)
        f[part.closure] = gen.standard_normal(part.closure.size)
        d = triple_decompose(fop, part, f)
        np.testing.assert_allclose(d.boundary, project_support(fop, part.boundary, f), atol=1e-12)
        np.testing.assert_allclose(d.exterior, 0, atol=1e-12)


class TestZeroMode:
    def test_zero_mode_limit(self, torus8):
        u = bump(torus8, 9, 1)
        v = bump(torus8, 45, 1)
        lhs, rhs = zero_mode_asymptotics(torus8, u, v, 1e-3)
        # each bump sums to 2 + 4 * 1 = 6 with unit mass, volume 64
        assert rhs == pytest.approx(6 * 6 / 64)
        assert abs(lhs - rhs) <= 1e-2 * rhs
        # cross-check with a dense solve at moderate m
        m = 0.05
        S = torus8.stiffness.toarray() + m * m * np.diag(torus8.mass)
        Wu, Wv = torus8.mass * u, torus8.mass * v
        assert zero_mode_asymptotics(torus8, u, v, m)[0] == pytest.approx(m * m * Wu @ np.linalg.solve(S, Wv), rel=1e-9)

    def test_coefficient(self):
        P = path_graph(4, mass=0.5)
        assert zero_mode_coefficient(P, np.ones(4)) == pytest.approx(np.sqrt(2.0))
