import json
import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from mfield.mesh import (
    InvolutionError,
    Mesh,
    MeshError,
    MeshWarning,
    bump,
    build_mesh,
    collar_signature,
    cylinder_collar,
    from_triangles,
    from_weighted_edges,
    glue_meshes,
    graph_distances,
    icosphere,
    lattice_reflection,
    load_mesh,
    make_partition,
    mesh_from_json,
    mesh_to_json,
    mirror_involution,
    path_graph,
    save_mesh,
    sphere_halves,
    torus_lattice,
    validate_involution,
)


def torus_spectrum(nx, ny):
    p, q = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    return np.sort((4 - 2 * np.cos(2 * np.pi * p / nx) - 2 * np.cos(2 * np.pi * q / ny)).ravel())


class TestLattices:
    @pytest.mark.parametrize("nx,ny", [(3, 3), (4, 7), (8, 8)])
    def test_torus_spectrum_closed_form(self, nx, ny):
        L = torus_lattice(nx, ny).stiffness.toarray()
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(L)), torus_spectrum(nx, ny), atol=1e-12)

    def test_torus_weights_and_mass(self):
        M = torus_lattice(5, 6, spacing=0.5)
        assert set(np.round(-M.stiffness.data[M.stiffness.data < 0], 15)) == {1.0}
        np.testing.assert_array_equal(M.mass, np.full(30, 0.25))
        assert M.euler_characteristic() == 0
        assert not M.boundary_edges()

    def test_cylinder_boundary(self):
        C = cylinder_collar(6, 4)
        assert C.euler_characteristic() == 0
        # boundary rows carry half the mass and half the along-cycle weight
        assert C.mass[0] == 0.5 and C.mass[6] == 1.0
        assert C.edge_weight(0, 1) == 0.5 and C.edge_weight(6, 7) == 1.0
        assert C.edge_weight(0, 6) == 1.0
        bnd = C.boundary_edges()
        assert len(bnd) == 12
        assert all((min(i, j), max(i, j)) in bnd for i, j in zip(C.cycles["top"], C.cycles["top"][1:]))

    def test_path_single_vertex(self):
        P = path_graph(1, mass=2.0)
        assert P.vertex_count == 1 and P.stiffness.nnz == 0
        assert P.is_connected()

    def test_build_mesh_dispatch(self):
        assert build_mesh("torus_lattice", size=4).vertex_count == 16
        assert build_mesh("cylinder_collar", size=[5, 3]).vertex_count == 15
        assert build_mesh("icosphere", subdiv=1).vertex_count == 42
        assert build_mesh("path", n=6).vertex_count == 6
        with pytest.raises(MeshError):
            build_mesh("klein_bottle")


class TestValidation:
    def test_rejects_asymmetric(self):
        L = sp.csr_matrix(np.array([[1.0, -1.0], [-0.5, 0.5]]))
        with pytest.raises(MeshError, match="symmetric"):
            Mesh(L, np.ones(2))

    def test_rejects_row_sums(self):
        L = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 1.0]]))
        with pytest.raises(MeshError, match="sum to zero"):
            Mesh(L, np.ones(2))

    def test_rejects_nonpositive_mass(self):
        with pytest.raises(MeshError, match="positive"):
            from_weighted_edges(3, [(0, 1, 1.0), (1, 2, 1.0)], [1.0, 0.0, 1.0])

    def test_negative_weight_warns(self):
        with pytest.warns(MeshWarning):
            from_weighted_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, -0.2)], 1.0)

    def test_degenerate_triangle(self):
        P = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]])
        with pytest.raises(MeshError, match="degenerate"):
            from_triangles(P, [[0, 1, 2]])


class TestCotangent:
    def test_right_triangle_weights(self):
        # angles 90 / 45 / 45: cot 0 and 1
        P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
        M = from_triangles(P, [[0, 1, 2]])
        assert M.edge_weight(1, 2) == pytest.approx(0.0, abs=1e-15)
        assert M.edge_weight(0, 1) == pytest.approx(0.5)
        np.testing.assert_allclose(M.mass, np.full(3, 1 / 6))

    def test_linear_precision(self):
        # cotangent Laplacian annihilates linear functions at interior vertices
        g = np.linspace(0, 1, 5)
        X, Y = np.meshgrid(g, g, indexing="ij")
        P = np.column_stack([X.ravel(), Y.ravel() ** 1.1, np.zeros(25)])
        T = []
        for r in range(4):
            for c in range(4):
                a, b, d, e = r * 5 + c, r * 5 + c + 1, (r + 1) * 5 + c, (r + 1) * 5 + c + 1
                T += [(a, b, e), (a, e, d)]
        M = from_triangles(P, T)
        interior = [r * 5 + c for r in range(1, 4) for c in range(1, 4)]
        u = 2 * P[:, 0] - 3 * P[:, 1]
        np.testing.assert_allclose((M.stiffness @ u)[interior], 0, atol=1e-12)

    @pytest.mark.parametrize("base", ["icosahedron", "octahedron"])
    @pytest.mark.parametrize("subdiv", [0, 1, 2])
    def test_spheres(self, base, subdiv):
        with warnings.catch_warnings():
            warnings.simplefilter("error", MeshWarning)
            S = icosphere(subdiv, base=base)
        assert S.euler_characteristic() == 2
        assert 0.5 * 4 * math.pi < S.volume <= 4 * math.pi
        assert S.is_connected()


class TestPartitions:
    def test_band_partition(self, torus8):
        part = make_partition(torus8, range(8, 32))
        np.testing.assert_array_equal(part.boundary, np.r_[0:8, 32:40])
        assert part.exterior.size == 24
        assert not part.separation_violations(torus8)

    def test_empty_exterior_warns(self):
        with pytest.warns(MeshWarning):
            make_partition(path_graph(3), [1])

    @given(st.lists(st.integers(0, 63), min_size=1, max_size=40, unique=True))
    def test_partition_covers(self, omega):
        M = torus_lattice(8, 8)
        if len(omega) == 64:
            return
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MeshWarning)
            part = make_partition(M, omega)
        allv = np.concatenate([part.omega, part.boundary, part.exterior])
        np.testing.assert_array_equal(np.sort(allv), np.arange(64))
        assert not part.separation_violations(M)


class TestInvolutions:
    def test_torus_reflection_valid(self, torus8):
        part = make_partition(torus8, range(8, 32))
        inv = validate_involution(torus8, lattice_reflection(torus8, 0), part)
        f = np.arange(64.0)
        np.testing.assert_array_equal(inv.push(inv.push(f)), f)

    def test_octahedral_mirror(self):
        S = icosphere(2, base="octahedron")
        part = make_partition(S, np.flatnonzero(S.positions[:, 2] > 0))
        validate_involution(S, mirror_involution(S, 2), part)

    def test_icosahedral_equator_is_not_separating(self):
        # the z-mirror permutes vertices, but edges cross the plane z = 0
        S = icosphere(1)
        perm = mirror_involution(S, 2)
        part = make_partition(S, np.flatnonzero(S.positions[:, 2] > 0))
        with pytest.raises(InvolutionError) as e:
            validate_involution(S, perm, part)
        assert e.value.condition == "partition_not_swapped"

    def test_mirror_needs_exact_image(self):
        S = icosphere(1)
        with pytest.raises(MeshError, match="mirror image"):
            mirror_involution(S.__class__(S.stiffness, S.mass, positions=S.positions + [0, 0, 0.1]), 2)

    def test_conditions_reported(self, torus8):
        part = make_partition(torus8, range(8, 32))
        with pytest.raises(InvolutionError) as e:
            validate_involution(torus8, np.roll(np.arange(64), 1), part)
        assert e.value.condition == "not_involution"
        with pytest.raises(InvolutionError) as e:
            validate_involution(torus8, lattice_reflection(torus8, 1), part)
        assert e.value.condition == "partition_not_swapped"
        with pytest.raises(InvolutionError) as e:
            validate_involution(torus8, np.zeros(64, dtype=int), part)
        assert e.value.condition == "not_bijection"
        # weights broken by a swap that is not a lattice symmetry
        perm = np.arange(64)
        perm[[9, 50]] = perm[[50, 9]]
        with pytest.raises(InvolutionError) as e:
            validate_involution(torus8, perm, part)
        assert e.value.condition == "stiffness_not_preserved"


class TestGluing:
    @pytest.mark.parametrize("n,k1,k2", [(8, 5, 5), (6, 3, 4), (5, 2, 6)])
    def test_cylinders_reproduce_torus(self, n, k1, k2):
        a, b = cylinder_collar(n, k1), cylinder_collar(n, k2)
        g = glue_meshes(a, ["top", "bottom"], b, ["bottom", "top"])
        T = torus_lattice(k1 + k2 - 2, n)
        assert (g.mesh.stiffness != T.stiffness).nnz == 0
        np.testing.assert_array_equal(g.mesh.mass, T.mass)

    def test_sphere_halves_reproduce_sphere(self):
        up, lo = sphere_halves(2)
        g = glue_meshes(up, "equator", lo, "equator")
        S = icosphere(2, base="octahedron")
        # relabel by exact positions
        key = {tuple(p): i for i, p in enumerate(S.positions.tolist())}
        perm = np.array([key[tuple(p)] for p in g.mesh.positions.tolist()])
        L = g.mesh.stiffness.toarray()
        Ls = S.stiffness.toarray()[np.ix_(perm, perm)]
        np.testing.assert_allclose(L, Ls, rtol=0, atol=1e-14)
        np.testing.assert_allclose(g.mesh.mass, S.mass[perm], rtol=1e-14)
        assert g.mesh.euler_characteristic() == 2

    def test_collar_mismatch(self):
        a = cylinder_collar(6, 3)
        b = cylinder_collar(6, 3, spacing=2.0)
        with pytest.raises(MeshError, match="collar mismatch"):
            glue_meshes(a, "top", b, "bottom")
        glue_meshes(a, "top", b, "bottom", check_collar=False)

    def test_cycle_must_be_boundary(self):
        a = cylinder_collar(6, 4)
        with pytest.raises(MeshError, match="boundary edge"):
            glue_meshes(a, [6, 7, 8, 9, 10, 11], cylinder_collar(6, 4), "bottom", check_collar=False)

    def test_length_mismatch(self):
        with pytest.raises(MeshError, match="lengths"):
            glue_meshes(cylinder_collar(6, 3), "top", cylinder_collar(5, 3), "bottom")

    def test_collar_signature_shape(self):
        sig = collar_signature(cylinder_collar(4, 3), (0, 1, 2, 3))
        assert sig[0] == (0.5, 0.5, (1.0,))


class TestVectorsAndIO:
    def test_bump(self):
        P = path_graph(7)
        f = bump(P, 3, radius=2)
        np.testing.assert_array_equal(f, [0, 1, 2, 3, 2, 1, 0])
        np.testing.assert_array_equal(bump(P, 3, 2, allowed=[2, 3]), [0, 0, 2, 3, 0, 0, 0])
        np.testing.assert_array_equal(graph_distances(P, 0), np.arange(7))

    def test_json_roundtrip(self, tmp_path):
        for M in (torus_lattice(4, 5), cylinder_collar(5, 3), icosphere(1, base="octahedron")):
            p = tmp_path / "m.json"
            save_mesh(M, p)
            M2 = load_mesh(p)
            assert M2.fingerprint() == M.fingerprint()
            assert M2.cycles == M.cycles

    def test_corrupt_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(MeshError):
            load_mesh(p)
        data = mesh_to_json(torus_lattice(3, 3))
        data["mass"] = data["mass"][:-1]
        with pytest.raises(MeshError):
            mesh_from_json(data)
        del data["stiffness"]
        with pytest.raises(MeshError):
            mesh_from_json(json.loads(json.dumps(data)))
