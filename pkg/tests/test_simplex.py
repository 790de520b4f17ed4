import math
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metra import simplex as sx


def random_simplex_points(rng, dim, n):
    lam = rng.dirichlet(np.ones(dim + 1), size=n)
    return lam[:, 1:]


class TestMasterNodes:
    def test_counts(self):
        assert len(sx.master_nodes(2, 4)) == 15
        assert len(sx.master_nodes(3, 3)) == 20
        assert len(sx.master_nodes(3, 4)) == 35

    def test_linear_triangle_vertices(self):
        nodes = sx.master_nodes(2, 1)
        assert np.array_equal(nodes, [[0, 0], [1, 0], [0, 1]])

    def test_quadratic_segment(self):
        nodes = sx.master_nodes(1, 2).ravel()
        assert np.array_equal(nodes, [0.0, 1.0, 0.5])

    def test_quadratic_triangle(self):
        nodes = sx.master_nodes(2, 2)
        verts = {(0, 0), (1, 0), (0, 1)}
        mids = {(0.5, 0), (0, 0.5), (0.5, 0.5)}
        got = {tuple(r) for r in nodes}
        assert got == verts | mids
        assert {tuple(r) for r in nodes[:3]} == verts

    def test_nodes_inside_closed_simplex(self):
        for dim in sx.SUPPORTED_DIMS:
            for p in sx.SUPPORTED_DEGREES:
                lam = sx.barycentric(sx.master_nodes(dim, p), dim)
                assert lam.min() >= 0.0
                assert lam.max() <= 1.0

    def test_vertices_first(self):
        for dim in (2, 3):
            nodes = sx.master_nodes(dim, 3)
            assert np.array_equal(nodes[0], np.zeros(dim))
            for a in range(dim):
                v = np.zeros(dim)
                v[a] = 1.0
                assert np.array_equal(nodes[1 + a], v)

    def test_unsupported_degree_rejected(self):
        with pytest.raises(ValueError):
            sx.master_nodes(2, 5)
        with pytest.raises(ValueError):
            sx.master_nodes(4, 2)


class TestEquilateralFrame:
    def test_2d_matrix(self):
        fr = sx.equilateral_jacobian(2)
        expect = np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]])
        assert np.array_equal(fr.matrix, expect)
        assert abs(fr.det - math.sqrt(3) / 2) < 1e-15

    def test_1d(self):
        assert sx.equilateral_jacobian(1).det == 1.0

    def test_3d_det_from_volume_oracle(self):
        # Independent oracle: the determinant equals 6 times the volume
        # of a regular tetrahedron with unit edges, 6 * (sqrt(2)/12).
        oracle = 6.0 * math.sqrt(2.0) / 12.0
        fr = sx.equilateral_jacobian(3)
        assert abs(fr.det - oracle) < 1e-14
        assert abs(fr.det - math.sqrt(2) / 2) < 1e-14

    def test_unit_edges(self):
        for dim in (1, 2, 3):
            m = sx.equilateral_jacobian(dim).matrix
            verts = np.vstack([np.zeros(dim), m.T])
            for i in range(dim + 1):
                for j in range(i + 1, dim + 1):
                    d = np.linalg.norm(verts[i] - verts[j])
                    assert abs(d - 1.0) < 1e-14

    def test_positive_dets(self):
        for dim in (1, 2, 3):
            assert sx.equilateral_jacobian(dim).det > 0


class TestLagrangeBasis:
    @pytest.mark.parametrize("dim", sx.SUPPORTED_DIMS)
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_kronecker(self, dim, degree):
        b = sx.lagrange_basis(dim, degree)
        err = np.abs(b.eval(b.nodes) - np.eye(b.n_nodes)).max()
        assert err < 1e-12

    @pytest.mark.parametrize("dim", sx.SUPPORTED_DIMS)
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_partition_of_unity(self, dim, degree):
        rng = np.random.default_rng(7 * dim + degree)
        pts = random_simplex_points(rng, dim, 1000)
        b = sx.lagrange_basis(dim, degree)
        assert np.abs(b.eval(pts).sum(axis=1) - 1.0).max() < 1e-12
        assert np.abs(b.grad(pts).sum(axis=1)).max() < 1e-12

    def test_polynomial_reproduction(self):
        # Interpolating a polynomial of matching degree is exact.
        rng = np.random.default_rng(3)
        for dim, degree in ((2, 3), (3, 2)):
            b = sx.lagrange_basis(dim, degree)

            def f(p):
                s = p.sum(axis=1)
                return 0.3 + s + 0.25 * s ** degree - p[:, 0] ** degree

            vals = f(b.nodes)
            pts = random_simplex_points(rng, dim, 50)
            err = np.abs(b.eval(pts) @ vals - f(pts)).max()
            assert err < 1e-12


class TestMapJacobian:
    def test_identity_map(self):
        b = sx.lagrange_basis(2, 1)
        jac = sx.map_jacobian(b.nodes, b, np.array([[0.3, 0.2]]))
        assert np.allclose(jac[0], np.eye(2), atol=1e-14)

    def test_linear_triangle_edge_matrix(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 2))
        b = sx.lagrange_basis(2, 1)
        jac = sx.map_jacobian(x, b, np.array([[0.1, 0.5]]))[0]
        expect = np.column_stack([x[1] - x[0], x[2] - x[0]])
        assert np.allclose(jac, expect, atol=1e-14)

    def test_quadratic_edge_hand_expansion(self):
        # 1D quadratic map through (0, c, 1) at nodes (0, 1, 1/2):
        # x(t) = t + 4(c - 1/2) t (1 - t), so x'(t) = 1 + 4(c-1/2)(1-2t).
        c = 0.62
        coords = np.array([[0.0], [1.0], [c]])
        b = sx.lagrange_basis(1, 2)
        for t in (0.0, 0.3, 0.5, 0.9):
            jac = sx.map_jacobian(coords, b, np.array([[t]]))[0, 0, 0]
            oracle = 1.0 + 4.0 * (c - 0.5) * (1.0 - 2.0 * t)
            assert abs(jac - oracle) < 1e-13

    def test_equilateral_vertices_reproduce_frame(self):
        for dim in (1, 2, 3):
            fr = sx.equilateral_jacobian(dim)
            verts = np.vstack([np.zeros(dim), fr.matrix.T])
            b = sx.lagrange_basis(dim, 1)
            jac = sx.map_jacobian(verts, b, np.zeros((1, dim)))[0]
            assert np.array_equal(jac, fr.matrix)

    def test_rectangular_edge_in_plane(self):
        coords = np.array([[0.0, 0.0], [3.0, 4.0]])
        b = sx.lagrange_basis(1, 1)
        jac = sx.map_jacobian(coords, b, np.array([[0.5]]))[0]
        assert jac.shape == (2, 1)
        assert np.allclose(jac[:, 0], [3.0, 4.0], atol=1e-14)


def exact_monomial_integral(alpha, dim):
    # int over master simplex of prod xi^alpha, as an exact rational.
    num = Fraction(1)
    for a in alpha:
        num *= math.factorial(a)
    return float(Fraction(num, math.factorial(sum(alpha) + dim)))


class TestQuadrature:
    @pytest.mark.parametrize("dim,vol", [(1, 1.0), (2, 0.5), (3, 1 / 6)])
    def test_weight_sum_is_volume(self, dim, vol):
        for n in (1, 2, 3, 6, 9, 12):
            q = sx.quadrature(dim, n)
            assert abs(q.weights.sum() - vol) < 1e-12
            assert (q.weights > 0).all()
            assert q.n_points == n ** dim

    def test_single_point_rule(self):
        q = sx.quadrature(2, 1)
        assert q.n_points == 1
        assert abs(q.weights[0] - 0.5) < 1e-15

    def test_36_point_rule(self):
        assert sx.quadrature(2, 6).n_points == 36

    @pytest.mark.parametrize("dim", sx.SUPPORTED_DIMS)
    def test_monomial_exactness(self, dim):
        for n in (1, 2, 3, 6, 12):
            q = sx.quadrature(dim, n)
            for alpha in sx._lattice(dim, q.exactness):
                val = (q.weights
                       * np.prod(q.points ** np.array(alpha), axis=1)).sum()
                assert abs(val - exact_monomial_integral(alpha, dim)) < 1e-10

    def test_points_inside(self):
        for dim in sx.SUPPORTED_DIMS:
            q = sx.quadrature(dim, 6)
            lam = sx.barycentric(q.points, dim)
            assert lam.min() > 0.0

    def test_default_rule_uses_3p(self):
        q = sx.default_quadrature(2, 2)
        assert q.n_points == 6 ** 2
        assert sx.default_quadrature(2, 2, n_1d=4).n_points == 16

    @given(st.integers(min_value=0, max_value=4),
           st.integers(min_value=0, max_value=4))
    @settings(max_examples=25, deadline=None)
    def test_bivariate_monomials_hypothesis(self, a, b):
        q = sx.quadrature(2, 6)
        val = (q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b).sum()
        assert abs(val - exact_monomial_integral((a, b), 2)) < 1e-12


class TestInterpolationNodes:
    lobatto01 = {p: np.sort((v + 1) / 2) for p, v in sx._LOBATTO.items()}

    @pytest.mark.parametrize("dim", (2, 3))
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_basic_structure(self, dim, degree):
        pts = sx.interpolation_nodes(dim, degree)
        assert len(pts) == sx.node_count(dim, degree)
        ref = sx.master_nodes(dim, degree)
        assert np.allclose(pts[:dim + 1], ref[:dim + 1], atol=1e-12)
        lam = sx.barycentric(pts, dim)
        assert lam.min() >= -1e-12

    @pytest.mark.parametrize("dim", (2, 3))
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_edges_carry_lobatto_points(self, dim, degree):
        pts = sx.interpolation_nodes(dim, degree)
        on_axis = np.all(np.abs(pts[:, 1:]) < 1e-12, axis=1)
        got = np.sort(pts[on_axis][:, 0])
        assert np.abs(got - self.lobatto01[degree]).max() < 1e-12

    @pytest.mark.parametrize("dim", (2, 3))
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_symmetric_under_vertex_permutations(self, dim, degree):
        lam = sx.barycentric(sx.interpolation_nodes(dim, degree), dim)
        for perm in permutations(range(dim + 1)):
            permuted = lam[:, perm]
            d2 = ((permuted[:, None, :] - lam[None, :, :]) ** 2).sum(2)
            assert np.sqrt(d2.min(axis=1)).max() < 1e-12

    @pytest.mark.parametrize("dim", (2, 3))
    def test_low_degree_matches_lattice(self, dim):
        for degree in (1, 2):
            assert np.allclose(sx.interpolation_nodes(dim, degree),
                               sx.master_nodes(dim, degree), atol=1e-14)

    @pytest.mark.parametrize("dim", (2, 3))
    @pytest.mark.parametrize("degree", sx.SUPPORTED_DEGREES)
    def test_unisolvent(self, dim, degree):
        b = sx.interpolation_basis(dim, degree)
        err = np.abs(b.eval(b.nodes) - np.eye(b.n_nodes)).max()
        assert err < 1e-12
