"""Tests for interpolation and best-approximation error measures.

Oracles: exact reproduction of polynomials inside the FE space, the
asymptotic decay rate 2^(p+1) under uniform refinement, a dense
least-squares projection oracle on a single element, and an independent
mass-matrix assembly for the normal equations.
"""

from math import atan, cos, pi

import numpy as np
import pytest

from metra import error_metrics as em
from metra import mesh as mh
from metra import simplex as sx
from metra.exceptions import ConfigurationError, SolverError


def renumbered(mesh, seed=0):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_nodes)
    nodes = np.empty_like(mesh.nodes)
    nodes[perm] = mesh.nodes
    constraints = [None] * mesh.n_nodes
    for g, c in enumerate(mesh.constraints):
        constraints[perm[g]] = c
    return mh.HighOrderMesh(mesh.dim, mesh.degree, nodes,
                            perm[mesh.elements], constraints)


def curved_mesh(degree=3, n=3, seed=2):
    mesh = mh.structured_mesh(2, degree, n)
    rng = np.random.default_rng(seed)
    mask = mesh.free_mask()
    h = 1.0 / (n * degree)
    mesh.nodes[mask] += rng.uniform(-0.15 * h, 0.15 * h, size=mask.sum())
    return mesh


class TestAnalyticFunctions:
    def test_arctan2d_matches_pointwise_formula(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.5, 0.5, size=(40, 2))
        got = em.Arctan2D(gamma=20.0).eval_many(pts)
        want = [atan(20.0 * (10.0 * y + cos(2.0 * pi * x)))
                for x, y in pts]
        assert np.allclose(got, want, rtol=1e-15)

    def test_arctan3d_matches_pointwise_formula(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.5, 0.5, size=(40, 3))
        got = em.Arctan3D(gamma=5.0).eval_many(pts)
        want = [atan(5.0 * (10.0 * z
                            + cos(2.0 * pi * x) * cos(2.0 * pi * y)))
                for x, y, z in pts]
        assert np.allclose(got, want, rtol=1e-15)

    def test_sign_flips_across_the_transition_curve(self):
        u = em.Arctan2D(gamma=20.0)
        x = 0.2
        yc = -cos(2.0 * pi * x) / 10.0
        above, below = u.eval_many(np.array([[x, yc + 0.05],
                                             [x, yc - 0.05]]))
        assert above > 0.5 > -0.5 > below

    @pytest.mark.parametrize("gamma", [0.0, -1.0, np.inf])
    def test_rejects_nonpositive_gamma(self, gamma):
        with pytest.raises(ConfigurationError):
            em.Arctan2D(gamma=gamma)
        with pytest.raises(ConfigurationError):
            em.Arctan3D(gamma=gamma)


class TestInterpolate:
    def test_low_degree_coefficients_are_nodal_values(self):
        # Up to degree 2 the warped set coincides with the lattice, so
        # the coefficients are u at the mesh's own nodes.
        for degree in (1, 2):
            mesh = mh.structured_mesh(2, degree, 3)
            u = em.Arctan2D(3.0)
            coeffs = em.interpolate(mesh, u)
            assert np.allclose(coeffs, u.eval_many(mesh.nodes),
                               rtol=1e-14, atol=1e-14)

    def test_coefficient_vector_has_one_entry_per_node(self):
        mesh = mh.structured_mesh(2, 3, 2)
        coeffs = em.interpolate(mesh, em.Arctan2D(1.0))
        assert coeffs.shape == (mesh.n_nodes,)

    @pytest.mark.parametrize("degree", [3, 4])
    def test_shared_nodes_get_one_physical_point(self, degree):
        mesh = curved_mesh(degree=degree)
        phys = em.interpolation_points(mesh)
        ref = np.full((mesh.n_nodes, mesh.dim), np.nan)
        worst = 0.0
        for e, conn in enumerate(mesh.elements):
            for j, g in enumerate(conn):
                if np.isnan(ref[g, 0]):
                    ref[g] = phys[e, j]
                else:
                    worst = max(worst, float(
                        np.linalg.norm(ref[g] - phys[e, j])))
        assert worst < 1e-12

    def test_constant_function_gives_constant_coefficients(self):
        mesh = mh.structured_mesh(2, 4, 2)
        coeffs = em.interpolate(mesh, lambda p: np.full(len(p), 2.5))
        assert np.allclose(coeffs, 2.5, rtol=1e-15)


class TestInterpolationError:
    @pytest.mark.parametrize("degree", [1, 2, 3, 4])
    def test_polynomial_reproduction_on_affine_mesh(self, degree):
        mesh = mh.structured_mesh(2, degree, 3)
        u = lambda p: (0.7 * p[:, 0] - 0.4 * p[:, 1] + 0.2) ** degree
        assert em.interpolation_error(mesh, u).total < 1e-12

    def test_linear_reproduction_on_a_curved_mesh(self):
        mesh = curved_mesh(degree=3)
        u = lambda p: 1.0 + 2.0 * p[:, 0] - 3.0 * p[:, 1]
        assert em.interpolation_error(mesh, u).total < 1e-12

    def test_constant_gives_zero(self):
        mesh = mh.structured_mesh(3, 2, 2)
        rep = em.interpolation_error(mesh, lambda p: np.full(len(p), 4.0))
        assert rep.total < 1e-13
        assert np.all(rep.per_element < 1e-13)

    def test_global_square_is_the_sum_of_element_squares(self):
        mesh = mh.structured_mesh(2, 2, 4)
        rep = em.interpolation_error(mesh, em.Arctan2D(20.0))
        assert rep.per_element.shape == (mesh.n_elements,)
        assert rep.total ** 2 == pytest.approx(
            float(rep.per_element @ rep.per_element), rel=1e-12)

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_halving_h_divides_the_error_by_two_to_the_p_plus_one(
            self, degree):
        u = em.Arctan2D(1.0)
        coarse = em.interpolation_error(
            mh.structured_mesh(2, degree, 16), u).total
        fine = em.interpolation_error(
            mh.structured_mesh(2, degree, 32), u).total
        target = 2.0 ** (degree + 1)
        assert abs(coarse / fine / target - 1.0) < 0.2

    def test_halving_h_in_three_dimensions(self):
        u = em.Arctan3D(1.0)
        coarse = em.interpolation_error(mh.structured_mesh(3, 1, 8),
                                        u).total
        fine = em.interpolation_error(mh.structured_mesh(3, 1, 16),
                                      u).total
        assert abs(coarse / fine / 4.0 - 1.0) < 0.2

    def test_invariant_under_node_renumbering(self):
        mesh = mh.structured_mesh(2, 3, 3)
        u = em.Arctan2D(8.0)
        a = em.interpolation_error(mesh, u)
        b = em.interpolation_error(renumbered(mesh, seed=4), u)
        assert b.total == pytest.approx(a.total, rel=1e-12)


class TestProjection:
    def test_member_of_the_space_projects_to_itself(self):
        mesh = mh.structured_mesh(2, 2, 3)
        u = lambda p: 0.3 - 1.2 * p[:, 0] + (p[:, 1] - 0.1) ** 2
        rep = em.approximation_error(mesh, u)
        assert rep.total < 1e-9

    def test_never_exceeds_interpolation_error(self):
        cases = [
            (mh.structured_mesh(2, 1, 5), em.Arctan2D(20.0)),
            (mh.structured_mesh(2, 2, 4), em.Arctan2D(1.0)),
            (mh.structured_mesh(2, 4, 2), em.Arctan2D(5.0)),
            (curved_mesh(degree=3), em.Arctan2D(20.0)),
            (mh.structured_mesh(3, 2, 2), em.Arctan3D(2.0)),
        ]
        for mesh, u in cases:
            ei = em.interpolation_error(mesh, u).total
            ea = em.approximation_error(mesh, u).total
            assert ea <= ei * (1.0 + 1e-10)

    def test_single_element_matches_dense_least_squares(self):
        lam = sx.barycentric(sx.master_nodes(2, 3), 2)
        verts = np.array([[0.0, 0.0], [1.1, 0.1], [0.2, 0.9]])
        mesh = mh.HighOrderMesh(2, 3, lam @ verts,
                                np.arange(lam.shape[0])[None, :])
        u = em.Arctan2D(4.0)
        rule = sx.quadrature(2, 11)
        coeffs = em.project(mesh, u, rule)

        geo = sx.lagrange_basis(2, 3)
        fe = sx.interpolation_basis(2, 3)
        jac = sx.map_jacobian(mesh.element_coords(0), geo, rule.points)
        dets = np.abs(np.linalg.det(jac))
        phys = geo.eval(rule.points) @ mesh.element_coords(0)
        weights = np.sqrt(rule.weights * dets)
        design = weights[:, None] * fe.eval(rule.points)
        rhs = weights * u.eval_many(phys)
        oracle, *_ = np.linalg.lstsq(design, rhs, rcond=None)
        assert np.allclose(coeffs, oracle, rtol=1e-8, atol=1e-10)

    def test_normal_equations_hold_against_independent_assembly(self):
        mesh = curved_mesh(degree=2, n=3)
        u = em.Arctan2D(6.0)
        rule = sx.quadrature(2, 3 * mesh.degree + 2)
        coeffs = em.project(mesh, u, rule)

        geo = sx.lagrange_basis(2, 2)
        fe = sx.interpolation_basis(2, 2)
        coords = mesh.element_coords()
        jac = np.einsum("end,qnk->eqdk", coords, geo.grad(rule.points))
        dets = np.abs(np.linalg.det(jac))
        phys = np.einsum("qn,end->eqd", geo.eval(rule.points), coords)
        uvals = u.eval_many(phys.reshape(-1, 2)).reshape(dets.shape)
        basis = fe.eval(rule.points)
        mass = np.zeros((mesh.n_nodes, mesh.n_nodes))
        load = np.zeros(mesh.n_nodes)
        for e, conn in enumerate(mesh.elements):
            emat = np.einsum("q,q,qi,qj->ij", rule.weights, dets[e],
                             basis, basis)
            evec = np.einsum("q,q,qi,q->i", rule.weights, dets[e],
                             basis, uvals[e])
            mass[np.ix_(conn, conn)] += emat
            load[conn] += evec
        assert np.min(np.linalg.eigvalsh(mass)) > 0.0
        residual = np.linalg.norm(mass @ coeffs - load)
        assert residual <= 1e-9 * np.linalg.norm(load)

    def test_invariant_under_node_renumbering(self):
        mesh = mh.structured_mesh(2, 2, 3)
        u = em.Arctan2D(10.0)
        a = em.approximation_error(mesh, u)
        b = em.approximation_error(renumbered(mesh, seed=9), u)
        assert b.total == pytest.approx(a.total, rel=1e-10)

    def test_solver_breakdown_is_reported(self, monkeypatch):
        mesh = mh.structured_mesh(2, 1, 2)

        def broken_cg(mass, load, **kwargs):
            return np.zeros_like(load), 37

        monkeypatch.setattr(em.spla, "cg", broken_cg)
        with pytest.raises(SolverError, match="residual"):
            em.project(mesh, em.Arctan2D(1.0))
