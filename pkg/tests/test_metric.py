"""Tests for SPD tensor algebra, analytic metric fields, and discrete
log-Euclidean metric interpolation with point location."""

from math import pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metra import mesh as mh
from metra import metric as mt
from metra.exceptions import OutOfDomainError, SingularMetricError


def random_spd(rng, dim, n=1, spread=2.0):
    """Random SPD batch with log-eigenvalues in [-spread, spread]."""
    a = rng.normal(size=(n, dim, dim))
    q, _ = np.linalg.qr(a)
    w = np.exp(rng.uniform(-spread, spread, size=(n, dim)))
    return np.einsum("nij,nj,nkj->nik", q, w, q)


def smooth_log_field(points):
    """Symmetric matrix field with smooth entries (log of a test metric)."""
    x, y = points[:, 0], points[:, 1]
    s = np.empty((len(points), 2, 2))
    s[:, 0, 0] = 0.3 + 0.2 * np.sin(pi * x)
    s[:, 1, 1] = 0.4 + 0.3 * np.cos(pi * y)
    s[:, 0, 1] = s[:, 1, 0] = 0.1 * x * y
    return s


# ---------------------------------------------------------------------------
# Tensor helpers


class TestTensorAlgebra:
    def test_check_spd_symmetrizes(self):
        m = np.array([[2.0, 1e-14], [0.0, 3.0]])
        out = mt.check_spd(m)
        assert np.array_equal(out, out.T)

    def test_check_spd_rejects_asymmetric(self):
        with pytest.raises(SingularMetricError, match="not symmetric"):
            mt.check_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_check_spd_rejects_indefinite(self):
        with pytest.raises(SingularMetricError, match="positive definite"):
            mt.check_spd(np.diag([1.0, -2.0]))

    def test_check_spd_rejects_nonsquare(self):
        with pytest.raises(SingularMetricError):
            mt.check_spd(np.ones((2, 3)))

    def test_log_identity_is_zero(self):
        assert np.abs(mt.metric_log(np.eye(3))).max() == 0.0

    def test_log_diagonal(self):
        out = mt.metric_log(np.diag([1.0, 9.0]))
        assert np.allclose(out, np.diag([0.0, 2.0 * np.log(3.0)]),
                           atol=1e-14)

    def test_exp_log_roundtrip_batch(self):
        rng = np.random.default_rng(3)
        for dim in (2, 3):
            m = random_spd(rng, dim, n=100, spread=3.0)
            back = mt.metric_exp(mt.metric_log(m))
            rel = np.abs(back - m).max(axis=(1, 2))
            rel /= np.abs(m).max(axis=(1, 2))
            assert rel.max() < 1e-10

    def test_log_rejects_singular(self):
        with pytest.raises(SingularMetricError):
            mt.metric_log(np.diag([1.0, 0.0]))

    def test_factorize_identity(self):
        assert np.array_equal(mt.factorize(np.eye(2)), np.eye(2))

    def test_factorize_diagonal(self):
        assert np.array_equal(mt.factorize(np.diag([1.0, 9.0])),
                              np.diag([1.0, 3.0]))

    def test_factorize_reconstructs(self):
        rng = np.random.default_rng(11)
        for dim in (2, 3):
            for m in random_spd(rng, dim, n=20):
                f = mt.factorize(m)
                assert np.triu(f) == pytest.approx(f)
                assert np.abs(f.T @ f - m).max() < 1e-12 * np.abs(m).max()

    def test_factorize_rejects_non_spd(self):
        with pytest.raises(SingularMetricError):
            mt.factorize(np.diag([1.0, -1.0]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), dim=st.sampled_from([2, 3]))
def test_exp_log_roundtrip_property(seed, dim):
    m = random_spd(np.random.default_rng(seed), dim, n=1, spread=4.0)[0]
    back = mt.metric_exp(mt.metric_log(m))
    assert np.abs(back - m).max() < 1e-10 * max(1.0, np.abs(m).max())


# ---------------------------------------------------------------------------
# Analytic fields


class TestConstantMetric:
    def test_eval_broadcasts(self):
        field = mt.ConstantMetric(np.diag([1.0, 4.0]))
        pts = np.random.default_rng(0).normal(size=(7, 2))
        out = field.eval_many(pts)
        assert out.shape == (7, 2, 2)
        assert (out == np.diag([1.0, 4.0])).all()

    def test_gradient_is_zero(self):
        field = mt.ConstantMetric(np.eye(3))
        _, grad = field.eval_with_grad_many(np.zeros((4, 3)))
        assert grad.shape == (4, 3, 3, 3)
        assert (grad == 0).all()

    def test_constant_diag_sizes(self):
        # Unit size along x and target size 1/3 along y.
        field = mt.constant_diag([1.0, 1.0 / 3.0])
        assert np.allclose(field.tensor, np.diag([1.0, 9.0]), rtol=1e-12)
        exact = mt.constant_diag([1.0, 0.5])
        assert np.array_equal(exact.tensor, np.diag([1.0, 4.0]))

    def test_constant_diag_rejects_nonpositive(self):
        with pytest.raises(SingularMetricError):
            mt.constant_diag([1.0, 0.0])

    def test_rejects_non_spd(self):
        with pytest.raises(SingularMetricError):
            mt.ConstantMetric(np.diag([1.0, -1.0]))


class TestBoundaryLayer2D:
    def test_flat_layer_closed_form(self):
        # Without deformation the tensor is diag(1, 1/h(y)^2) / h_unit^2.
        field = mt.BoundaryLayer2D(h_unit=1.0, h_min=0.01, growth=2.0,
                                   deform=False)
        m = field.eval_many(np.array([[0.3, 0.0]]))[0]
        assert np.allclose(m, np.diag([1.0, 1.0e4]), rtol=1e-12)
        m = field.eval_many(np.array([[-0.2, 0.25]]))[0]
        h = 0.01 + 2.0 * 0.25
        assert np.allclose(m, np.diag([1.0, 1.0 / h ** 2]), rtol=1e-12)

    def test_stretching_blends_toward_isotropy(self):
        # Anisotropy ratio 1:100 at the layer, near 1:1 half a unit away.
        field = mt.BoundaryLayer2D(h_unit=1.0, h_min=0.01, growth=2.0,
                                   deform=False)
        m0, m5 = field.eval_many(np.array([[0.1, 0.0], [0.1, 0.5]]))
        ratio0 = sqrt(m0[1, 1] / m0[0, 0])
        ratio5 = sqrt(m5[1, 1] / m5[0, 0])
        assert ratio0 == pytest.approx(100.0)
        assert ratio5 == pytest.approx(1.0, abs=0.02)

    def test_deformed_layer_follows_curve(self):
        # On the curve 10 y = cos(2 pi x) the signed coordinate vanishes,
        # so the across-layer weight hits its 1/h_min^2 maximum.
        field = mt.BoundaryLayer2D(h_unit=1.0, h_min=0.01, growth=2.0,
                                   deform=True, cos_coeff=-1.0)
        c = 1.0 / sqrt(100.0 + 4.0 * pi ** 2)
        for x in (-0.37, 0.0, 0.21):
            y = np.cos(2.0 * pi * x) / 10.0
            m = field.eval_many(np.array([[x, y]]))[0]
            jx = 2.0 * pi * c * np.sin(2.0 * pi * x)
            jy = 10.0 * c
            w = 1.0 / 0.01 ** 2
            expect = np.array([[1.0 + w * jx ** 2, w * jx * jy],
                               [w * jx * jy, w * jy ** 2]])
            assert np.allclose(m, expect, rtol=1e-12)

    def test_spd_everywhere(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.5, 0.5, size=(500, 2))
        for deform in (False, True):
            field = mt.BoundaryLayer2D(deform=deform)
            w = np.linalg.eigvalsh(field.eval_many(pts))
            assert w.min() > 0

    def test_gradient_matches_finite_differences(self):
        field = mt.BoundaryLayer2D(h_unit=0.5, h_min=0.05, growth=1.5,
                                   deform=True)
        rng = np.random.default_rng(9)
        pts = rng.uniform(-0.5, 0.5, size=(200, 2))
        c = 1.0 / sqrt(100.0 + 4.0 * pi ** 2)
        v = c * (10.0 * pts[:, 1] - np.cos(2.0 * pi * pts[:, 0]))
        pts = pts[np.abs(v) > 1e-2][:50]
        m, grad = field.eval_with_grad_many(pts)
        assert np.allclose(m, field.eval_many(pts))
        step = 1e-6
        for axis in range(2):
            dp = np.zeros(2)
            dp[axis] = step
            fd = (field.eval_many(pts + dp) - field.eval_many(pts - dp)) \
                / (2.0 * step)
            scale = np.abs(fd).max()
            assert np.abs(grad[:, axis] - fd).max() < 1e-5 * max(scale, 1.0)

    def test_rejects_bad_parameters(self):
        with pytest.raises(SingularMetricError):
            mt.BoundaryLayer2D(h_unit=0.0)
        with pytest.raises(SingularMetricError):
            mt.BoundaryLayer2D(h_min=-0.1)
        with pytest.raises(SingularMetricError):
            mt.BoundaryLayer2D(growth=-1.0)


# ---------------------------------------------------------------------------
# Discrete log-Euclidean fields


def make_field(dim=2, degree=1, n=3, seed=0, spread=1.0):
    background = mh.structured_mesh(dim, degree, n)
    rng = np.random.default_rng(seed)
    tensors = random_spd(rng, dim, n=background.n_nodes, spread=spread)
    return mt.DiscreteMetricField(background, tensors)


class TestDiscreteMetricField:
    def test_constant_nodal_data_reproduced_anywhere(self):
        background = mh.structured_mesh(2, 2, 2)
        m0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        tensors = np.broadcast_to(m0, (background.n_nodes, 2, 2)).copy()
        field = mt.DiscreteMetricField(background, tensors)
        pts = np.random.default_rng(1).uniform(-0.49, 0.49, size=(40, 2))
        out = field.eval_many(pts)
        assert np.abs(out - m0).max() < 1e-12

    def test_nodal_values_reproduced(self):
        for degree in (1, 2):
            field = make_field(degree=degree, n=2, seed=5)
            nodes = field.background.nodes
            out = field.eval_many(nodes)
            rel = np.abs(out - field.nodal_metrics).max(axis=(1, 2))
            rel /= np.abs(field.nodal_metrics).max(axis=(1, 2))
            assert rel.max() < 1e-10

    def test_midpoint_geometric_mean(self):
        # Linear blending of commuting logs: the per-entry geometric
        # mean appears halfway along an edge with diagonal end data.
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        background = mh.HighOrderMesh(2, 1, nodes, np.array([[0, 1, 2]]))
        a, b = np.array([0.5, 2.0]), np.array([8.0, 0.125])
        tensors = np.stack([np.diag(a), np.diag(b), np.eye(2)])
        field = mt.DiscreteMetricField(background, tensors)
        out = field.eval_many(np.array([[0.5, 0.0]]))[0]
        assert np.allclose(out, np.diag(np.sqrt(a * b)), rtol=1e-12)

    def test_spd_at_many_sample_points(self):
        field = make_field(n=4, seed=2, spread=2.0)
        rng = np.random.default_rng(3)
        pts = rng.uniform(-0.5, 0.5, size=(10_000, 2))
        w = np.linalg.eigvalsh(field.eval_many(pts))
        assert w.min() > 0

    def test_eval_deterministic(self):
        field = make_field(degree=2, n=2, seed=7)
        pts = np.random.default_rng(8).uniform(-0.5, 0.5, size=(64, 2))
        a = field.eval_many(pts)
        b = field.eval_many(pts)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_refinement_convergence_order(self, degree):
        # Nodal sampling of a smooth field: interpolation converges at
        # order degree + 1, comfortably above the background degree.
        probes = np.random.default_rng(12).uniform(-0.44, 0.44, size=(60, 2))
        exact = smooth_log_field(probes)
        errs = []
        for n in (2, 4, 8):
            background = mh.structured_mesh(2, degree, n)
            tensors = mt.metric_exp(smooth_log_field(background.nodes))
            field = mt.DiscreteMetricField(background, tensors)
            logs = mt.metric_log(field.eval_many(probes))
            errs.append(np.linalg.norm(logs - exact, axis=(1, 2)).max())
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert orders.min() > degree

    def test_locate_inverts_geometry(self):
        # Curved (degree 2) background with perturbed interior nodes:
        # located master coordinates must map back onto the query point.
        background = mh.structured_mesh(2, 2, 2)
        rng = np.random.default_rng(21)
        interior = background.free_mask().all(axis=1)
        background.nodes[interior] += rng.normal(
            scale=0.02, size=background.nodes[interior].shape)
        tensors = np.broadcast_to(np.eye(2),
                                  (background.n_nodes, 2, 2)).copy()
        field = mt.DiscreteMetricField(background, tensors)
        pts = rng.uniform(-0.45, 0.45, size=(30, 2))
        elems, xi = field.locate(pts)
        assert (elems >= 0).all()
        basis = field._basis
        phys = np.einsum("bn,bnd->bd", basis.eval(xi),
                         background.element_coords()[elems])
        assert np.abs(phys - pts).max() < 1e-9

    def test_out_of_domain_raises(self):
        field = make_field(n=2, seed=0)
        with pytest.raises(OutOfDomainError, match="outside"):
            field.eval_many(np.array([[2.0, 2.0]]))

    def test_out_of_domain_clamps_when_asked(self):
        field = make_field(n=2, seed=0)
        pts = np.array([[2.0, 2.0], [0.0, -7.0]])
        out = field.eval_many(pts, clamp=True)
        assert np.linalg.eigvalsh(out).min() > 0
        again = field.eval_many(pts, clamp=True)
        assert np.array_equal(out, again)

    def test_clamp_matches_strict_inside(self):
        field = make_field(n=3, seed=6)
        pts = np.random.default_rng(13).uniform(-0.5, 0.5, size=(50, 2))
        assert np.array_equal(field.eval_many(pts),
                              field.eval_many(pts, clamp=True))

    @pytest.mark.parametrize("degree", [1, 2])
    def test_gradient_matches_finite_differences(self, degree):
        # Probe element centroids, keeping the stencil inside one
        # element where the interpolant is smooth.
        field = make_field(degree=degree, n=3, seed=14, spread=1.0)
        coords = field.background.element_coords()
        pts = coords.mean(axis=1)[::3]
        m, grad = field.eval_with_grad_many(pts)
        assert np.allclose(m, field.eval_many(pts), rtol=1e-12)
        step = 1e-6
        for axis in range(2):
            dp = np.zeros(2)
            dp[axis] = step
            fd = (field.eval_many(pts + dp) - field.eval_many(pts - dp)) \
                / (2.0 * step)
            scale = max(np.abs(fd).max(), 1.0)
            assert np.abs(grad[:, axis] - fd).max() < 1e-5 * scale

    def test_rejects_wrong_tensor_count(self):
        background = mh.structured_mesh(2, 1, 2)
        with pytest.raises(SingularMetricError, match="per background"):
            mt.DiscreteMetricField(background, np.eye(2)[None])

    def test_rejects_asymmetric_nodal_tensor(self):
        background = mh.structured_mesh(2, 1, 1)
        tensors = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
        tensors[3, 0, 1] = 0.5
        with pytest.raises(SingularMetricError, match="3"):
            mt.DiscreteMetricField(background, tensors)

    def test_rejects_indefinite_nodal_tensor(self):
        background = mh.structured_mesh(2, 1, 1)
        tensors = np.broadcast_to(np.eye(2), (4, 2, 2)).copy()
        tensors[2] = np.diag([1.0, -1.0])
        with pytest.raises(SingularMetricError, match="2"):
            mt.DiscreteMetricField(background, tensors)

    def test_three_dimensional_field(self):
        field = make_field(dim=3, degree=1, n=2, seed=15)
        pts = np.random.default_rng(16).uniform(-0.45, 0.45, size=(20, 3))
        out = field.eval_many(pts)
        assert out.shape == (20, 3, 3)
        assert np.linalg.eigvalsh(out).min() > 0
