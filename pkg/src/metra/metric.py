"""Metric tensor fields.

A metric field returns a symmetric positive definite d x d tensor (and
optionally its spatial gradient) at arbitrary physical points.  Discrete
fields interpolate nodal tensors on a background mesh through the matrix
logarithm, which keeps every interpolated tensor positive definite;
their gradient follows from the eigendecomposition-based directional
derivative of the matrix exponential.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np

from . import simplex as sx
from .exceptions import OutOfDomainError, SingularMetricError
from .mesh import HighOrderMesh

_EIG_FLOOR = 1e-300
_INSIDE_TOL = 1e-8


# ---------------------------------------------------------------------------
# Tensor helpers


def check_spd(m: np.ndarray, what: str = "metric") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    scale = max(1.0, np.abs(m).max())
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SingularMetricError(f"{what} must be a square matrix")
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise SingularMetricError(f"{what} is not symmetric")
    if np.linalg.eigvalsh(m).min() <= _EIG_FLOOR:
        raise SingularMetricError(f"{what} is not positive definite")
    return 0.5 * (m + m.T)


def metric_log(tensors: np.ndarray) -> np.ndarray:
    """Matrix logarithm of a batch of SPD tensors (shape (..., d, d))."""
    w, q = np.linalg.eigh(tensors)
    if w.min() <= _EIG_FLOOR:
        raise SingularMetricError("metric eigenvalue not positive")
    lw = np.log(w)
    return np.einsum("...ij,...j,...kj->...ik", q, lw, q)


def metric_exp(tensors: np.ndarray) -> np.ndarray:
    """Matrix exponential of a batch of symmetric tensors."""
    w, q = np.linalg.eigh(tensors)
    return np.einsum("...ij,...j,...kj->...ik", q, np.exp(w), q)


def factorize(m: np.ndarray) -> np.ndarray:
    """Upper-triangular F with F^T F = M (Cholesky of an SPD tensor)."""
    m = check_spd(m)
    return np.linalg.cholesky(m).T


def _exp_directional(w, q, direction):
    """Directional derivative of the matrix exponential at Q diag(w) Q^T
    applied to symmetric ``direction``; batched over leading axes."""
    lam_i = w[..., :, None]
    lam_j = w[..., None, :]
    diff = lam_i - lam_j
    avg = 0.5 * (lam_i + lam_j)
    half = 0.5 * diff
    # (exp(a)-exp(b))/(a-b) = exp((a+b)/2) * sinh(t)/t with t=(a-b)/2
    small = np.abs(half) < 1e-6
    safe = np.where(small, 1.0, half)
    ratio = np.where(small, 1.0 + half ** 2 / 6.0, np.sinh(safe) / safe)
    phi = np.exp(avg) * ratio
    inner = np.einsum("...ji,...jk,...kl->...il", q, direction, q)
    return np.einsum("...ij,...jk,...lk->...il", q, phi * inner, q)


# ---------------------------------------------------------------------------
# Analytic fields


@dataclass(frozen=True)
class ConstantMetric:
    """Spatially constant SPD metric."""

    tensor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tensor", check_spd(self.tensor))

    @property
    def dim(self) -> int:
        return self.tensor.shape[0]

    def eval_many(self, points, clamp=False):
        points = np.atleast_2d(points)
        return np.broadcast_to(self.tensor,
                               (len(points), self.dim, self.dim)).copy()

    def eval_with_grad_many(self, points, clamp=False):
        points = np.atleast_2d(points)
        m = self.eval_many(points)
        return m, np.zeros((len(points), self.dim, self.dim, self.dim))


def constant_diag(sizes) -> ConstantMetric:
    """Diagonal metric prescribing a target size per axis: diag(1/h_a^2)."""
    sizes = np.asarray(sizes, dtype=float)
    if (sizes <= 0).any():
        raise SingularMetricError("target sizes must be positive")
    return ConstantMetric(np.diag(1.0 / sizes ** 2))


@dataclass(frozen=True)
class MetricPower:
    """Pointwise fractional power ``M(x)**t`` of another metric field.

    The log-Euclidean interpolant between the identity and ``M``:
    ``t = 0`` gives the identity everywhere, ``t = 1`` the base field,
    and intermediate exponents shrink both the anisotropy ratio and the
    size contrast of the target.  Useful as a continuation family for
    optimization on stiff targets.  The spatial gradient follows from
    the eigendecomposition through the divided differences of
    ``f(lam) = lam**t``.
    """

    base: object
    exponent: float

    def __post_init__(self):
        if not np.isfinite(self.exponent):
            raise SingularMetricError("exponent must be finite")

    @property
    def dim(self) -> int:
        return self.base.dim

    def eval_many(self, points, clamp=False):
        m = self.base.eval_many(points, clamp=clamp)
        w, v = np.linalg.eigh(m)
        return np.einsum("nik,nk,njk->nij", v, w ** self.exponent, v)

    def eval_with_grad_many(self, points, clamp=False):
        m, dm = self.base.eval_with_grad_many(points, clamp=clamp)
        t = self.exponent
        w, v = np.linalg.eigh(m)
        m_t = np.einsum("nik,nk,njk->nij", v, w ** t, v)
        wi = w[:, :, None]
        wj = w[:, None, :]
        diff = wi - wj
        close = np.abs(diff) <= 1e-10 * np.maximum(wi, wj)
        divided = np.where(close,
                           t * (0.5 * (wi + wj)) ** (t - 1.0),
                           (wi ** t - wj ** t) / np.where(close, 1.0, diff))
        in_basis = np.einsum("nri,nars,nsj->naij", v, dm, v)
        dm_t = np.einsum("npi,naij,nqj->napq", v,
                         divided[:, None] * in_basis, v)
        return m_t, dm_t


@dataclass(frozen=True)
class BoundaryLayer2D:
    """Boundary-layer metric with a curved or flat anisotropy line.

    The target size is h_unit along the layer and h_unit * h(v) across
    it, where h(v) = h_min + growth * |v| and v is the signed distance
    coordinate.  With ``deform`` the layer follows the curve
    10 y + cos_coeff * cos(2 pi x) = 0 (the metric is the pullback of
    the flat layer under that deformation); otherwise the layer is the
    x axis.
    """

    h_unit: float = 0.25
    h_min: float = 0.01
    growth: float = 2.0
    deform: bool = True
    cos_coeff: float = -1.0

    dim = 2

    def __post_init__(self):
        if self.h_unit <= 0 or self.h_min <= 0 or self.growth < 0:
            raise SingularMetricError("boundary-layer sizes must be "
                                      "positive")

    def _parts(self, points):
        x, y = points[:, 0], points[:, 1]
        c = 1.0 / sqrt(100.0 + 4.0 * pi ** 2)
        if self.deform:
            v = c * (10.0 * y + self.cos_coeff * np.cos(2.0 * pi * x))
            jx = -2.0 * pi * c * self.cos_coeff * np.sin(2.0 * pi * x)
            jy = np.full_like(x, 10.0 * c)
            djx_dx = -4.0 * pi ** 2 * c * self.cos_coeff * np.cos(
                2.0 * pi * x)
        else:
            v = y
            jx = np.zeros_like(x)
            jy = np.ones_like(x)
            djx_dx = np.zeros_like(x)
        h = self.h_min + self.growth * np.abs(v)
        return v, h, jx, jy, djx_dx

    def eval_many(self, points, clamp=False):
        points = np.atleast_2d(points)
        v, h, jx, jy, _ = self._parts(points)
        w = 1.0 / h ** 2
        s = 1.0 / self.h_unit ** 2
        m = np.empty((len(points), 2, 2))
        m[:, 0, 0] = s * (1.0 + w * jx ** 2)
        m[:, 0, 1] = m[:, 1, 0] = s * w * jx * jy
        m[:, 1, 1] = s * w * jy ** 2
        return m

    def eval_with_grad_many(self, points, clamp=False):
        points = np.atleast_2d(points)
        v, h, jx, jy, djx_dx = self._parts(points)
        w = 1.0 / h ** 2
        s = 1.0 / self.h_unit ** 2
        m = np.empty((len(points), 2, 2))
        m[:, 0, 0] = s * (1.0 + w * jx ** 2)
        m[:, 0, 1] = m[:, 1, 0] = s * w * jx * jy
        m[:, 1, 1] = s * w * jy ** 2

        dv = np.stack([jx, jy], axis=1)                  # (n, 2)
        dw = (-2.0 * self.growth / h ** 3)[:, None] * np.sign(v)[:, None] \
            * dv
        djx = np.stack([djx_dx, np.zeros_like(djx_dx)], axis=1)
        grad = np.zeros((len(points), 2, 2, 2))          # (n, axis, i, j)
        grad[:, :, 0, 0] = s * (dw * (jx ** 2)[:, None]
                                + (2.0 * w * jx)[:, None] * djx)
        off = s * (dw * (jx * jy)[:, None] + (w * jy)[:, None] * djx)
        grad[:, :, 0, 1] = off
        grad[:, :, 1, 0] = off
        grad[:, :, 1, 1] = s * dw * (jy ** 2)[:, None]
        return m, grad


# ---------------------------------------------------------------------------
# Discrete log-Euclidean fields


class _GridLocator:
    """Uniform-grid candidate lookup over element bounding boxes."""

    def __init__(self, background: HighOrderMesh):
        coords = background.element_coords()
        self.lo = coords.min(axis=(0, 1))
        self.hi = coords.max(axis=(0, 1))
        box_lo = coords.min(axis=1)
        box_hi = coords.max(axis=1)
        diag = np.linalg.norm(box_hi - box_lo, axis=1).mean()
        extent = np.maximum(self.hi - self.lo, 1e-300)
        self.shape = np.maximum(1, np.minimum(
            256, np.ceil(extent / max(diag, 1e-300)).astype(int)))
        self.cell = extent / self.shape
        ncells = int(np.prod(self.shape))
        buckets: list[list[int]] = [[] for _ in range(ncells)]
        pad = 1e-12 * np.linalg.norm(extent)
        for e in range(background.n_elements):
            i_lo = self._cell_index(box_lo[e] - pad)
            i_hi = self._cell_index(box_hi[e] + pad)
            for flat in self._flat_range(i_lo, i_hi):
                buckets[flat].append(e)
        self.buckets = [np.array(b, dtype=int) for b in buckets]

    def _cell_index(self, pt):
        idx = np.floor((pt - self.lo) / self.cell).astype(int)
        return np.clip(idx, 0, self.shape - 1)

    def _flat_range(self, i_lo, i_hi):
        ranges = [range(a, b + 1) for a, b in zip(i_lo, i_hi)]
        if len(ranges) == 2:
            for i in ranges[0]:
                for j in ranges[1]:
                    yield i * self.shape[1] + j
        else:
            for i in ranges[0]:
                for j in ranges[1]:
                    for k in ranges[2]:
                        yield (i * self.shape[1] + j) * self.shape[2] + k

    def candidates(self, points):
        idx = np.floor((points - self.lo) / self.cell).astype(int)
        idx = np.clip(idx, 0, self.shape - 1)
        if points.shape[1] == 2:
            flat = idx[:, 0] * self.shape[1] + idx[:, 1]
        else:
            flat = (idx[:, 0] * self.shape[1] + idx[:, 1]) \
                * self.shape[2] + idx[:, 2]
        return [self.buckets[f] for f in flat]


class DiscreteMetricField:
    """Nodal SPD tensors on a background mesh, interpolated through the
    matrix logarithm.

    Strict evaluation raises OutOfDomainError for points beyond a 1e-8
    barycentric tolerance outside the background mesh; with ``clamp``
    such points evaluate at the nearest point of the best candidate
    element instead, which optimization uses for trial states that step
    outside the metric's support.
    """

    def __init__(self, background: HighOrderMesh, nodal_metrics):
        self.background = background
        self.dim = background.dim
        tensors = np.asarray(nodal_metrics, dtype=float)
        if tensors.shape != (background.n_nodes, self.dim, self.dim):
            raise SingularMetricError("one tensor required per background "
                                      "node")
        scale = np.abs(tensors).max(axis=(1, 2))
        asym = np.abs(tensors - tensors.transpose(0, 2, 1)).max(axis=(1, 2))
        bad = np.nonzero(asym > 1e-12 * np.maximum(1.0, scale))[0]
        if bad.size:
            raise SingularMetricError(
                f"nodal metric {bad[0]} is not symmetric")
        tensors = 0.5 * (tensors + tensors.transpose(0, 2, 1))
        w = np.linalg.eigvalsh(tensors)
        bad = np.nonzero(w.min(axis=1) <= _EIG_FLOOR)[0]
        if bad.size:
            raise SingularMetricError(
                f"nodal metric {bad[0]} is not positive definite")
        self.nodal_metrics = tensors
        self.nodal_logs = metric_log(tensors)
        self._basis = sx.lagrange_basis(self.dim, background.degree)
        self._locator = _GridLocator(background)
        self._coords = background.element_coords()
        scale_box = np.linalg.norm(self._locator.hi - self._locator.lo)
        self._newton_tol = 1e-12 * max(scale_box, 1.0)
        if background.degree == 1:
            v0 = self._coords[:, 0, :]
            jac = self._coords[:, 1:, :].transpose(0, 2, 1) - v0[:, :, None]
            self._affine_v0 = v0
            self._affine_inv = np.linalg.inv(jac)
        else:
            self._affine_v0 = None

    # -- point location

    def locate(self, points, clamp=False):
        """Element index and master coordinates per point.

        Returns (elements, xi).  Unresolved points raise
        OutOfDomainError unless ``clamp``, in which case the best
        candidate element is used with barycentrics clamped onto it.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        elems = np.full(n, -1, dtype=int)
        xi = np.zeros((n, self.dim))
        best_score = np.full(n, -np.inf)
        best_elem = np.full(n, -1, dtype=int)
        best_xi = np.zeros((n, self.dim))

        cand = self._locator.candidates(points)
        counts = np.array([len(c) for c in cand], dtype=int)
        if counts.sum():
            rows = np.repeat(np.arange(n), counts)
            es = np.concatenate([c for c in cand if len(c)])
            inside, xis, score = self._invert(es, points[rows])
            # best pair per point: inside first, then max min-barycentric
            order = np.lexsort((es, -score, (~inside).astype(int), rows))
            uniq, first = np.unique(rows[order], return_index=True)
            pick = order[first]
            hit = inside[pick]
            elems[uniq[hit]] = es[pick[hit]]
            xi[uniq[hit]] = xis[pick[hit]]
            best_score[uniq] = score[pick]
            best_elem[uniq] = es[pick]
            best_xi[uniq] = xis[pick]
        pending = np.nonzero(elems < 0)[0]

        if pending.size:
            # exhaustive fallback for stragglers (rare)
            all_elems = np.arange(self.background.n_elements)
            for p in pending:
                tried = set(int(e) for e in cand[p])
                rest = np.array([e for e in all_elems if e not in tried],
                                dtype=int)
                if rest.size == 0:
                    continue
                found, xis, score = self._invert(
                    rest, np.repeat(points[p:p + 1], len(rest), axis=0))
                better = int(np.argmax(score))
                if score[better] > best_score[p]:
                    best_score[p] = score[better]
                    best_elem[p] = rest[better]
                    best_xi[p] = xis[better]
                if found.any():
                    w = int(np.nonzero(found)[0][0])
                    elems[p] = rest[w]
                    xi[p] = xis[w]
            pending = pending[elems[pending] < 0]

        if pending.size:
            near = best_score[pending] >= -_INSIDE_TOL
            ok = pending[near]
            elems[ok] = best_elem[ok]
            xi[ok] = self._clamp_xi(best_xi[ok])
            pending = pending[~near]
        if pending.size:
            if not clamp:
                p = pending[0]
                raise OutOfDomainError(
                    f"point {points[p].tolist()} lies outside the "
                    f"background mesh")
            elems[pending] = best_elem[pending]
            xi[pending] = self._clamp_xi(best_xi[pending])
        return elems, xi

    def _clamp_xi(self, xi):
        lam = sx.barycentric(xi, self.dim)
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum(axis=1, keepdims=True)
        return lam[:, 1:]

    def _invert(self, elems, pts):
        """Inversion of the background map for (element, point) pairs;
        returns (inside, xi, min_barycentric)."""
        if len(elems) == 0:
            return (np.zeros(0, dtype=bool), np.zeros((0, self.dim)),
                    np.zeros(0))
        if self._affine_v0 is not None:
            xi = np.einsum("bij,bj->bi", self._affine_inv[elems],
                           pts - self._affine_v0[elems])
            score = sx.barycentric(xi, self.dim).min(axis=1)
            return score >= -_INSIDE_TOL, xi, score
        coords = self._coords[elems]
        xi = np.full((len(pts), self.dim), 1.0 / (self.dim + 1))
        for _ in range(30):
            shp = self._basis.eval(xi)
            phys = np.einsum("bn,bnd->bd", shp, coords)
            res = phys - pts
            if np.abs(res).max() <= self._newton_tol:
                break
            grd = self._basis.grad(xi)
            jac = np.einsum("bnd,bnk->bdk", coords, grd)
            try:
                step = np.linalg.solve(jac, res[..., None])[..., 0]
            except np.linalg.LinAlgError:
                return (np.zeros(len(pts), dtype=bool), xi,
                        np.full(len(pts), -np.inf))
            xi = xi - step
        lam = sx.barycentric(xi, self.dim)
        score = lam.min(axis=1)
        shp = self._basis.eval(xi)
        phys = np.einsum("bn,bnd->bd", shp, coords)
        resid = np.linalg.norm(phys - pts, axis=1)
        converged = resid <= max(self._newton_tol * 1e3, 1e-9)
        inside = (score >= -_INSIDE_TOL) & converged
        return inside, xi, np.where(converged, score, -np.inf)

    # -- evaluation

    def eval_many(self, points, clamp=False):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        elems, xi = self.locate(points, clamp=clamp)
        shp = self._basis.eval(xi)
        logs = self.nodal_logs[self.background.elements[elems]]
        log_m = np.einsum("bn,bnij->bij", shp, logs)
        return metric_exp(log_m)

    def eval_with_grad_many(self, points, clamp=False):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        elems, xi = self.locate(points, clamp=clamp)
        shp = self._basis.eval(xi)
        grd = self._basis.grad(xi)
        coords = self._coords[elems]
        logs = self.nodal_logs[self.background.elements[elems]]
        log_m = np.einsum("bn,bnij->bij", shp, logs)

        jac = np.einsum("bnd,bnk->bdk", coords, grd)
        dn_dx = np.linalg.solve(
            jac.transpose(0, 2, 1), grd.transpose(0, 2, 1)
        ).transpose(0, 2, 1)                             # (b, n, d)
        dlog = np.einsum("bna,bnij->baij", dn_dx, logs)  # (b, axis, i, j)

        w, q = np.linalg.eigh(log_m)
        m = np.einsum("bij,bj,bkj->bik", q, np.exp(w), q)
        grad = _exp_directional(w[:, None, :], q[:, None, :, :], dlog)
        return m, grad
