"""Regularized size-shape distortion of high-order elements.

All measures compare the physical element against the ideal element the
metric prescribes: the Jacobian deviation A couples the physical map
with the inverse equilateral frame, and the metric enters through the
weighted Frobenius norm S = sqrt(tr(A^T M A)) and the signed volume
dilation sigma = det(A) sqrt(det M).  Inverted or degenerate samples
(sigma <= 0) carry infinite distortion; the regularization replaces
sigma by its positive part so the measures stay finite-valued exactly on
valid configurations.

Pointwise measures:

    shape distortion   (1/d) S^2 / sigma0^(2/d)
    size distortion    ((sigma0 + 1/sigma0) / 2)^(2/d)
    size-shape         product of the two

Elemental distortion averages the pointwise size-shape value over the
element with quadrature; elemental quality is its reciprocal in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simplex as sx
from .mesh import HighOrderMesh

OBJECTIVE_KINDS = ("size-shape", "shape")


# ---------------------------------------------------------------------------
# Pointwise algebra (vectorized over arbitrary leading axes)


def frobenius_and_det(a: np.ndarray, m: np.ndarray):
    """Metric-weighted Frobenius norm S and signed dilation sigma.

    ``a`` is the Jacobian deviation (physical Jacobian times inverse
    equilateral frame) and ``m`` the metric at the mapped point, both
    batched over leading axes.  sigma keeps the sign of det(a), so
    inverted configurations are detectable.
    """
    s2 = np.einsum("...ac,...ab,...bc->...", a, m, a)
    sigma = _det(a) * np.sqrt(_det(m))
    return np.sqrt(s2), sigma


def _det(m):
    d = m.shape[-1]
    if d == 1:
        return m[..., 0, 0]
    if d == 2:
        return (m[..., 0, 0] * m[..., 1, 1]
                - m[..., 0, 1] * m[..., 1, 0])
    if d == 3:
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2]
                                - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2]
                                  - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1]
                                  - m[..., 1, 1] * m[..., 2, 0]))
    return np.linalg.det(m)


def regularize_sigma(sigma):
    """Positive part (sigma + |sigma|) / 2 of the dilation."""
    return np.maximum(np.asarray(sigma, dtype=float), 0.0)


def shape_distortion(s, sigma0, dim: int):
    """Shape distortion from S and the regularized dilation; infinite
    where sigma0 vanishes."""
    s = np.asarray(s, dtype=float)
    sigma0 = np.asarray(sigma0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (s ** 2 / dim) / sigma0 ** (2.0 / dim)
    return np.where(sigma0 > 0.0, out, np.inf)


def size_distortion(sigma0, dim: int):
    """Size distortion of the regularized dilation; infinite at zero."""
    sigma0 = np.asarray(sigma0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (0.5 * (sigma0 + 1.0 / sigma0)) ** (2.0 / dim)
    return np.where(sigma0 > 0.0, out, np.inf)


def sizeshape_from_parts(s2, sigma, dim: int, kind: str = "size-shape"):
    """Pointwise distortion from S^2 and the signed dilation."""
    sigma0 = regularize_sigma(sigma)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == "size-shape":
            # (1/d) S^2 ((1 + sigma0^-2)/2)^(2/d): the shape factor's
            # sigma0^(2/d) cancels against the size numerator.
            v = ((1.0 + sigma0 ** -2.0) / 2.0) ** (1.0 / dim)
        elif kind == "shape":
            v = sigma0 ** (-1.0 / dim)
        else:
            raise ValueError(f"unknown objective kind {kind!r}")
        out = (np.asarray(s2, dtype=float) / dim) * v * v
    return np.where(sigma0 > 0.0, out, np.inf)


# ---------------------------------------------------------------------------
# Element-level evaluation


def _element_tables(mesh: HighOrderMesh, rule: sx.QuadratureRule):
    basis = sx.lagrange_basis(mesh.dim, mesh.degree)
    shape = basis.eval(rule.points)        # (q, n)
    dshape = basis.grad(rule.points)       # (q, n, d)
    return shape, dshape


def pointwise_distortion_samples(mesh, field, rule=None,
                                 kind: str = "size-shape",
                                 elements=None, clamp: bool = False):
    """Pointwise distortion at the quadrature points of each element.

    Returns (values (E, Q), sigma (E, Q), weights (Q,)).  ``clamp``
    forwards to the metric field for out-of-domain trial states.
    """
    if rule is None:
        rule = sx.default_quadrature(mesh.dim, mesh.degree)
    shape, dshape = _element_tables(mesh, rule)
    coords = mesh.element_coords(elements)
    frame = sx.equilateral_jacobian(mesh.dim)
    ginv = frame.inverse

    jac = np.einsum("end,qnk->eqdk", coords, dshape)
    a = jac @ ginv
    phys = np.einsum("end,qn->eqd", coords, shape)
    m = field.eval_many(phys.reshape(-1, mesh.dim), clamp=clamp)
    m = m.reshape(phys.shape[0], phys.shape[1], mesh.dim, mesh.dim)
    s2 = np.einsum("eqac,eqab,eqbc->eq", a, m, a)
    sigma = _det(a) * np.sqrt(_det(m))
    return sizeshape_from_parts(s2, sigma, mesh.dim, kind), sigma, \
        rule.weights


def elemental_distortion(mesh, field, rule=None, kind: str = "size-shape",
                         elements=None):
    """Quadrature-averaged elemental distortion and quality per element.

    Quality is the reciprocal distortion, zero for any element with an
    invalid (non-positive dilation) sample.
    """
    values, sigma, w = pointwise_distortion_samples(
        mesh, field, rule, kind, elements)
    wsum = w.sum()
    finite = np.isfinite(values).all(axis=1)
    avg = np.where(finite, (values * w).sum(axis=1) / wsum, np.inf)
    with np.errstate(divide="ignore"):
        quality = np.where(finite, 1.0 / avg, 0.0)
    return avg, quality


@dataclass
class DistortionReport:
    """Mesh-level distortion summary."""

    kind: str
    distortion: np.ndarray        # (E,) elemental distortion
    quality: np.ndarray           # (E,) elemental quality in [0, 1]
    pointwise_quality: np.ndarray  # (E, Q) samples at quadrature points
    invalid_elements: tuple

    @property
    def stats(self) -> dict:
        q = self.quality
        return {"min": float(q.min()), "max": float(q.max()),
                "mean": float(q.mean()), "std": float(q.std())}


def mesh_report(mesh, field, rule=None, kind: str = "size-shape"
                ) -> DistortionReport:
    values, sigma, w = pointwise_distortion_samples(mesh, field, rule, kind)
    wsum = w.sum()
    finite = np.isfinite(values).all(axis=1)
    avg = np.where(finite, (values * w).sum(axis=1) / wsum, np.inf)
    with np.errstate(divide="ignore"):
        quality = np.where(finite, 1.0 / avg, 0.0)
        pointwise_quality = np.where(np.isfinite(values), 1.0 / values, 0.0)
    invalid = tuple(int(e) for e in np.nonzero(~finite)[0])
    return DistortionReport(kind, avg, quality, pointwise_quality, invalid)
