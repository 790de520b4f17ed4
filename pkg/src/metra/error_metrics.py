"""Interpolation and approximation error of a mesh for a target function.

Two L2 error notions quantify how well a mesh resolves a scalar field u:
the nodal interpolation error e_I = ||u - Pi u|| with Pi the continuous
interpolation operator on warped (Gauss-Lobatto trace) nodes, and the
best-approximation error e_A = min_v ||u - v|| over the degree-p finite
element space, computed by a global mass-matrix L2 projection.

The interpolation operator samples u at the warped nodal set while the
geometry mapping keeps its equispaced nodes; both sets share the mesh's
global numbering, which enforces continuity across elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import simplex as sx
from .exceptions import ConfigurationError, SolverError
from .mesh import HighOrderMesh

__all__ = [
    "Arctan2D",
    "Arctan3D",
    "ErrorReport",
    "interpolate",
    "interpolation_points",
    "interpolation_error",
    "approximation_error",
    "project",
]


# ---------------------------------------------------------------------------
# Analytic target functions


@dataclass(frozen=True)
class Arctan2D:
    """u(x, y) = arctan(gamma (10 y + cos 2 pi x)).

    A sharp transition layer of width ~1/(10 gamma) follows the curve
    10 y + cos 2 pi x = 0.
    """

    gamma: float = 1.0
    dim = 2

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0.0):
            raise ConfigurationError("gamma must be positive")

    def eval_many(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        arg = 10.0 * points[:, 1] + np.cos(2.0 * np.pi * points[:, 0])
        return np.arctan(self.gamma * arg)


@dataclass(frozen=True)
class Arctan3D:
    """u(x, y, z) = arctan(gamma (10 z + cos 2 pi x cos 2 pi y))."""

    gamma: float = 1.0
    dim = 3

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0.0):
            raise ConfigurationError("gamma must be positive")

    def eval_many(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        arg = 10.0 * points[:, 2] + (np.cos(2.0 * np.pi * points[:, 0])
                                     * np.cos(2.0 * np.pi * points[:, 1]))
        return np.arctan(self.gamma * arg)


def _evaluate(u, points):
    if hasattr(u, "eval_many"):
        return np.asarray(u.eval_many(points), dtype=float)
    return np.asarray(u(points), dtype=float)


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ErrorReport:
    """Global L2 error together with per-element contributions.

    ``total ** 2 == per_element @ per_element`` up to roundoff, so element
    rows can be aggregated into histograms without losing the global value.
    """

    total: float
    per_element: np.ndarray


def _error_rule(mesh, rule):
    if rule is None:
        return sx.quadrature(mesh.dim, 3 * mesh.degree + 2)
    return rule


# ---------------------------------------------------------------------------
# Interpolation


def interpolation_points(mesh: HighOrderMesh) -> np.ndarray:
    """Physical positions of the interpolation nodes, per element.

    Returns
    -------
    ndarray, shape (n_elements, n_basis, dim)
        Images of the warped master nodes under each element map.  Rows
        follow ``mesh.elements``, so shared global nodes receive the same
        physical point from every adjacent element.
    """
    geo = sx.lagrange_basis(mesh.dim, mesh.degree)
    shape = geo.eval(sx.interpolation_nodes(mesh.dim, mesh.degree))
    return np.einsum("qn,end->eqd", shape, mesh.element_coords())


def interpolate(mesh: HighOrderMesh, u) -> np.ndarray:
    """Nodal coefficients of the continuous interpolant of ``u``.

    The coefficient for global node g is u evaluated at the physical
    position of the warped interpolation node sharing g's lattice slot.

    Parameters
    ----------
    mesh : HighOrderMesh
    u : callable or object with ``eval_many``
        Maps an (n, dim) array of points to n values.

    Returns
    -------
    ndarray, shape (n_nodes,)
    """
    phys = interpolation_points(mesh)
    vals = _evaluate(u, phys.reshape(-1, mesh.dim))
    vals = vals.reshape(phys.shape[:2])
    coeffs = np.zeros(mesh.n_nodes)
    coeffs[mesh.elements] = vals
    return coeffs


def _l2_error(mesh, u, coeffs, rule):
    """L2 distance between u and the FE function with the given nodal
    coefficients, globally and per element."""
    geo = sx.lagrange_basis(mesh.dim, mesh.degree)
    fe = sx.interpolation_basis(mesh.dim, mesh.degree)
    coords = mesh.element_coords()
    jac = np.einsum("end,qnk->eqdk", coords, geo.grad(rule.points))
    dets = np.abs(np.linalg.det(jac))
    phys = np.einsum("qn,end->eqd", geo.eval(rule.points), coords)
    uvals = _evaluate(u, phys.reshape(-1, mesh.dim)).reshape(dets.shape)
    vvals = np.einsum("qi,ei->eq", fe.eval(rule.points),
                      coeffs[mesh.elements])
    contrib = np.einsum("q,eq,eq->e", rule.weights, dets,
                        (uvals - vvals) ** 2)
    contrib = np.maximum(contrib, 0.0)
    return sqrt(float(contrib.sum())), np.sqrt(contrib)


def interpolation_error(mesh: HighOrderMesh, u, rule=None) -> ErrorReport:
    """L2 norm of u minus its continuous nodal interpolant.

    Parameters
    ----------
    mesh : HighOrderMesh
    u : callable or object with ``eval_many``
    rule : QuadratureRule, optional
        Defaults to a rule with 3 degree + 2 points per axis so that the
        integration error stays subdominant.
    """
    rule = _error_rule(mesh, rule)
    total, per_element = _l2_error(mesh, u, interpolate(mesh, u), rule)
    return ErrorReport(total, per_element)


# ---------------------------------------------------------------------------
# L2 projection


def project(mesh: HighOrderMesh, u, rule=None) -> np.ndarray:
    """Nodal coefficients of the global L2 projection of ``u``.

    Assembles the finite element mass matrix and load vector by
    quadrature and solves with Jacobi-preconditioned conjugate
    gradients to relative tolerance 1e-10.

    Raises
    ------
    SolverError
        If conjugate gradients fail to reach the tolerance; the message
        reports the achieved relative residual.
    """
    rule = _error_rule(mesh, rule)
    geo = sx.lagrange_basis(mesh.dim, mesh.degree)
    fe = sx.interpolation_basis(mesh.dim, mesh.degree)
    coords = mesh.element_coords()
    jac = np.einsum("end,qnk->eqdk", coords, geo.grad(rule.points))
    dets = np.abs(np.linalg.det(jac))
    phys = np.einsum("qn,end->eqd", geo.eval(rule.points), coords)
    uvals = _evaluate(u, phys.reshape(-1, mesh.dim)).reshape(dets.shape)

    basis = fe.eval(rule.points)
    local_mass = np.einsum("q,eq,qi,qj->eij", rule.weights, dets,
                           basis, basis)
    local_load = np.einsum("q,eq,qi,eq->ei", rule.weights, dets,
                           basis, uvals)

    n_basis = fe.n_nodes
    rows = np.repeat(mesh.elements, n_basis, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_basis)).ravel()
    mass = sp.coo_matrix((local_mass.ravel(), (rows, cols)),
                         shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.elements.ravel(), local_load.ravel())

    precond = sp.diags(1.0 / mass.diagonal())
    coeffs, info = spla.cg(mass, load, rtol=1e-10, atol=0.0, M=precond)
    if info != 0:
        residual = np.linalg.norm(mass @ coeffs - load)
        scale = np.linalg.norm(load)
        raise SolverError(
            "conjugate gradients failed to converge: relative residual "
            f"{residual / max(scale, 1e-300):.3e} after {info} iterations")
    return coeffs


def approximation_error(mesh: HighOrderMesh, u, rule=None) -> ErrorReport:
    """L2 distance from u to the closest continuous FE function.

    Computes the global L2 projection of u and measures the remaining
    error; by construction the total never exceeds the interpolation
    error beyond solver tolerance.
    """
    rule = _error_rule(mesh, rule)
    total, per_element = _l2_error(mesh, u, project(mesh, u, rule), rule)
    return ErrorReport(total, per_element)
