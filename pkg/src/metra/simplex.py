"""Master simplices, nodal polynomial bases and quadrature.

The master k-simplex has vertices at the origin and the k unit axis
points.  Geometric mappings use Lagrange bases on the equispaced lattice;
the interpolation operator for error measurement uses a warped nodal set
with better approximation properties (Gauss-Lobatto edges).  Bases are
represented in the Bernstein (barycentric) basis, which keeps the nodal
Vandermonde well conditioned for every supported degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb, cos, factorial, pi, sin, sqrt

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

SUPPORTED_DIMS = (1, 2, 3)
SUPPORTED_DEGREES = (1, 2, 3, 4)


def node_count(dim: int, degree: int) -> int:
    """Number of lattice nodes of a degree-p basis on a k-simplex."""
    return comb(dim + degree, dim)


def simplex_multiindices(dim: int, degree: int) -> np.ndarray:
    """Lattice multi-indices m with sum(m) <= degree, vertices first.

    Returns an integer array of shape (node_count, dim).  The first
    dim + 1 rows are the vertices (origin, then unit axis points in axis
    order); the remaining lattice points follow in lexicographic order.
    This ordering is normative for the mesh file format.
    """
    p = degree
    vertices = [np.zeros(dim, dtype=int)]
    for a in range(dim):
        v = np.zeros(dim, dtype=int)
        v[a] = p
        vertices.append(v)
    rest = []
    for m in _lattice(dim, p):
        arr = np.array(m, dtype=int)
        if any(np.array_equal(arr, v) for v in vertices):
            continue
        rest.append(arr)
    rest.sort(key=tuple)
    return np.array(vertices + rest, dtype=int)


def _lattice(dim, p):
    if dim == 0:
        yield ()
        return
    for head in range(p + 1):
        for tail in _lattice(dim - 1, p - head):
            if head + sum(tail) <= p:
                yield (head,) + tail


def master_nodes(dim: int, degree: int) -> np.ndarray:
    """Equispaced nodes of the master k-simplex, shape (n, dim)."""
    _check_dim_degree(dim, degree)
    return simplex_multiindices(dim, degree) / float(degree)


def barycentric(points: np.ndarray, dim: int) -> np.ndarray:
    """Barycentric coordinates (lambda_0..lambda_k) of master points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lam0 = 1.0 - pts.sum(axis=1)
    return np.column_stack([lam0, pts])


def _check_dim_degree(dim, degree):
    if dim not in SUPPORTED_DIMS:
        raise ValueError(f"unsupported simplex dimension {dim}")
    if degree not in SUPPORTED_DEGREES:
        raise ValueError(f"unsupported degree {degree}")


# ---------------------------------------------------------------------------
# Equilateral frames


@dataclass(frozen=True)
class EquilateralFrame:
    """Constant Jacobian of the map from the master to the unit-edge
    equilateral k-simplex, together with its determinant."""

    dim: int
    matrix: np.ndarray
    det: float

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


@lru_cache(maxsize=None)
def equilateral_jacobian(dim: int) -> EquilateralFrame:
    """Edge-vector frame of the unit-edge equilateral simplex.

    Columns are the edge vectors from the first vertex.  In 3D the frame
    is upper triangular with the first edge on the x axis and the first
    face in the xy plane.
    """
    if dim == 1:
        m = np.array([[1.0]])
    elif dim == 2:
        m = np.array([[1.0, 0.5],
                      [0.0, sqrt(3.0) / 2.0]])
    elif dim == 3:
        m = np.array([[1.0, 0.5, 0.5],
                      [0.0, sqrt(3.0) / 2.0, sqrt(3.0) / 6.0],
                      [0.0, 0.0, sqrt(6.0) / 3.0]])
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    m.setflags(write=False)
    return EquilateralFrame(dim, m, float(np.linalg.det(m)))


# ---------------------------------------------------------------------------
# Lagrange bases (Bernstein-backed)


class LagrangeBasis:
    """Nodal Lagrange basis on a k-simplex for an arbitrary unisolvent
    node set.

    Parameters
    ----------
    dim, degree : int
        Simplex dimension and polynomial degree.
    nodes : ndarray, shape (n, dim)
        Basis nodes in master coordinates.
    """

    def __init__(self, dim: int, degree: int, nodes: np.ndarray):
        _check_dim_degree(dim, degree)
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape != (node_count(dim, degree), dim):
            raise ValueError("node array has wrong shape")
        self.dim = dim
        self.degree = degree
        self.nodes = nodes
        self._alphas = _bernstein_multiindices(dim, degree)
        self._scales = np.array(
            [factorial(degree) / np.prod([factorial(int(a)) for a in alpha])
             for alpha in self._alphas])
        vand = self._bernstein_eval(nodes)
        self._coeff = np.linalg.solve(vand, np.eye(len(nodes)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def _bernstein_eval(self, points):
        lam = barycentric(points, self.dim)  # (m, k+1)
        out = np.empty((lam.shape[0], len(self._alphas)))
        for j, alpha in enumerate(self._alphas):
            out[:, j] = self._scales[j] * np.prod(lam ** alpha, axis=1)
        return out

    def _bernstein_grad(self, points):
        lam = barycentric(points, self.dim)
        m = lam.shape[0]
        nmodes = len(self._alphas)
        dlam = np.empty((m, nmodes, self.dim + 1))
        for j, alpha in enumerate(self._alphas):
            for i in range(self.dim + 1):
                a = alpha[i]
                if a == 0:
                    dlam[:, j, i] = 0.0
                    continue
                term = a * lam[:, i] ** (a - 1)
                for l in range(self.dim + 1):
                    if l != i:
                        term = term * lam[:, l] ** alpha[l]
                dlam[:, j, i] = self._scales[j] * term
        # d lambda_0 / d xi_a = -1, d lambda_a / d xi_a = 1
        return dlam[:, :, 1:] - dlam[:, :, :1]

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (n_points, n_nodes)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._bernstein_eval(pts) @ self._coeff

    def grad(self, points: np.ndarray) -> np.ndarray:
        """Basis gradients, shape (n_points, n_nodes, dim)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        db = self._bernstein_grad(pts)  # (m, modes, dim)
        return np.einsum("mja,ji->mia", db, self._coeff)


def _bernstein_multiindices(dim, degree):
    out = []
    for m in _lattice(dim, degree):
        alpha0 = degree - sum(m)
        out.append((alpha0,) + tuple(m))
    out.sort()
    return [np.array(a, dtype=int) for a in out]


@lru_cache(maxsize=None)
def lagrange_basis(dim: int, degree: int) -> LagrangeBasis:
    """Cached Lagrange basis on the equispaced lattice."""
    return LagrangeBasis(dim, degree, master_nodes(dim, degree))


def map_jacobian(coords: np.ndarray, basis: LagrangeBasis,
                 points: np.ndarray) -> np.ndarray:
    """Jacobian of the isoparametric map at master points.

    coords has shape (n_nodes, d); the result has shape
    (n_points, d, dim) with dim the simplex dimension of ``basis``.
    """
    coords = np.asarray(coords, dtype=float)
    dn = basis.grad(points)  # (m, n, k)
    return np.einsum("nd,mnk->mdk", coords, dn)


# ---------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the master simplex.

    ``exactness`` is the total polynomial degree integrated exactly.
    Weights sum to the master simplex volume.
    """

    dim: int
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _gauss01(n):
    x, w = roots_legendre(n)
    return (x + 1.0) / 2.0, w / 2.0


def _gauss_jacobi01(n, alpha):
    # Nodes and weights on [0, 1] for the weight (1 - t)**alpha.
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quadrature(dim: int, n_1d: int) -> QuadratureRule:
    """Collapsed tensor-product Gauss rule with n_1d**dim points.

    A Gauss-Legendre rule in the first direction is combined with
    Jacobi-weighted rules in the collapsed directions, so the mapped
    rule integrates total degree 2*n_1d - 1 exactly on the simplex.
    """
    if n_1d < 1:
        raise ValueError("n_1d must be positive")
    if dim == 1:
        x, w = _gauss01(n_1d)
        pts, wts = x[:, None], w
    elif dim == 2:
        u, wu = _gauss01(n_1d)
        v, wv = _gauss_jacobi01(n_1d, 1.0)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        pts = np.column_stack([(uu * (1.0 - vv)).ravel(), vv.ravel()])
        wts = np.outer(wu, wv).ravel()
    elif dim == 3:
        u, wu = _gauss01(n_1d)
        v, wv = _gauss_jacobi01(n_1d, 1.0)
        t, wt = _gauss_jacobi01(n_1d, 2.0)
        uu, vv, tt = np.meshgrid(u, v, t, indexing="ij")
        x1 = uu * (1.0 - vv) * (1.0 - tt)
        x2 = vv * (1.0 - tt)
        pts = np.column_stack([x1.ravel(), x2.ravel(), tt.ravel()])
        wts = np.einsum("i,j,k->ijk", wu, wv, wt).ravel()
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(dim, pts, wts, 2 * n_1d - 1)


def default_quadrature(dim: int, degree: int, n_1d: int | None = None
                       ) -> QuadratureRule:
    """Rule used by distortion and measure evaluations: n_1d = 3p."""
    return quadrature(dim, n_1d if n_1d is not None else 3 * degree)


# ---------------------------------------------------------------------------
# Warped interpolation nodes

# Gauss-Lobatto points on [-1, 1] for the supported degrees.
_LOBATTO = {
    1: np.array([-1.0, 1.0]),
    2: np.array([-1.0, 0.0, 1.0]),
    3: np.array([-1.0, -1.0 / sqrt(5.0), 1.0 / sqrt(5.0), 1.0]),
    4: np.array([-1.0, -sqrt(3.0 / 7.0), 0.0, sqrt(3.0 / 7.0), 1.0]),
}

# Blend exponents that minimise the Lebesgue constant (Warburton's
# warp-and-blend construction).
_TRI_ALPHA = {1: 0.0, 2: 0.0, 3: 1.4152, 4: 0.1001}
_TET_ALPHA = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.1002}


def _edge_warp(p, r):
    """One-dimensional warp moving equispaced points onto Gauss-Lobatto
    points, divided by the end-point factors (vanishes at the ends)."""
    r = np.asarray(r, dtype=float)
    xeq = np.array([1.0 - 2.0 * i / p for i in range(p + 1)])
    xn = -_LOBATTO[p][::-1]
    warp = np.zeros_like(r)
    for i in range(p + 1):
        d = np.full_like(r, xn[i] - xeq[i])
        for j in range(1, p):
            if i != j:
                d = d * (r - xeq[j]) / (xeq[i] - xeq[j])
        if i != 0:
            d = -d / (xeq[i] - xeq[0])
        if i != p:
            d = d / (xeq[i] - xeq[p])
        warp += d
    return warp


def _triangle_shift(p, alpha, l1, l2, l3):
    """Tangential warp of a barycentric lattice on the equilateral
    triangle; returns the (dx, dy) displacement."""
    blend1 = l2 * l3
    blend2 = l1 * l3
    blend3 = l1 * l2
    wf1 = 4.0 * _edge_warp(p, l3 - l2)
    wf2 = 4.0 * _edge_warp(p, l1 - l3)
    wf3 = 4.0 * _edge_warp(p, l2 - l1)
    w1 = blend1 * wf1 * (1.0 + (alpha * l1) ** 2)
    w2 = blend2 * wf2 * (1.0 + (alpha * l2) ** 2)
    w3 = blend3 * wf3 * (1.0 + (alpha * l3) ** 2)
    dx = w1 + cos(2.0 * pi / 3.0) * w2 + cos(4.0 * pi / 3.0) * w3
    dy = sin(2.0 * pi / 3.0) * w2 + sin(4.0 * pi / 3.0) * w3
    return dx, dy


def _warp_blend_triangle(p):
    lam = barycentric(master_nodes(2, p), 2)
    l1, l2, l3 = lam[:, 2], lam[:, 0], lam[:, 1]
    verts = np.array([[-1.0, -1.0 / sqrt(3.0)],
                      [1.0, -1.0 / sqrt(3.0)],
                      [0.0, 2.0 / sqrt(3.0)]])
    xy = (np.outer(l2, verts[0]) + np.outer(l3, verts[1])
          + np.outer(l1, verts[2]))
    dx, dy = _triangle_shift(p, _TRI_ALPHA[p], l1, l2, l3)
    xy[:, 0] += dx
    xy[:, 1] += dy
    return _to_master(xy, verts)


def _warp_blend_tet(p):
    lam = barycentric(master_nodes(3, p), 3)
    # Lattice barycentrics labelled as in the reference construction.
    l1, l2, l3, l4 = lam[:, 3], lam[:, 2], lam[:, 0], lam[:, 1]
    verts = np.array([[-1.0, -1.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
                      [1.0, -1.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
                      [0.0, 2.0 / sqrt(3.0), -1.0 / sqrt(6.0)],
                      [0.0, 0.0, 3.0 / sqrt(6.0)]])
    xyz = (np.outer(l3, verts[0]) + np.outer(l4, verts[1])
           + np.outer(l2, verts[2]) + np.outer(l1, verts[3]))
    alpha = _TET_ALPHA[p]
    tol = 1e-10

    t1 = np.array([verts[1] - verts[0], verts[1] - verts[0],
                   verts[2] - verts[1], verts[2] - verts[0]])
    t2 = np.array([verts[2] - 0.5 * (verts[0] + verts[1]),
                   verts[3] - 0.5 * (verts[0] + verts[1]),
                   verts[3] - 0.5 * (verts[1] + verts[2]),
                   verts[3] - 0.5 * (verts[0] + verts[2])])
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 /= np.linalg.norm(t2, axis=1)[:, None]

    faces = [(l1, l2, l3, l4), (l2, l1, l3, l4),
             (l3, l1, l4, l2), (l4, l1, l3, l2)]
    shift = np.zeros_like(xyz)
    for face, (la, lb, lc, ld) in enumerate(faces):
        w1, w2 = _triangle_shift(p, alpha, lb, lc, ld)
        blend = lb * lc * ld
        denom = (lb + 0.5 * la) * (lc + 0.5 * la) * (ld + 0.5 * la)
        ok = denom > tol
        blend = np.where(
            ok, (1.0 + (alpha * la) ** 2) * blend / np.where(ok, denom, 1.0),
            blend)
        shift += np.outer(blend * w1, t1[face]) + np.outer(blend * w2,
                                                           t2[face])
        # Nodes on the face boundary take the full, unblended face warp.
        on_edge = (la < tol) & (((lb > tol).astype(int)
                                 + (lc > tol).astype(int)
                                 + (ld > tol).astype(int)) < 3)
        shift[on_edge] = (np.outer(w1[on_edge], t1[face])
                          + np.outer(w2[on_edge], t2[face]))
    xyz += shift
    return _to_master(xyz, verts)


def _to_master(points, verts):
    """Barycentric conversion from an embedded simplex back to master
    coordinates (first vertex maps to the origin)."""
    edges = (verts[1:] - verts[0]).T
    mu = np.linalg.solve(edges, (points - verts[0]).T).T
    return mu


@lru_cache(maxsize=None)
def interpolation_nodes(dim: int, degree: int) -> np.ndarray:
    """Warped nodal set for the interpolation operator.

    Edge traces are Gauss-Lobatto; for degree <= 2 the set coincides
    with the equispaced lattice.  1D returns Gauss-Lobatto directly.
    """
    _check_dim_degree(dim, degree)
    if dim == 1:
        pts = ((_LOBATTO[degree] + 1.0) / 2.0)[:, None]
        order = _match_lattice_order(pts, 1, degree)
        return pts[order]
    if dim == 2:
        pts = _warp_blend_triangle(degree)
    else:
        pts = _warp_blend_tet(degree)
    pts = np.clip(pts, 0.0, None)
    order = _match_lattice_order(pts, dim, degree)
    pts = pts[order]
    pts.setflags(write=False)
    return pts


def _match_lattice_order(pts, dim, degree):
    """Order a warped set like the equispaced lattice (vertices first).

    Solved as an optimal assignment so the pairing stays a bijection even
    when the warp moves interior nodes past lattice midpoints.
    """
    from scipy.optimize import linear_sum_assignment

    ref = master_nodes(dim, degree)
    d2 = ((ref[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(d2)
    order = np.empty(len(pts), dtype=int)
    order[rows] = cols
    return order


@lru_cache(maxsize=None)
def interpolation_basis(dim: int, degree: int) -> LagrangeBasis:
    """Cached Lagrange basis on the warped interpolation nodes."""
    return LagrangeBasis(dim, degree, interpolation_nodes(dim, degree))
