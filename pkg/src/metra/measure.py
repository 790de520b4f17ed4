"""Metric-aware Riemannian measures of mesh entities.

The pointwise density of a k-dimensional entity compares the metric
volume form pulled back through the entity embedding against the volume
form of the regular unit k-simplex:

    rho_M = sqrt( det(J^T M J) / det(G^T G) )

with J the d x k entity Jacobian and G the unit-edge equilateral frame
of dimension k.  The entity measure V_M is the quadrature average of
rho_M over the master simplex; both the pointwise density and the
per-entity measure equal 1 exactly when the entity has unit Riemannian
size, which is the configuration a metric-conforming mesh targets.

Lengths (k=1), areas (k=2), and volumes (k=3) of every unique mesh
entity come with summary statistics and log2-scale density histograms.
"""

from dataclasses import dataclass

import numpy as np

from . import mesh as mh
from . import simplex as sx

DEFAULT_BINS = 64


def _entity_nodes(mesh: mh.HighOrderMesh, entity_dim: int) -> np.ndarray:
    """Canonical node ids of every unique entity_dim-entity, (N, n_k)."""
    if entity_dim == mesh.dim:
        return mesh.elements
    ents = mh.sub_entities(mesh, entity_dim)
    return np.array([e.nodes for e in ents], dtype=int)


def density_samples(mesh, field, entity_dim: int, rule=None, clamp=False):
    """Pointwise Riemannian densities of all entity_dim-entities.

    Parameters
    ----------
    mesh : HighOrderMesh
    field : metric field with ``eval_many``
    entity_dim : int
        Entity dimension k in 1..mesh.dim.
    rule : QuadratureRule, optional
        k-dimensional rule; defaults to 3 * degree points per direction.

    Returns
    -------
    rho : ndarray, shape (N, Q)
        Density samples; 0 where the entity Jacobian is singular.
    weights : ndarray, shape (Q,)
        Master-simplex quadrature weights of the rule.
    """
    if not 1 <= entity_dim <= mesh.dim:
        raise ValueError("entity dimension out of range")
    if rule is None:
        rule = sx.quadrature(entity_dim, 3 * mesh.degree)
    nodes = _entity_nodes(mesh, entity_dim)
    coords = mesh.nodes[nodes]                        # (N, n_k, d)
    basis = sx.lagrange_basis(entity_dim, mesh.degree)
    shape = basis.eval(rule.points)                   # (Q, n_k)
    dshape = basis.grad(rule.points)                  # (Q, n_k, k)

    jac = np.einsum("end,qnk->eqdk", coords, dshape)  # (N, Q, d, k)
    phys = np.einsum("end,qn->eqd", coords, shape)
    m = field.eval_many(phys.reshape(-1, mesh.dim), clamp=clamp)
    m = m.reshape(len(nodes), len(rule.points), mesh.dim, mesh.dim)
    gram = np.einsum("eqai,eqab,eqbj->eqij", jac, m, jac)
    det = np.linalg.det(gram)
    frame = sx.equilateral_jacobian(entity_dim)
    rho = np.sqrt(np.clip(det, 0.0, None)) / abs(frame.det)
    return rho, rule.weights


def entity_measures(mesh, field, entity_dim: int, rule=None, clamp=False):
    """Per-entity normalized Riemannian measure V_M, shape (N,).

    The quadrature average of the density: Riemannian length for k=1,
    area for k=2, volume for k=3, each normalized so the unit-edge
    regular simplex under its metric measures exactly 1.
    """
    rho, w = density_samples(mesh, field, entity_dim, rule, clamp)
    return (rho * w).sum(axis=1) / w.sum()


@dataclass
class MeasureHistogram:
    """Distribution summary of one entity dimension.

    ``measures`` holds the per-entity V_M values behind ``stats``;
    ``mass[i]`` accumulates the quadrature weight of density samples
    falling in [bin_edges[i], bin_edges[i+1]) (log2-spaced edges).
    Zero densities from degenerate entities count toward the lowest bin
    and are reported in ``n_degenerate``.
    """

    entity_dim: int
    measures: np.ndarray
    bin_edges: np.ndarray
    mass: np.ndarray
    n_degenerate: int

    @property
    def stats(self) -> dict:
        v = self.measures
        return {"count": int(len(v)), "min": float(v.min()),
                "max": float(v.max()), "mean": float(v.mean()),
                "std": float(v.std())}


def _log2_histogram(rho, weights, n_bins):
    """Quadrature-weighted histogram of densities on log2-spaced bins."""
    flat = rho.reshape(-1)
    w = np.broadcast_to(weights, rho.shape).reshape(-1)
    positive = flat > 0.0
    n_degenerate = int((~positive).sum())
    if positive.any():
        lo = np.log2(flat[positive].min())
        hi = np.log2(flat[positive].max())
    else:
        lo, hi = -0.5, 0.5
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.exp2(np.linspace(lo, hi, n_bins + 1))
    idx = np.searchsorted(edges, flat, side="right") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    mass = np.zeros(n_bins)
    np.add.at(mass, idx, w)
    return edges, mass, n_degenerate


def mesh_measures(mesh, field, n_1d=None, n_bins=DEFAULT_BINS,
                  clamp=False) -> dict:
    """Riemannian measure summary per entity dimension.

    Returns {k: MeasureHistogram} for k = 1..mesh.dim over the unique
    mesh entities: edge lengths, face areas, and cell volumes in the
    metric, with density histograms for each.
    """
    out = {}
    for k in range(1, mesh.dim + 1):
        rule = sx.quadrature(k, n_1d if n_1d is not None
                             else 3 * mesh.degree)
        rho, w = density_samples(mesh, field, k, rule, clamp)
        measures = (rho * w).sum(axis=1) / w.sum()
        edges, mass, n_deg = _log2_histogram(rho, w, n_bins)
        out[k] = MeasureHistogram(k, measures, edges, mass, n_deg)
    return out


def histogram_rows(hist: MeasureHistogram) -> list:
    """CSV-ready (bin_left, bin_right, mass) rows."""
    return [(float(hist.bin_edges[i]), float(hist.bin_edges[i + 1]),
             float(hist.mass[i])) for i in range(len(hist.mass))]
