"""High-order simplicial meshes.

A mesh stores nodal coordinates, element connectivity into the equispaced
degree-p lattice (vertices first, normative ordering from
``simplex.simplex_multiindices``) and one boundary constraint per node.
Shared sub-entities are identified by their sorted global vertex tuple;
the per-entity node order is canonical (entity vertices by ascending
global index, then the lattice order of the entity's own dimension), so
adjacent elements resolve a shared entity to the same node list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations, permutations

import numpy as np

from . import simplex as sx
from .exceptions import MeshFormatError, MeshIntegrityError

_ENTITY_TOL = 1e-9


@dataclass(frozen=True)
class BoundaryConstraint:
    """Movement constraint of a single node.

    kind 'free' allows all coordinates to move, 'fixed' freezes all of
    them, and 'slide' freezes the listed coordinate axes (a nonempty
    proper subset) so the node slides inside an axis-aligned plane.
    """

    kind: str
    frozen: tuple[int, ...] = ()

    KINDS = ("free", "fixed", "slide")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise MeshFormatError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "slide" and not self.frozen:
            raise MeshFormatError("slide constraint needs frozen axes")
        if self.kind != "slide" and self.frozen:
            raise MeshFormatError(f"{self.kind} constraint takes no axes")
        object.__setattr__(self, "frozen", tuple(sorted(self.frozen)))

    def frozen_axes(self, dim: int) -> tuple[int, ...]:
        if self.kind == "free":
            return ()
        if self.kind == "fixed":
            return tuple(range(dim))
        if any(a < 0 or a >= dim for a in self.frozen):
            raise MeshFormatError(f"frozen axis out of range: {self.frozen}")
        if len(self.frozen) >= dim:
            raise MeshFormatError("slide constraint freezing every axis")
        return self.frozen


FREE = BoundaryConstraint("free")
FIXED = BoundaryConstraint("fixed")


def slide(*axes: int) -> BoundaryConstraint:
    return BoundaryConstraint("slide", tuple(axes))


@dataclass
class HighOrderMesh:
    """Degree-p simplicial mesh in d dimensions."""

    dim: int
    degree: int
    nodes: np.ndarray                     # (n_nodes, dim) float
    elements: np.ndarray                  # (n_elements, nodes_per_elem) int
    constraints: list[BoundaryConstraint] = field(default_factory=list)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise MeshFormatError(f"mesh dimension must be 2 or 3, "
                                  f"got {self.dim}")
        if self.degree not in sx.SUPPORTED_DEGREES:
            raise MeshFormatError(f"unsupported mesh degree {self.degree}")
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=int)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.dim:
            raise MeshFormatError("node array must have shape (n, dim)")
        nn = sx.node_count(self.dim, self.degree)
        if self.elements.ndim != 2 or self.elements.shape[1] != nn:
            bad = 0 if self.elements.ndim != 2 else None
            raise MeshFormatError(
                f"element {bad if bad is not None else 'array'} has "
                f"{self.elements.shape[-1] if self.elements.size else 0} "
                f"nodes, expected {nn} for dim {self.dim} degree "
                f"{self.degree}")
        if not self.constraints:
            self.constraints = [FREE] * len(self.nodes)
        if len(self.constraints) != len(self.nodes):
            raise MeshFormatError("one constraint required per node")
        self._validate_connectivity()

    def _validate_connectivity(self):
        n = len(self.nodes)
        for e, row in enumerate(self.elements):
            if row.min() < 0 or row.max() >= n:
                raise MeshFormatError(
                    f"element {e} references node {row.min() if row.min() < 0 else row.max()} "
                    f"outside 0..{n - 1}")
            if len(set(row.tolist())) != len(row):
                raise MeshFormatError(f"element {e} repeats a node index")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def nodes_per_element(self) -> int:
        return sx.node_count(self.dim, self.degree)

    def element_coords(self, index=None) -> np.ndarray:
        """Nodal coordinates per element, shape (E, n_local, dim)."""
        if index is None:
            return self.nodes[self.elements]
        return self.nodes[self.elements[index]]

    def free_mask(self) -> np.ndarray:
        """Boolean (n_nodes, dim) mask of movable coordinates."""
        mask = np.ones((self.n_nodes, self.dim), dtype=bool)
        for i, c in enumerate(self.constraints):
            for a in c.frozen_axes(self.dim):
                mask[i, a] = False
        return mask

    def copy(self) -> "HighOrderMesh":
        return HighOrderMesh(self.dim, self.degree, self.nodes.copy(),
                             self.elements.copy(), list(self.constraints))

    def bounding_box(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)


# ---------------------------------------------------------------------------
# Entity classification of a nodal set on the master simplex


@dataclass(frozen=True)
class EntityRef:
    """One sub-entity of a mesh with its canonical node list."""

    element: int
    dim: int
    local_index: int
    vertices: tuple[int, ...]   # sorted global vertex ids
    nodes: tuple[int, ...]      # canonical degree-p layout


def local_entities(dim: int, entity_dim: int):
    """Sorted master-vertex index tuples of the entity_dim-entities."""
    return list(combinations(range(dim + 1), entity_dim + 1))


@lru_cache(maxsize=None)
def _entity_tables(dim: int, degree: int, warped: bool):
    """Entity classification of a nodal set on the master simplex.

    Returns (own, closed, reference) where ``own[m]`` lists, per local
    m-entity, the nodes whose smallest containing entity it is,
    ``closed[m]`` lists all nodes on the closed entity, and
    ``reference[m]`` is the canonical barycentric layout used to order
    entity nodes (the equispaced lattice order, or a lexicographic order
    for warped sets).  Entries are (vertex_tuple, node_indices, barys).
    """
    if warped:
        nodes = sx.interpolation_nodes(dim, degree)
    else:
        nodes = sx.master_nodes(dim, degree)
    lam = sx.barycentric(nodes, dim)
    support = lam > _ENTITY_TOL

    own: dict[int, list] = {m: [] for m in range(dim + 1)}
    smallest: dict[tuple, tuple] = {}
    for m in range(dim + 1):
        for ent in local_entities(dim, m):
            sel = [i for i in range(len(nodes))
                   if set(np.nonzero(support[i])[0]) == set(ent)]
            if sel:
                bary = lam[np.ix_(sel, list(ent))]
                own[m].append((ent, np.array(sel), bary))
                smallest[ent] = (np.array(sel), bary)

    closed: dict[int, list] = {m: [] for m in range(1, dim + 1)}
    for m in range(1, dim + 1):
        for ent in local_entities(dim, m):
            idx_parts, bary_parts = [], []
            for sub_m in range(m + 1):
                for sub in combinations(ent, sub_m + 1):
                    if sub not in smallest:
                        continue
                    idx, bary = smallest[sub]
                    pos = [ent.index(v) for v in sub]
                    full = np.zeros((len(idx), m + 1))
                    full[:, pos] = bary
                    idx_parts.append(idx)
                    bary_parts.append(full)
            closed[m].append((ent, np.concatenate(idx_parts),
                              np.vstack(bary_parts)))

    reference: dict[int, np.ndarray] = {0: np.ones((1, 1))}
    for m in range(1, dim + 1):
        if warped:
            first = closed[m][0][2]
            order = np.lexsort(first.T[::-1])
            reference[m] = first[order]
        else:
            reference[m] = sx.barycentric(sx.master_nodes(m, degree), m)
    return own, closed, reference


def _slot_indices(bary, reference):
    """Match rows of ``bary`` against rows of ``reference`` (barycentric
    tables over the same entity), returning reference slot indices."""
    d2 = ((bary[:, None, :] - reference[None, :, :]) ** 2).sum(axis=2)
    slots = np.argmin(d2, axis=1)
    best = d2[np.arange(len(bary)), slots]
    if best.max() > 1e-12:
        raise MeshIntegrityError("entity node distribution mismatch")
    if len(np.unique(slots)) != len(slots):
        raise MeshIntegrityError("ambiguous entity node matching")
    return slots


def sub_entities(mesh: HighOrderMesh, entity_dim: int,
                 warped: bool = False) -> list[EntityRef]:
    """Unique entity_dim-dimensional sub-entities of the mesh.

    Node lists follow the canonical layout: entity vertices by ascending
    global id, then the lattice order of the entity dimension.  Raises
    MeshIntegrityError when two elements resolve a shared entity to
    different node lists.
    """
    if not 1 <= entity_dim <= mesh.dim:
        raise ValueError("entity dimension out of range")
    _, closed, reference = _entity_tables(mesh.dim, mesh.degree, warped)

    seen: dict[tuple, EntityRef] = {}
    out: list[EntityRef] = []
    for e, conn in enumerate(mesh.elements):
        for local_idx, (ent, node_idx, bary) in enumerate(closed[entity_dim]):
            gverts = conn[list(ent)]
            order = np.argsort(gverts)
            key = tuple(int(g) for g in gverts[order])
            slots = _slot_indices(bary[:, order], reference[entity_dim])
            nodes = np.empty(len(slots), dtype=int)
            nodes[slots] = conn[node_idx]
            ref = EntityRef(e, entity_dim, local_idx, key,
                            tuple(int(i) for i in nodes))
            prev = seen.get(key)
            if prev is None:
                seen[key] = ref
                out.append(ref)
            elif prev.nodes != ref.nodes:
                raise MeshIntegrityError(
                    f"elements {prev.element} and {e} disagree on entity "
                    f"{key}")
    return out


# ---------------------------------------------------------------------------
# Global numbering of an arbitrary nodal set over a mesh


def build_global_numbering(mesh: HighOrderMesh, warped: bool = True):
    """Continuous global numbering of a nodal set over the mesh.

    Returns (n_global, conn) where conn has shape (E, n_local).  Nodes
    interior to a shared entity receive one global id, matched through
    the canonical (sorted-vertex) entity frame, which makes the induced
    finite-element space continuous across interfaces.
    """
    own, _, reference = _entity_tables(mesh.dim, mesh.degree, warped)
    n_local = sx.node_count(mesh.dim, mesh.degree)
    conn = np.full((mesh.n_elements, n_local), -1, dtype=int)
    table: dict[tuple, int] = {}
    next_id = 0
    for e, element in enumerate(mesh.elements):
        for m in range(mesh.dim + 1):
            for ent, node_idx, bary in own[m]:
                if m == mesh.dim:
                    key = ("cell", e)
                    slots = np.arange(len(node_idx))
                elif m == 0:
                    key = (int(element[ent[0]]),)
                    slots = np.zeros(1, dtype=int)
                else:
                    gverts = element[list(ent)]
                    order = np.argsort(gverts)
                    key = tuple(int(g) for g in gverts[order])
                    slots = _slot_indices(bary[:, order], reference[m])
                for local, slot in zip(node_idx, slots):
                    full_key = (key, int(slot))
                    gid = table.get(full_key)
                    if gid is None:
                        gid = next_id
                        table[full_key] = gid
                        next_id += 1
                    conn[e, local] = gid
    if (conn < 0).any():
        raise MeshIntegrityError("numbering left unassigned nodes")
    return next_id, conn


def global_node_positions(mesh: HighOrderMesh, n_global: int,
                          conn: np.ndarray, warped: bool = True):
    """Physical positions of globally numbered nodal-set points."""
    if warped:
        ref = sx.interpolation_nodes(mesh.dim, mesh.degree)
    else:
        ref = sx.master_nodes(mesh.dim, mesh.degree)
    geo = sx.lagrange_basis(mesh.dim, mesh.degree)
    shape = geo.eval(ref)  # (n_local, n_geo_local)
    pos = np.empty((n_global, mesh.dim))
    phys = np.einsum("ln,end->eld", shape, mesh.element_coords())
    for e in range(mesh.n_elements):
        pos[conn[e]] = phys[e]
    return pos


# ---------------------------------------------------------------------------
# Structured meshes on axis-aligned boxes


def structured_mesh(dim: int, degree: int, n: int,
                    lo=None, hi=None) -> HighOrderMesh:
    """Uniform simplicial mesh of an axis-aligned box.

    Each of the n**dim cells splits into 2 triangles or 6 positively
    oriented tetrahedra.  Boundary nodes receive slide constraints that
    freeze the box-face coordinate(s); corners are fixed; interior nodes
    are free.  Defaults to the box [-0.5, 0.5]**dim.
    """
    if n < 1:
        raise MeshFormatError("n must be positive")
    lo = np.full(dim, -0.5) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(dim, 0.5) if hi is None else np.asarray(hi, dtype=float)
    if lo.shape != (dim,) or hi.shape != (dim,) or not (hi > lo).all():
        raise MeshFormatError("invalid box bounds")

    simplices = _box_simplices(dim, n)
    multi = sx.simplex_multiindices(dim, degree)  # rows: alpha over xi
    alpha0 = degree - multi.sum(axis=1)

    table: dict[tuple, int] = {}
    coords_idx: list[tuple] = []
    elements = np.empty((len(simplices), len(multi)), dtype=int)
    for e, verts in enumerate(simplices):
        # integer lattice index of each node: sum_i alpha_i * V_i
        v = np.asarray(verts)
        lattice = (alpha0[:, None] * v[0][None, :]
                   + multi @ v[1:])
        for l_local, m in enumerate(lattice):
            key = tuple(int(x) for x in m)
            gid = table.get(key)
            if gid is None:
                gid = len(coords_idx)
                table[key] = gid
                coords_idx.append(key)
            elements[e, l_local] = gid

    big_n = n * degree
    idx = np.array(coords_idx, dtype=float)
    t = idx / float(big_n)
    nodes = lo[None, :] * (1.0 - t) + hi[None, :] * t

    constraints = []
    for key in coords_idx:
        frozen = tuple(a for a, m in enumerate(key) if m == 0 or m == big_n)
        if not frozen:
            constraints.append(FREE)
        elif len(frozen) == dim:
            constraints.append(FIXED)
        else:
            constraints.append(BoundaryConstraint("slide", frozen))
    return HighOrderMesh(dim, degree, nodes, elements, constraints)


def _box_simplices(dim, n):
    """Vertex multi-indices (units of one cell) of the simplices of a
    uniformly split box, all positively oriented."""
    out = []
    if dim == 2:
        for i in range(n):
            for j in range(n):
                c = np.array([i, j])
                v00, v10 = c, c + [1, 0]
                v01, v11 = c + [0, 1], c + [1, 1]
                out.append([v00, v10, v11])
                out.append([v00, v11, v01])
    elif dim == 3:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    c = np.array([i, j, k])
                    for perm in permutations(range(3)):
                        v = [c.copy()]
                        cur = c.copy()
                        for axis in perm:
                            cur = cur.copy()
                            cur[axis] += 1
                            v.append(cur)
                        edges = np.array(v[1:]) - np.array(v[0])
                        if np.linalg.det(edges.T) < 0:
                            v[2], v[3] = v[3], v[2]
                        out.append(v)
    else:
        raise MeshFormatError("structured meshes exist for dim 2 and 3")
    return out
