"""JSON file formats for meshes and metric fields.

Mesh schema::

    {"dim": 2, "degree": 2,
     "nodes": [[x, y], ...],
     "elements": [[i0, i1, ...], ...],
     "constraints": [{"kind": "free"} | {"kind": "fixed"}
                     | {"kind": "slide", "frozen": [axis, ...]}, ...]}

Element node ordering is the equispaced lattice with vertices first
(see ``simplex.simplex_multiindices``).  Metric schema::

    {"dim": 2,
     "background": "analytic" | {mesh object},
     "preset": "constant" | "boundary-layer",    # analytic only
     "params": {...},                            # analytic only
     "nodal_metrics": [[m11, m12, (m13,) m22, (m23, m33)], ...]}

``nodal_metrics`` stores the upper triangle row-major, one row per
background-mesh node.  Serialization uses the shortest round-trip float
representation, so save followed by load is bit identical.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import MeshFormatError
from .mesh import BoundaryConstraint, HighOrderMesh

_TRIU = {2: [(0, 0), (0, 1), (1, 1)],
         3: [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]}


def mesh_to_dict(mesh: HighOrderMesh) -> dict:
    cons = []
    for c in mesh.constraints:
        if c.kind == "slide":
            cons.append({"kind": "slide", "frozen": list(c.frozen)})
        else:
            cons.append({"kind": c.kind})
    return {"dim": mesh.dim,
            "degree": mesh.degree,
            "nodes": mesh.nodes.tolist(),
            "elements": mesh.elements.tolist(),
            "constraints": cons}


def mesh_from_dict(data: dict) -> HighOrderMesh:
    try:
        dim = int(data["dim"])
        degree = int(data["degree"])
        nodes = np.asarray(data["nodes"], dtype=float)
        elements = data["elements"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"malformed mesh object: {exc}") from exc
    if not elements:
        raise MeshFormatError("mesh has no elements")
    width = len(elements[0])
    for e, row in enumerate(elements):
        if len(row) != width:
            raise MeshFormatError(
                f"element {e} has {len(row)} nodes, expected {width}")
    constraints = None
    if data.get("constraints") is not None:
        constraints = []
        for i, c in enumerate(data["constraints"]):
            kind = c.get("kind")
            if kind not in BoundaryConstraint.KINDS:
                raise MeshFormatError(
                    f"constraint {i} has unknown kind {kind!r}")
            constraints.append(
                BoundaryConstraint(kind, tuple(c.get("frozen", ()))))
    try:
        return HighOrderMesh(dim, degree, nodes,
                             np.asarray(elements, dtype=int), constraints)
    except MeshFormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise MeshFormatError(str(exc)) from exc


def save_mesh(mesh: HighOrderMesh, path) -> None:
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)
        fh.write("\n")


def load_mesh(path) -> HighOrderMesh:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError(f"{path}: not valid JSON: {exc}") from exc
    return mesh_from_dict(data)


def metrics_to_rows(tensors: np.ndarray) -> list:
    """Pack (n, d, d) symmetric tensors into upper-triangle rows."""
    d = tensors.shape[-1]
    return [[float(t[i, j]) for i, j in _TRIU[d]] for t in tensors]


def rows_to_metrics(rows, dim: int) -> np.ndarray:
    n = len(rows)
    out = np.empty((n, dim, dim))
    expect = len(_TRIU[dim])
    for r, row in enumerate(rows):
        if len(row) != expect:
            raise MeshFormatError(
                f"nodal_metrics[{r}] has {len(row)} entries, expected "
                f"{expect} for dim {dim}")
        for val, (i, j) in zip(row, _TRIU[dim]):
            out[r, i, j] = val
            out[r, j, i] = val
    return out


def field_to_dict(field) -> dict:
    """Serialize a metric field (analytic preset or discrete)."""
    from . import metric as mt

    if isinstance(field, mt.DiscreteMetricField):
        return {"dim": field.dim,
                "background": mesh_to_dict(field.background),
                "nodal_metrics": metrics_to_rows(field.nodal_metrics)}
    if isinstance(field, mt.ConstantMetric):
        return {"dim": field.dim, "background": "analytic",
                "preset": "constant",
                "params": {"tensor": metrics_to_rows(
                    field.tensor[None, :, :])[0]}}
    if isinstance(field, mt.BoundaryLayer2D):
        return {"dim": 2, "background": "analytic",
                "preset": "boundary-layer",
                "params": {"h_unit": field.h_unit,
                           "h_min": field.h_min,
                           "growth": field.growth,
                           "deform": field.deform,
                           "cos_coeff": field.cos_coeff}}
    raise MeshFormatError(f"cannot serialize field {type(field).__name__}")


def field_from_dict(data: dict):
    from . import metric as mt

    try:
        dim = int(data["dim"])
        background = data["background"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"malformed metric object: {exc}") from exc
    if background == "analytic":
        preset = data.get("preset")
        params = data.get("params", {})
        if preset == "constant":
            tensor = rows_to_metrics([params["tensor"]], dim)[0]
            return mt.ConstantMetric(tensor)
        if preset == "boundary-layer":
            if dim != 2:
                raise MeshFormatError("boundary-layer preset is 2D")
            return mt.BoundaryLayer2D(
                h_unit=float(params.get("h_unit", 0.25)),
                h_min=float(params.get("h_min", 0.01)),
                growth=float(params.get("growth", 2.0)),
                deform=bool(params.get("deform", True)),
                cos_coeff=float(params.get("cos_coeff", -1.0)))
        raise MeshFormatError(f"unknown analytic preset {preset!r}")
    bg = mesh_from_dict(background)
    rows = data.get("nodal_metrics")
    if rows is None or len(rows) != bg.n_nodes:
        raise MeshFormatError("nodal_metrics must list one row per "
                              "background node")
    return mt.DiscreteMetricField(bg, rows_to_metrics(rows, dim))


def save_field(field, path) -> None:
    with open(path, "w") as fh:
        json.dump(field_to_dict(field), fh)
        fh.write("\n")


def load_field(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError(f"{path}: not valid JSON: {exc}") from exc
    return field_from_dict(data)
