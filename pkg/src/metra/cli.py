"""Command-line interface for mesh generation, quality reporting,
Riemannian measurement, optimization, and error evaluation.

All file formats are JSON (meshes, metric fields, statistics reports)
or CSV (histograms, optimizer traces).  Every report embeds a run
manifest recording the command, input paths, configuration echo, tool
version, and wallclock.  Numerical results are independent of the
``--threads`` setting; the flag only caps the linear-algebra thread
pools.

Exit codes: 0 success, 2 invalid input or configuration, 3 invalid
mesh detected, 4 iterative-solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import distortion as dt
from . import error_metrics as em
from . import io as mio
from . import measure as ms
from . import mesh as mh
from . import metric as mt
from . import optimize as op
from . import simplex as sx
from .exceptions import (
    ConfigurationError,
    InvalidMeshError,
    MeshIntegrityError,
    SolverError,
)

_VTK_CELL_TYPES = {2: 5, 3: 10}  # linear triangle, linear tetrahedron


# ---------------------------------------------------------------------------
# Shared plumbing


def _manifest(command, inputs, config, started):
    return {
        "command": command,
        "inputs": [str(p) for p in inputs],
        "config": config,
        "version": __version__,
        "wallclock_s": round(time.perf_counter() - started, 6),
    }


def _write_json(path, payload):
    text = json.dumps(payload, indent=2)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _write_csv(path, header, rows, manifest):
    with open(path, "w", newline="") as fh:
        fh.write("# manifest: " + json.dumps(manifest) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _finite_or_none(values):
    return [float(v) if np.isfinite(v) else None for v in values]


def _export_vtk(mesh, path):
    """Legacy-ASCII VTK dump of the linear element skeleton.

    Only corner vertices are written; curved interiors are for visual
    inspection elsewhere.  Output-only, never parsed back.
    """
    points = np.zeros((mesh.n_nodes, 3))
    points[:, : mesh.dim] = mesh.nodes
    corners = mesh.elements[:, : mesh.dim + 1]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"metra {__version__} linear skeleton\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in points:
            fh.write(f"{p[0]!r} {p[1]!r} {p[2]!r}\n")
        width = corners.shape[1]
        fh.write(f"CELLS {len(corners)} {len(corners) * (width + 1)}\n")
        for row in corners:
            fh.write(" ".join([str(width)] + [str(int(i)) for i in row]))
            fh.write("\n")
        fh.write(f"CELL_TYPES {len(corners)}\n")
        cell_type = _VTK_CELL_TYPES[mesh.dim]
        for _ in range(len(corners)):
            fh.write(f"{cell_type}\n")


def _parse_domain(text, dim):
    if text is None:
        return None, None
    try:
        lo_text, hi_text = text.split(":")
        lo = [float(v) for v in lo_text.split(",")]
        hi = [float(v) for v in hi_text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(
            f"--domain must look like 'x0,y0:x1,y1', got {text!r}") from exc
    if len(lo) != dim or len(hi) != dim:
        raise ConfigurationError(
            f"--domain needs {dim} coordinates per corner")
    return lo, hi


def _optional_rule(mesh, n_1d):
    if n_1d is None:
        return None
    return sx.quadrature(mesh.dim, n_1d)


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_mesh(args):
    lo, hi = _parse_domain(args.domain, args.dim)
    try:
        mesh = mh.structured_mesh(args.dim, args.degree, args.n,
                                  lo=lo, hi=hi)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    mio.save_mesh(mesh, args.out)
    if args.export_vtk:
        _export_vtk(mesh, args.export_vtk)
    return 0


def _build_preset(args):
    if args.preset == "constant":
        if args.entries is not None:
            values = [float(v) for v in args.entries.split(",")]
            dims = {3: 2, 6: 3}
            if len(values) not in dims:
                raise ConfigurationError(
                    "--entries needs 3 (2D) or 6 (3D) upper-triangle "
                    "values")
            dim = dims[len(values)]
            return mt.ConstantMetric(mio.rows_to_metrics([values], dim)[0])
        if args.h is not None:
            sizes = (1.0,) * (args.dim - 1) + (args.h,)
            return mt.constant_diag(sizes)
        raise ConfigurationError("constant preset needs --h or --entries")
    return mt.BoundaryLayer2D(h_unit=args.h_unit, h_min=args.h_min,
                              growth=args.growth, deform=args.deform,
                              cos_coeff=args.cos_coeff)


def cmd_gen_metric(args):
    field = _build_preset(args)
    if args.background is not None:
        background = mio.load_mesh(args.background)
        if background.dim != field.dim:
            raise ConfigurationError(
                f"background mesh is {background.dim}D but the preset "
                f"is {field.dim}D")
        field = mt.DiscreteMetricField(background,
                                       field.eval_many(background.nodes))
    mio.save_field(field, args.out)
    return 0


def cmd_quality(args):
    started = time.perf_counter()
    mesh = mio.load_mesh(args.mesh)
    field = mio.load_field(args.metric)
    report = dt.mesh_report(mesh, field, _optional_rule(mesh, args.n_1d),
                            kind=args.objective)
    config = {"objective": args.objective,
              "n_1d": args.n_1d or 3 * mesh.degree}
    payload = {
        "objective": args.objective,
        "stats": report.stats,
        "invalid_elements": [int(e) for e in report.invalid_elements],
        "per_element": {
            "distortion": _finite_or_none(report.distortion),
            "quality": [float(q) for q in report.quality],
        },
        "manifest": _manifest("quality", [args.mesh, args.metric],
                              config, started),
    }
    _write_json(args.out, payload)
    return 0


def cmd_measure(args):
    started = time.perf_counter()
    mesh = mio.load_mesh(args.mesh)
    field = mio.load_field(args.metric)
    hists = ms.mesh_measures(mesh, field, n_1d=args.n_1d,
                             n_bins=args.bins)
    config = {"n_1d": args.n_1d or 3 * mesh.degree, "bins": args.bins}
    manifest = _manifest("measure", [args.mesh, args.metric], config,
                         started)
    entities = {}
    for k, hist in hists.items():
        entities[str(k)] = {
            "stats": hist.stats,
            "n_degenerate": int(hist.n_degenerate),
            "histogram": {
                "bin_edges": [float(e) for e in hist.bin_edges],
                "mass": [float(m) for m in hist.mass],
            },
        }
    payload = {"entities": entities, "manifest": manifest}
    _write_json(args.out, payload)
    if args.histogram_csv:
        for k, hist in hists.items():
            _write_csv(f"{args.histogram_csv}_dim{k}.csv",
                       ("bin_left", "bin_right", "mass"),
                       ms.histogram_rows(hist), manifest)
    return 0


def cmd_optimize(args):
    started = time.perf_counter()
    mesh = mio.load_mesh(args.mesh)
    field = mio.load_field(args.metric)
    kwargs = {"rms_tol": args.rms_tol, "step_tol": args.step_tol,
              "max_newton_iters": args.max_iters,
              "max_pcg_iters": args.pcg_iters,
              "pcg_rel_tol": args.pcg_tol,
              "objective": args.objective}
    if args.n_1d is not None:
        kwargs["n_1d"] = args.n_1d
    config = op.OptimizerConfig(**kwargs)

    before = dt.mesh_report(mesh, field, kind=args.objective)
    if args.continuation:
        exponents = tuple(float(v) for v in args.continuation.split(","))
        result = op.optimize_continuation(mesh, field, config,
                                          exponents=exponents)
    else:
        exponents = None
        result = op.optimize(mesh, field, config)
    mio.save_mesh(result.mesh, args.out)
    if args.export_vtk:
        _export_vtk(result.mesh, args.export_vtk)

    config_echo = asdict(config)
    config_echo["continuation"] = list(exponents) if exponents else None
    manifest = _manifest("optimize", [args.mesh, args.metric],
                         config_echo, started)
    if args.trace:
        header = ("iteration", "objective", "grad_rms", "step",
                  "wallclock_ms")
        rows = [[row[key] for key in header] for row in result.trace]
        _write_csv(args.trace, header, rows, manifest)
    if args.report:
        after = dt.mesh_report(result.mesh, field, kind=args.objective)
        validity = op.verify_validity(result.mesh, field)
        payload = {
            "converged": result.converged,
            "reason": result.reason,
            "n_iterations": result.n_iterations,
            "objective": result.objective,
            "grad_rms": result.grad_rms,
            "before": {"stats": before.stats,
                       "invalid_elements":
                           [int(e) for e in before.invalid_elements]},
            "after": {"stats": after.stats,
                      "invalid_elements":
                          [int(e) for e in after.invalid_elements],
                      "invalid_at_dense_sampling":
                          [int(e) for e in validity.invalid_elements]},
            "manifest": manifest,
        }
        _write_json(args.report, payload)
    return 0


def cmd_error(args):
    started = time.perf_counter()
    mesh = mio.load_mesh(args.mesh)
    if args.function == "arctan2d":
        function = em.Arctan2D(gamma=args.gamma)
    else:
        function = em.Arctan3D(gamma=args.gamma)
    if mesh.dim != function.dim:
        raise ConfigurationError(
            f"{args.function} expects a {function.dim}D mesh, got "
            f"{mesh.dim}D")
    rule = _optional_rule(mesh, args.n_1d)
    interp = em.interpolation_error(mesh, function, rule)
    approx = em.approximation_error(mesh, function, rule)
    config = {"function": args.function, "gamma": args.gamma,
              "n_1d": args.n_1d or 3 * mesh.degree + 2}
    payload = {
        "global_eI": interp.total,
        "global_eA": approx.total,
        "per_element": [
            {"eI": float(a), "eA": float(b)}
            for a, b in zip(interp.per_element, approx.per_element)
        ],
        "manifest": _manifest("error", [args.mesh], config, started),
    }
    _write_json(args.out, payload)
    return 0


def cmd_validate(args):
    started = time.perf_counter()
    mesh = mio.load_mesh(args.mesh)
    field = mio.load_field(args.metric) if args.metric else None
    report = op.verify_validity(mesh, field, n_1d=args.degree_sampling)
    config = {"degree_sampling": args.degree_sampling or 3 * mesh.degree,
              "metric": bool(field)}
    inputs = [args.mesh] + ([args.metric] if args.metric else [])
    payload = {
        "valid": bool(report.ok),
        "n_samples": int(report.n_samples),
        "invalid_elements": [int(e) for e in report.invalid_elements],
        "min_sigma": [float(s) for s in report.min_sigma],
        "manifest": _manifest("validate", inputs, config, started),
    }
    _write_json(args.out, payload)
    return 0 if report.ok else 3


# ---------------------------------------------------------------------------
# Parser


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads", type=int, default=None, metavar="N",
        help="cap the linear-algebra thread pools (default: METRA_THREADS "
             "or all cores); results are independent of this setting")

    parser = argparse.ArgumentParser(
        prog="metra",
        description="Metric-aware quality, measurement, and r-adaptation "
                    "of high-order simplicial meshes.")
    parser.add_argument("--version", action="version",
                        version=f"metra {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mesh", parents=[common],
                       help="generate a structured simplicial mesh")
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--degree", type=int, required=True)
    p.add_argument("--n", type=int, required=True,
                   help="grid intervals per axis")
    p.add_argument("--domain", default=None, metavar="LO:HI",
                   help="corners as 'x0,y0:x1,y1' (default unit box "
                        "centred at the origin)")
    p.add_argument("--out", required=True)
    p.add_argument("--export-vtk", default=None, metavar="PATH")
    p.set_defaults(func=cmd_gen_mesh)

    p = sub.add_parser("gen-metric", parents=[common],
                       help="write an analytic or sampled metric field")
    p.add_argument("--preset", required=True,
                   choices=("constant", "boundary-layer"))
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--h", type=float, default=None,
                   help="constant preset: target size along the last "
                        "axis, unit elsewhere")
    p.add_argument("--entries", default=None, metavar="M11,M12,...",
                   help="constant preset: full upper triangle, row-major")
    p.add_argument("--h-unit", type=float, default=0.25)
    p.add_argument("--h-min", type=float, default=0.01)
    p.add_argument("--growth", type=float, default=2.0)
    p.add_argument("--no-deform", dest="deform", action="store_false")
    p.add_argument("--cos-coeff", type=float, default=-1.0)
    p.add_argument("--background", default=None, metavar="MESH",
                   help="sample the preset at this mesh's nodes and save "
                        "a discrete field")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_metric)

    p = sub.add_parser("quality", parents=[common],
                       help="distortion/quality statistics of a mesh")
    p.add_argument("mesh")
    p.add_argument("metric")
    p.add_argument("--objective", choices=sorted(dt.OBJECTIVE_KINDS),
                   default="size-shape")
    p.add_argument("--n-1d", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("measure", parents=[common],
                       help="Riemannian entity measures and histograms")
    p.add_argument("mesh")
    p.add_argument("metric")
    p.add_argument("--n-1d", type=int, default=None)
    p.add_argument("--bins", type=int, default=ms.DEFAULT_BINS)
    p.add_argument("--histogram-csv", default=None, metavar="PREFIX",
                   help="also write PREFIX_dim<k>.csv per entity "
                        "dimension")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("optimize", parents=[common],
                       help="minimize mesh distortion by node relocation")
    p.add_argument("mesh")
    p.add_argument("metric")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, metavar="CSV")
    p.add_argument("--report", default=None, metavar="JSON")
    p.add_argument("--rms-tol", type=float, default=1e-4)
    p.add_argument("--step-tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--pcg-iters", type=int, default=200)
    p.add_argument("--pcg-tol", type=float, default=1e-2)
    p.add_argument("--objective", choices=sorted(dt.OBJECTIVE_KINDS),
                   default="size-shape")
    p.add_argument("--n-1d", type=int, default=None)
    p.add_argument("--continuation", default=None, metavar="T1,T2,...",
                   help="optimize against metric powers in this order "
                        "(must end at 1.0)")
    p.add_argument("--export-vtk", default=None, metavar="PATH")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("error", parents=[common],
                       help="interpolation/approximation error for an "
                            "analytic target function")
    p.add_argument("mesh")
    p.add_argument("--function", required=True,
                   choices=("arctan2d", "arctan3d"))
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--n-1d", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_error)

    p = sub.add_parser("validate", parents=[common],
                       help="check element validity by dense sampling")
    p.add_argument("mesh")
    p.add_argument("--metric", default=None)
    p.add_argument("--degree-sampling", type=int, default=None,
                   metavar="ORDER",
                   help="lattice order for sample points (default: three "
                        "times the mesh degree)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    return parser


def _resolve_threads(args):
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("METRA_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigurationError(
                    f"METRA_THREADS must be an integer, got {env!r}"
                ) from exc
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise ConfigurationError("--threads must be at least 1")
    return value


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=_resolve_threads(args)):
            return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"metra: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidMeshError, MeshIntegrityError) as exc:
        print(f"metra: invalid mesh: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"metra: solver failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
