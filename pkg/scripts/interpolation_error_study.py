"""Interpolation and approximation error under metric adaptation.

Measures the nodal-interpolation error e_I and the L2-projection error
e_A of a steep arctan layer function, before and after adapting the mesh
to a boundary-layer metric aligned with the layer.  Optionally runs a
uniform-refinement sweep on unadapted meshes to show the expected
O(h^(p+1)) decay of both errors.

Typical run (about half a minute):

    python3 scripts/interpolation_error_study.py --out results/errors

Add a convergence sweep:

    python3 scripts/interpolation_error_study.py --sweep 4,8,16,32 \
        --gamma 1 --skip-adaptation --out results/orders
"""

import argparse
import json
import math
import pathlib
import time

from metra import error_metrics as em
from metra import io as mio
from metra import mesh as mh
from metra import metric as mt
from metra import optimize as op


def errors(mesh, u):
    return {"e_I": em.interpolation_error(mesh, u).total,
            "e_A": em.approximation_error(mesh, u).total}


def adaptation_case(args, out_dir):
    initial = mh.structured_mesh(2, args.degree, args.n)
    background = mh.structured_mesh(2, 1, args.background_n)
    preset = mt.BoundaryLayer2D(cos_coeff=1.0)
    field = mt.DiscreteMetricField(background,
                                   preset.eval_many(background.nodes))
    u = em.Arctan2D(gamma=args.gamma)

    before = errors(initial, u)
    started = time.perf_counter()
    config = op.OptimizerConfig(max_newton_iters=args.max_iters)
    exponents = tuple(float(t) for t in args.stages.split(","))
    result = op.optimize_continuation(initial, field, config,
                                      exponents=exponents)
    elapsed = time.perf_counter() - started
    after = errors(result.mesh, u)

    mio.save_mesh(initial, out_dir / "initial.json")
    mio.save_mesh(result.mesh, out_dir / "adapted.json")

    print(f"[adapt] gamma={args.gamma:g}, p={args.degree}, "
          f"n={args.n}, {elapsed:.0f}s")
    print(f"[adapt] e_I {before['e_I']:.5f} -> {after['e_I']:.5f} "
          f"({before['e_I'] / after['e_I']:.2f}x)")
    print(f"[adapt] e_A {before['e_A']:.5f} -> {after['e_A']:.5f} "
          f"({before['e_A'] / after['e_A']:.2f}x)")
    return {"gamma": args.gamma, "degree": args.degree, "n": args.n,
            "seconds": round(elapsed, 2), "before": before,
            "after": after}


def refinement_sweep(args):
    u = em.Arctan2D(gamma=args.gamma)
    rows = []
    for n in (int(v) for v in args.sweep.split(",")):
        mesh = mh.structured_mesh(2, args.degree, n)
        row = {"n": n, "h": 1.0 / n, **errors(mesh, u)}
        if rows:
            ratio = n / rows[-1]["n"]
            row["order_I"] = math.log(rows[-1]["e_I"] / row["e_I"],
                                      ratio)
            row["order_A"] = math.log(rows[-1]["e_A"] / row["e_A"],
                                      ratio)
        rows.append(row)
    print(f"[sweep] p={args.degree}, gamma={args.gamma:g}, expected "
          f"order {args.degree + 1}")
    for row in rows:
        order = (f"orders {row['order_I']:.2f}/{row['order_A']:.2f}"
                 if "order_I" in row else "")
        print(f"[sweep]   n={row['n']:3d}  e_I {row['e_I']:.3e}  "
              f"e_A {row['e_A']:.3e}  {order}")
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Interpolation/approximation error study")
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--degree", type=int, default=2)
    parser.add_argument("--gamma", type=float, default=20.0,
                        help="layer steepness of the arctan function")
    parser.add_argument("--background-n", type=int, default=16,
                        help="background resolution of the sampled metric")
    parser.add_argument("--stages", default="0.5,1.0")
    parser.add_argument("--max-iters", type=int, default=80)
    parser.add_argument("--sweep", default=None,
                        help="comma list of n for a refinement sweep")
    parser.add_argument("--skip-adaptation", action="store_true")
    parser.add_argument("--out", default="results/interpolation_error")
    args = parser.parse_args(argv)

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    summary = {}
    if not args.skip_adaptation:
        summary["adaptation"] = adaptation_case(args, out_dir)
    if args.sweep:
        summary["sweep"] = refinement_sweep(args)

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"wrote {out_dir}/summary.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
