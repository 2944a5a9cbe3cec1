"""Command-line front end: ``rcpenum {solve,decompose,approx,bench}``.

Exit codes: 0 success, 1 bad input, 2 a benchmark expectation failed,
3 the problem (or its relaxation) is infeasible.
"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import bench
from .approximation import ApproxSpec, ApproximationError, parabola_pieces
from .decomposition import DecompositionError, build_rcp
from .enumeration import Config, solve
from .problem_io import SchemaError, ValidationError, emit_problem, parse_problem
from .nlp import FactorableNlp, polish_nlp
from .univariate import fig1_sinusoid, ufunc_from_dict

EXIT_OK, EXIT_INPUT, EXIT_ASSERT, EXIT_INFEASIBLE = 0, 1, 2, 3


def _common(sp: argparse.ArgumentParser):
    sp.add_argument("--seed", type=int, default=0, help="RNG seed for sampling (default 0)")
    sp.add_argument("--eps", type=float, default=1e-3, help="optimality gap for early termination")
    sp.add_argument("--eps-g", type=float, default=1e-6, help="constraint feasibility tolerance")
    sp.add_argument("--eps-x", type=float, default=1e-4, help="domain-reduction convergence tolerance")
    sp.add_argument("--max-nodes", type=int, default=100, help="node cap for the bound-fathoming search")
    sp.add_argument("--samples", type=int, default=None, help="random samples for local-search starts (default 10^6, bench 10^4)")
    sp.add_argument("--pieces", type=int, default=None, help="pieces per approximated function")
    sp.add_argument("--rho", type=int, choices=(-1, 1), default=-1, help="-1 outer (lower bound), +1 inner")
    sp.add_argument("--trace", action="store_true", help="print the enumeration tree to stderr")


def _config(args, samples: int = 10**6, **kw) -> Config:
    return Config(
        eps=args.eps, eps_g=args.eps_g, eps_x=args.eps_x, M=args.max_nodes,
        U=samples if args.samples is None else args.samples,
        seed=args.seed, trace=args.trace, **kw,
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcpenum", description="Reverse-convex global optimization by active-set enumeration.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve an RCP or factorable NLP problem file")
    sp.add_argument("file")
    sp.add_argument("--all-minima", action="store_true", help="enumerate fully and report every minimizer")
    sp.add_argument("--json", action="store_true", help="print the report as JSON")
    sp.add_argument("--tree-csv", help="write the enumeration tree CSV here")
    _common(sp)

    sp = sub.add_parser("decompose", help="compile a factorable NLP file into an RCP file")
    sp.add_argument("file")
    sp.add_argument("-o", "--output", help="output path (default stdout)")
    sp.add_argument("--map", help="write the variable map JSON here")
    _common(sp)

    sp = sub.add_parser("approx", help="piecewise-concave approximation of a univariate function")
    sp.add_argument("spec", help='"fig1", a JSON file, or inline JSON with fn, kappa, lo, hi')
    sp.add_argument("--grid", type=int, default=None, help="grid points for --plot-data (default: breakpoints)")
    sp.add_argument("--plot-data", help="write the x,phi,p_minus,p_plus CSV here")
    _common(sp)

    sp = sub.add_parser("bench", help="run benchmark cases")
    sp.add_argument("case", choices=(*bench.CASE_IDS, "all"))
    sp.add_argument("--no-check", action="store_true", help="report expectations without failing")
    _common(sp)
    return ap


def _load_approx_spec(text: str) -> dict:
    if text == "fig1":
        return {"fn": fig1_sinusoid(), "kappa": 70.0, "lo": 0.0, "hi": 10.0}
    raw = Path(text).read_text() if Path(text).is_file() else text
    d = json.loads(raw)
    return {"fn": ufunc_from_dict(d["fn"]), "kappa": float(d["kappa"]), "lo": float(d["lo"]), "hi": float(d["hi"])}


def cmd_solve(args) -> int:
    prob = parse_problem(args.file)
    cfg = _config(args, all_minima=args.all_minima)
    nlp = None
    if isinstance(prob, FactorableNlp):
        nlp = prob
        prob, dmap = build_rcp(nlp, n_pieces=args.pieces or 10, rho=args.rho)
    rep = solve(prob, cfg)
    if args.trace:
        for line in rep.trace:
            print(line, file=sys.stderr)
    if args.tree_csv:
        Path(args.tree_csv).write_text(bench.emit_plot_data("enum_tree", {"report": rep, "width": prob.n_g}))
    out = rep.to_dict()
    if nlp is not None and rep.x is not None:
        y = dmap.project(rep.x)
        y_pol, f_pol = polish_nlp(nlp, y)
        out["y"] = [float(v) for v in y]
        out["polished"] = {"y": [float(v) for v in y_pol], "cost": f_pol}
    if args.json:
        print(json.dumps(out, indent=2))
    else:
        print(f"status      {rep.status}")
        print(f"termination {rep.criterion}")
        print(f"cost        {rep.cost:.10g}")
        if rep.x is not None:
            print("x*          " + " ".join(f"{v:.6g}" for v in rep.x))
        if "y" in out:
            print("y           " + " ".join(f"{v:.6g}" for v in out["y"]))
            print(f"polished    {out['polished']['cost']:.10g}")
        print(f"Convex {rep.counters['convex']}  LP {rep.lp_label}  Local {rep.counters['local']}  nodes {rep.nodes}")
    return EXIT_INFEASIBLE if rep.status == "infeasible" else EXIT_OK


def cmd_decompose(args) -> int:
    nlp = parse_problem(args.file)
    if not isinstance(nlp, FactorableNlp):
        raise DecompositionError("decompose expects an NLP file")
    p, dmap = build_rcp(nlp, n_pieces=args.pieces or 10, rho=args.rho)
    text = emit_problem(p)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.map:
        Path(args.map).write_text(json.dumps(dmap.to_dict(), indent=2) + "\n")
    print(f"{p.n} variables, {p.n_g} constraints, {p.n_C} equalities", file=sys.stderr)
    return EXIT_OK


def cmd_approx(args) -> int:
    spec = _load_approx_spec(args.spec)
    n_p = args.pieces or 20
    a = ApproxSpec(spec["kappa"], n_p, spec["lo"], spec["hi"], rho=args.rho)
    pw = parabola_pieces(spec["fn"], a)
    rows = []
    xs = np.linspace(a.lo, a.hi, 10_001)
    err = pw(xs) - spec["fn"](xs)
    for k in range(pw.n_pieces):
        sel = (xs >= pw.breaks[k]) & (xs <= pw.breaks[k + 1])
        rows.append((k, pw.beta2[k], pw.beta1[k], pw.beta0[k], pw.breaks[k], pw.breaks[k + 1], err[sel].min(), err[sel].max()))
    sys.stdout.write(bench._csv(["piece", "beta2", "beta1", "beta0", "x_lo", "x_hi", "err_min", "err_max"], rows))
    if args.plot_data:
        data = bench.emit_plot_data("approx_pieces", {**spec, "n_p": n_p, "grid_n": args.grid})
        Path(args.plot_data).write_text(data)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args, samples=bench.BENCH_SAMPLES)
    cases = bench.default_suite() if args.case == "all" else [c for c in bench.default_suite() if c.id == args.case]
    if args.pieces is not None and args.case in ("ex5", "ex6"):
        extra = {"rho": args.rho} if args.case == "ex5" else {}
        cases = [bench.default_case(args.case, n_p=args.pieces, **extra)]
    failed = []
    for case in cases:
        res = bench.run_bench(case, cfg, check=False)
        print(f"== {case.label}  ({res.elapsed:.2f} s)")
        print(bench.format_rows(res.rows))
        for c in res.checks:
            e = c.expectation
            print(f"   [{'pass' if c.ok else 'FAIL'}] {e.name} [{e.provenance}]: {c.value!r} vs {e.kind} {e.target!r} tol {e.tol:g}")
            if not c.ok:
                failed.append(f"{case.label}: {e.name}")
    if failed and not args.no_check:
        print("failed expectations:\n  " + "\n  ".join(failed), file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=6, suppress=True)
    handler = {"solve": cmd_solve, "decompose": cmd_decompose, "approx": cmd_approx, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except bench.AssertionFailure as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (SchemaError, ValidationError, DecompositionError, ApproximationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
