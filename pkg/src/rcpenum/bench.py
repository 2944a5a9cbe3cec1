"""Benchmark harness: the five worked problems, reference oracles and plot data."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import csv
import io
import itertools
import math
import time
from typing import Any

import numpy as np
from scipy.optimize import minimize

from .approximation import ApproxSpec, parabola_pieces
from .cases import (
    BILINEAR_COST,
    EX2_COSTS,
    EX4_A,
    EX4_B,
    EX4_CY,
    bilinear_nlp,
    bilinear_rcp,
    ex2_problem,
    ex3_problem,
    ex3_solution,
    ex3_weights,
    ex4_objective,
    ex4_problem,
    sinaff_nlp,
    sinaff_rcp,
)
from .convex import solve_reverse_max
from .enumeration import Config, SolveReport, TreeRecord, solve
from .nlp import polish_nlp
from .problem import RcpProblem
from .univariate import UFunc

CASE_IDS = ("ex2", "ex3", "ex4", "ex5", "ex6")


class AssertionFailure(AssertionError):
    """A benchmark expectation was not met; the message names it."""


@dataclass(frozen=True)
class Expectation:
    """A checked quantity.

    kind "close": |value - target| <= tol; "le": value <= target + tol;
    "ge": value >= target - tol; "true": value is truthy.
    """

    name: str
    kind: str
    target: Any = None
    tol: float = 0.0
    provenance: str = "DERIVED"

    def holds(self, value) -> bool:
        if self.kind == "close":
            return abs(value - self.target) <= self.tol
        if self.kind == "le":
            return value <= self.target + self.tol
        if self.kind == "ge":
            return value >= self.target - self.tol
        if self.kind == "true":
            return bool(value)
        raise ValueError(f"unknown expectation kind {self.kind!r}")


@dataclass(frozen=True)
class BenchCase:
    id: str
    params: dict = field(default_factory=dict)
    expected: tuple[Expectation, ...] = ()

    def __post_init__(self):
        if self.id not in CASE_IDS:
            raise ValueError(f"unknown case {self.id!r}; choose from {CASE_IDS}")

    @property
    def label(self) -> str:
        return self.id + "(" + ", ".join(f"{k}={v}" for k, v in self.params.items()) + ")"


@dataclass
class Check:
    expectation: Expectation
    value: Any
    ok: bool


@dataclass
class BenchResult:
    case: BenchCase
    rows: list[dict]
    checks: list[Check]
    reports: list[SolveReport]
    elapsed: float

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


# ---------------------------------------------------------------------------
# reference oracles


def reverse_oracle(p: RcpProblem, eps_g: float = 1e-6) -> tuple[float, np.ndarray | None, tuple[int, ...] | None]:
    """Best feasible reverse-problem optimum over every (n - n_C)-subset of constraints."""
    best = (math.inf, None, None)
    for A in itertools.combinations(range(p.n_g), p.n - p.n_C):
        r = solve_reverse_max(p, A)
        if r.ok and p.max_violation(r.x) <= eps_g and r.obj < best[0]:
            best = (float(r.obj), r.x, A)
    return best


def active_mask(p: RcpProblem, x, tol: float = 1e-7) -> int:
    g = p.g_all(x)
    mask = 0
    for i in np.flatnonzero(np.abs(g) <= tol * (1.0 + np.abs(g).max())):
        mask |= 1 << int(i)
    return mask


def ex4_multistart(alpha: float, n_starts: int = 200, seed: int = 0) -> float:
    """Best of seeded SLSQP local minima of the ten-variable concave QP."""
    rng = np.random.default_rng(seed)
    best = math.inf
    cons = [{"type": "ineq", "fun": lambda y: EX4_B - EX4_A @ y, "jac": lambda y: -EX4_A}]
    for _ in range(n_starts):
        r = minimize(
            lambda y: ex4_objective(y, alpha), rng.uniform(0.0, 1.0, 10),
            jac=lambda y: -100.0 * y + alpha * EX4_CY, method="SLSQP", bounds=[(0.0, 1.0)] * 10,
            constraints=cons, options={"ftol": 1e-12, "maxiter": 500},
        )
        y = r.x
        if np.all(EX4_A @ y - EX4_B <= 1e-8) and np.all(y >= -1e-9) and np.all(y <= 1 + 1e-9):
            best = min(best, ex4_objective(y, alpha))
    return best


# ---------------------------------------------------------------------------
# default cases with expected values

_TABLE4 = {10: -1.2431, 50: -1.0888}
_TABLE5 = {3: -7.7443, 5: -5.3914}
EX6_UPPER = -3.2205
# feasibility tolerance for the sinusoid-product case, raised as documented for it
EX6_EPS_G = 5e-4
# sampling budget for benchmark runs
BENCH_SAMPLES = 10**4


def default_case(case_id: str, **params) -> BenchCase:
    """A case with the expectations used by the acceptance suite."""
    ex: list[Expectation] = []
    if case_id == "ex2":
        params.setdefault("c", EX2_COSTS[0])
        ex.append(Expectation("cost equals the reverse-problem oracle", "close", None, 1e-6, "DERIVED"))
    elif case_id == "ex3":
        params.setdefault("n", 5)
        params.setdefault("seed", 0)
        ex.append(Expectation("max |x - analytic|", "le", 0.0, 1e-5, "PAPER"))
        ex.append(Expectation("runtime seconds", "le", 60.0, 0.0, "PAPER"))
    elif case_id == "ex4":
        params.setdefault("alpha", 1.0)
        ex.append(Expectation("cost <= multistart best", "le", None, 1e-6, "DERIVED"))
    elif case_id == "ex5":
        params.setdefault("n_p", 10)
        params.setdefault("rho", -1)
        if params["rho"] < 0:
            if params["n_p"] in _TABLE4:
                ex.append(Expectation("lower-bound cost", "close", _TABLE4[params["n_p"]], 1e-2, "PAPER"))
            ex.append(Expectation("lower-bound cost <= optimum", "le", BILINEAR_COST, 1e-6, "DERIVED"))
        else:
            ex.append(Expectation("upper-bound cost >= optimum", "ge", BILINEAR_COST, 1e-6, "DERIVED"))
            ex.append(Expectation("polished upper bound", "close", BILINEAR_COST, 1e-3, "PAPER"))
    elif case_id == "ex6":
        params.setdefault("n_p", 5)
        if params["n_p"] in _TABLE5:
            ex.append(Expectation("lower-bound cost", "close", _TABLE5[params["n_p"]], 5e-2, "PAPER"))
        if params["n_p"] == 5:
            ex.append(Expectation("+-(2, -5) in the minima", "true", None, 0.0, "PAPER"))
        ex.append(Expectation("polished upper bound", "close", EX6_UPPER, 1e-3, "PAPER"))
    return BenchCase(case_id, params, tuple(ex))


def default_suite() -> list[BenchCase]:
    cases = [default_case("ex2", c=c) for c in EX2_COSTS]
    cases += [default_case("ex3", n=n, seed=0) for n in (5, 20)]
    cases += [default_case("ex4", alpha=a) for a in (-10.0, 0.0, 1.0, 10.0)]
    cases += [default_case("ex5", n_p=n_p, rho=rho) for n_p in (10, 50) for rho in (-1, 1)]
    cases += [default_case("ex6", n_p=n_p) for n_p in (3, 5)]
    return cases


# ---------------------------------------------------------------------------
# running


def _fmt_x(x) -> str:
    return "(" + ", ".join(f"{v:.4f}" for v in np.asarray(x, dtype=float)) + ")"


def _row(params: dict, r: SolveReport, x, cost, **extra) -> dict:
    row = dict(params)
    row.update({
        "Convex": r.counters["convex"],
        "LP": r.lp_label,
        "Local": r.counters["local"],
        "Termination": r.criterion or r.status,
        "x*": _fmt_x(x) if x is not None else "-",
        "cost": cost,
    })
    row.update(extra)
    return row


def _has_point(points, target, tol=1e-3) -> bool:
    return any(np.max(np.abs(np.asarray(p) - target)) <= tol for p in points)


def run_bench(case: BenchCase, cfg: Config | None = None, check: bool = True) -> BenchResult:
    """Run one case, return table rows and evaluated expectations.

    With check=True the first failing expectation raises AssertionFailure.
    """
    cfg = cfg or Config(U=BENCH_SAMPLES)
    t0 = time.perf_counter()
    pr = case.params
    values: dict[str, Any] = {}
    targets: dict[str, Any] = {}
    rows: list[dict] = []
    reports: list[SolveReport] = []

    if case.id == "ex2":
        p = ex2_problem(pr["c"])
        r = solve(p, cfg)
        oracle = reverse_oracle(p, cfg.eps_g)[0]
        values["cost equals the reverse-problem oracle"] = r.cost
        targets["cost equals the reverse-problem oracle"] = oracle
        rows.append(_row({"c1": pr["c"][0], "c2": pr["c"][1]}, r, r.x, r.cost, oracle=oracle))
        reports.append(r)
    elif case.id == "ex3":
        w = ex3_weights(pr["n"], pr["seed"])
        t = time.perf_counter()
        r = solve(ex3_problem(w), cfg)
        values["runtime seconds"] = time.perf_counter() - t
        err = math.inf if r.x is None else float(np.max(np.abs(r.x - ex3_solution(w))))
        values["max |x - analytic|"] = err
        rows.append(_row({"n": pr["n"]}, r, None, r.cost, error=err))
        reports.append(r)
    elif case.id == "ex4":
        r = solve(ex4_problem(pr["alpha"]), cfg)
        best = ex4_multistart(pr["alpha"], pr.get("n_starts", 200), pr.get("ms_seed", 0))
        values["cost <= multistart best"] = r.cost
        targets["cost <= multistart best"] = best
        rows.append(_row({"alpha": pr["alpha"]}, r, None, r.cost, multistart=best))
        reports.append(r)
    elif case.id == "ex5":
        p, m = bilinear_rcp(pr["n_p"], rho=pr["rho"])
        r = solve(p, cfg)
        y = None if r.x is None else m.project(r.x)
        label = f"{pr['n_p']}{'-' if pr['rho'] < 0 else '+'}"
        extra = {}
        if pr["rho"] < 0:
            values["lower-bound cost"] = r.cost
            values["lower-bound cost <= optimum"] = r.cost
        else:
            values["upper-bound cost >= optimum"] = r.cost
            polished = polish_nlp(bilinear_nlp(), y)[1] if y is not None else math.inf
            values["polished upper bound"] = polished
            extra["polished"] = polished
        rows.append(_row({"n_p": label}, r, y, r.cost, **extra))
        reports.append(r)
    elif case.id == "ex6":
        nlp = sinaff_nlp()
        p, m = sinaff_rcp(pr["n_p"])
        r = solve(p, replace(cfg, all_minima=True, eps_g=max(cfg.eps_g, EX6_EPS_G)))
        ys = [m.project(x) for x in r.minima]
        upper = min((polish_nlp(nlp, y)[1] for y in ys), default=math.inf)
        values["lower-bound cost"] = r.cost
        values["+-(2, -5) in the minima"] = (
            _has_point(ys, np.array([2.0, -5.0])) and _has_point(ys, np.array([-2.0, 5.0]))
        )
        values["polished upper bound"] = upper
        shown = ys[0] if ys else None
        rows.append(_row({"n_p": pr["n_p"]}, r, shown, r.cost, **{"Upper Bound": upper, "minima": len(ys)}))
        reports.append(r)

    checks = []
    for e in case.expected:
        if e.name not in values:
            continue
        e_eval = replace(e, target=targets[e.name]) if e.target is None and e.name in targets else e
        v = values[e.name]
        checks.append(Check(e_eval, v, e_eval.holds(v)))
    res = BenchResult(case, rows, checks, reports, time.perf_counter() - t0)
    if check:
        for c in checks:
            if not c.ok:
                raise AssertionFailure(
                    f"{case.label}: {c.expectation.name} [{c.expectation.provenance}] "
                    f"got {c.value!r}, expected {c.expectation.kind} {c.expectation.target!r} "
                    f"(tol {c.expectation.tol:g})"
                )
    return res


def format_rows(rows: list[dict]) -> str:
    """Plain-text table; columns in first-seen order across rows."""
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]

    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[k]) for b in body)) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# plot data


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def emit_plot_data(kind: str, args: dict) -> str:
    """CSV dumps for plotting.

    approx_pieces: header ``x,phi,p_minus,p_plus``.  ``args`` holds ``fn`` (a
    UFunc), ``kappa``, ``lo``, ``hi``, ``n_p`` and optionally ``grid_n``.
    Without ``grid_n`` the rows are the n_p + 1 piece breakpoints.

    enum_tree: header ``mask,depth,action``.  ``args`` holds ``report`` (a
    SolveReport) or ``tree`` (a list of TreeRecord) plus ``width`` (the number
    of constraints); masks are written as 0/1 strings, constraint 0 first.
    """
    if kind == "approx_pieces":
        fn: UFunc = args["fn"]
        n_p = int(args["n_p"])
        lo, hi = float(args["lo"]), float(args["hi"])
        under = parabola_pieces(fn, ApproxSpec(args["kappa"], n_p, lo, hi, rho=-1))
        over = parabola_pieces(fn, ApproxSpec(args["kappa"], n_p, lo, hi, rho=+1))
        grid_n = args.get("grid_n")
        x = np.linspace(lo, hi, n_p + 1) if grid_n is None else np.linspace(lo, hi, int(grid_n))
        return _csv(["x", "phi", "p_minus", "p_plus"], zip(x, fn(x), under(x), over(x)))
    if kind == "enum_tree":
        tree: list[TreeRecord] = args["report"].tree if "report" in args else args["tree"]
        width = int(args["width"])
        rows = (("".join("1" if (t.mask >> i) & 1 else "0" for i in range(width)), t.depth, t.action) for t in tree)
        return _csv(["mask", "depth", "action"], rows)
    raise ValueError(f"unknown plot kind {kind!r}")
