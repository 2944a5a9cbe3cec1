"""Acceptance checks; each prints one PASS/FAIL line at its stated tolerance.

Run standalone with ``python tests/test_acceptance.py`` or through pytest,
which repeats the lines in the terminal summary.
"""
from functools import lru_cache
import itertools
import time

import numpy as np

from rcpenum.approximation import ApproxSpec, parabola_pieces
from rcpenum.bench import EX6_EPS_G, ex4_multistart, reverse_oracle
from rcpenum.convex import solve_reverse_max
from rcpenum.cases import (
    BILINEAR_COST,
    EX2_COSTS,
    bilinear_nlp,
    bilinear_rcp,
    ex2_problem,
    ex3_problem,
    ex3_solution,
    ex3_weights,
    ex4_problem,
    sinaff_nlp,
    sinaff_rcp,
)
from rcpenum.decomposition import decompose_factorable
from rcpenum.enumeration import Config, solve
from rcpenum.nlp import Factor, FExpr, Product, polish_nlp
from rcpenum.univariate import Exp, Lin, Sin, Square, fig1_sinusoid

from support import record

CFG = Config(U=10**4)


def _mask(indices):
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def optimal_sets(p, x, tol=1e-7):
    """Full-size subsets of the active constraints at x whose reverse problem returns x.

    A degenerate minimum has several; soundness asks that at least one survives.
    """
    g = p.g_all(x)
    act = np.flatnonzero(np.abs(g) <= tol * (1.0 + np.abs(g).max()))
    out = []
    for sub in itertools.combinations(act, p.n - p.n_C):
        st = solve_reverse_max(p, sub)
        if st.ok and abs(st.obj - float(p.c @ x)) <= 1e-6 * (1.0 + abs(st.obj)):
            out.append(_mask(sub))
    return out


# ---------------------------------------------------------------- cached runs shared with criterion 7


@lru_cache(maxsize=None)
def run_ex3(n):
    w = ex3_weights(n, seed=0)
    p = ex3_problem(w)
    t0 = time.perf_counter()
    r = solve(p, CFG)
    k = int(np.argmax(w))
    opt = _mask([0] + [p.bound_index(j, "lower") for j in range(n) if j != k])
    return p, r, time.perf_counter() - t0, ex3_solution(w), [[opt]]


@lru_cache(maxsize=None)
def run_ex2(c):
    p = ex2_problem(c)
    r = solve(p, CFG)
    cost, x, A = reverse_oracle(p)
    return p, r, cost, [[_mask(A)]]


@lru_cache(maxsize=None)
def run_ex5(n_p, rho):
    p, m = bilinear_rcp(n_p, rho=rho)
    r = solve(p, CFG)
    return p, m, r, [optimal_sets(p, x) for x in r.minima]


@lru_cache(maxsize=None)
def run_ex6(n_p):
    p, m = sinaff_rcp(n_p)
    cfg = Config(U=10**4, all_minima=True, eps_g=EX6_EPS_G)
    r = solve(p, cfg)
    return p, m, r, [optimal_sets(p, x) for x in r.minima], cfg


# ---------------------------------------------------------------- criteria


def test_criterion_1_ellipse_exactness():
    errs, times = [], []
    for n in (5, 20):
        p, r, dt, x_exact, _ = run_ex3(n)
        errs.append(np.inf if r.x is None else float(np.max(np.abs(r.x - x_exact))))
        times.append(dt)
    ok = max(errs) <= 1e-5 and max(times) < 60.0
    assert record(1, ok, f"max component error {max(errs):.2e} (tol 1e-5), slowest run {max(times):.2f} s (< 60 s)")


def test_criterion_2_oracle_equivalence():
    gaps = []
    for c in EX2_COSTS:
        p, r, cost, _ = run_ex2(c)
        gaps.append(abs(r.cost - cost))
    ok = max(gaps) <= 1e-6
    assert record(2, ok, f"max |cost - oracle| over 10 cost vectors {max(gaps):.2e} (tol 1e-6)")


def test_criterion_3_bilinear_sandwich():
    table = {10: -1.2431, 50: -1.0888}
    notes, ok = [], True
    for n_p in (10, 20, 50):
        _, _, lo_run, _ = run_ex5(n_p, -1)
        _, m, up_run, _ = run_ex5(n_p, 1)
        lo, up = lo_run.cost, up_run.cost
        ok &= lo <= BILINEAR_COST + 1e-6 and up >= BILINEAR_COST - 1e-6
        if n_p in table:
            ok &= abs(lo - table[n_p]) <= 1e-2
        pol = polish_nlp(bilinear_nlp(), m.project(up_run.x))[1]
        ok &= abs(pol - BILINEAR_COST) <= 1e-3
        notes.append(f"n_p={n_p}: [{lo:.4f}, {up:.4f}] polished {pol:.5f}")
    assert record(3, ok, "; ".join(notes))


def test_criterion_4_sinusoid_product():
    lows = {}
    for n_p in (3, 5, 10):
        lows[n_p] = run_ex6(n_p)[2].cost
    p, m, r, _, _ = run_ex6(5)
    ys = [m.project(x) for x in r.minima]
    both = all(any(np.allclose(y, t, atol=1e-4) for y in ys) for t in ([2.0, -5.0], [-2.0, 5.0]))
    upper = min(polish_nlp(sinaff_nlp(), y)[1] for y in ys)
    cost_ok = abs(r.cost - (-5.3914)) <= 5e-2
    mono = lows[3] <= lows[5] <= lows[10]
    ok = both and cost_ok and abs(upper - (-3.2205)) <= 1e-3 and mono
    detail = (
        f"minima +-(2,-5) {'found' if both else 'missing'}; n_p=5 cost {r.cost:.4f} vs -5.3914 (tol 5e-2); "
        f"polished {upper:.4f} vs -3.2205 (tol 1e-3); lower bounds "
        + ", ".join(f"{k}:{v:.4f}" for k, v in lows.items())
        + (" monotone" if mono else " NOT monotone")
    )
    assert record(4, ok, detail)


def test_criterion_5_approximation_certificate():
    fn, kappa, lo, hi = fig1_sinusoid(), 70.0, 0.0, 10.0
    x = np.linspace(lo, hi, 10_000)
    phi = fn(x)
    t0 = time.perf_counter()
    errs, viol, within = [], 0, True
    for n_p in (20, 80, 320):
        under = parabola_pieces(fn, ApproxSpec(kappa, n_p, lo, hi, rho=-1))(x)
        over = parabola_pieces(fn, ApproxSpec(kappa, n_p, lo, hi, rho=+1))(x)
        viol += int(np.sum(under > phi) + np.sum(over < phi))
        err = max(float(np.max(phi - under)), float(np.max(over - phi)))
        within &= err <= 5 * kappa * (hi - lo) / n_p
        errs.append(err)
    dt = time.perf_counter() - t0
    decreasing = errs[0] > errs[1] > errs[2]
    ok = viol == 0 and within and decreasing and dt < 5.0
    assert record(5, ok, f"errors {', '.join(f'{e:.3e}' for e in errs)}; sign violations {viol}; {dt:.2f} s")


def test_criterion_6_concave_quadratic():
    notes, ok = [], True
    for alpha in (1.0, -10.0, 0.0, 10.0):
        r = solve(ex4_problem(alpha), CFG)
        best = ex4_multistart(alpha)
        ok &= r.status == "optimal" and r.cost <= best + 1e-6
        notes.append(f"a={alpha:g}: {r.cost:.4f} ({r.criterion}) vs {best:.4f}")
    assert record(6, ok, "; ".join(notes))


def _check_run(p, r, opts, eps_g, eps):
    # opts holds, per reported minimum, its optimal active sets; one unspanned set must remain
    spans = any(sets == [] or all(any(f.bits & ~o == 0 for f in r.fathoming) for o in sets) for sets in opts)
    crit = True
    if r.criterion == "I":
        crit = p.max_violation(r.x_low) <= eps_g
    elif r.criterion == "II":
        crit = p.is_feasible(r.x_up, 1e-8) and float(p.c @ r.x_up - p.c @ r.x_low) <= eps
    return spans, crit


def test_criterion_7_fathoming_soundness():
    runs = []
    for n in (5, 20):
        p, r, _, _, opts = run_ex3(n)
        runs.append((p, r, opts, CFG))
    for c in EX2_COSTS:
        p, r, _, opts = run_ex2(c)
        runs.append((p, r, opts, CFG))
    for n_p in (10, 20, 50):
        for rho in (-1, 1):
            p, _, r, opts = run_ex5(n_p, rho)
            runs.append((p, r, opts, CFG))
    for n_p in (3, 5, 10):
        p, _, r, opts, cfg = run_ex6(n_p)
        runs.append((p, r, opts, cfg))
    spanned = bad_crit = 0
    for p, r, opts, cfg in runs:
        s, c = _check_run(p, r, opts, cfg.eps_g, cfg.eps)
        spanned += s
        bad_crit += not c
    ok = spanned == 0 and bad_crit == 0
    assert record(7, ok, f"{len(runs)} runs; optimal masks spanned {spanned}; inconsistent exits {bad_crit}")


def _product_sum(m, n_y):
    rng = np.random.default_rng(10 * m + n_y)
    fns = [Sin(), Exp(0.5, 0.0), Lin(), Square()]
    prods = [
        Product(1.0, tuple(Factor.of(fns[rng.integers(4)], j, n_y) for j in range(n_y)))
        for _ in range(m)
    ]
    return FExpr(tuple(prods))


def test_criterion_8_decomposition_counts():
    wrong = []
    for m in range(1, 5):
        for n_y in range(2, 6):
            fam = decompose_factorable(_product_sum(m, n_y), n_y)
            if len(fam.ineqs) != m * (4 * n_y - 3) or len(fam.eqs) != m:
                wrong.append((m, n_y))
    assert record(8, not wrong, f"16 (m, n_y) pairs, mismatches {wrong or 'none'}")


if __name__ == "__main__":
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            pass
