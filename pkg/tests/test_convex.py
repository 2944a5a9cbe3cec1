import itertools

import numpy as np
import pytest

from rcpenum.bench import reverse_oracle
from rcpenum.cases import (
    BILINEAR_SOLUTION,
    EX2_COSTS,
    bilinear_rcp,
    ex2_problem,
    ex3_problem,
    ex3_solution,
    ex3_weights,
    sinaff_nlp,
    sinaff_rcp,
)
from rcpenum.convex import (
    Polytope,
    farkas_check,
    kkt_residual,
    local_min_rcp,
    solve_lp,
    solve_reverse_max,
    solve_subset_min,
)
from rcpenum.enumeration import Config, build_relaxation, init_state, solve
from rcpenum.nlp import polish_nlp

from support import sinaff_lift


# ---------------------------------------------------------------- LP


def test_lp_on_triangle():
    poly = Polytope(np.array([[1.0, 1.0]]), np.array([1.0]), np.zeros(2), np.ones(2))
    st = solve_lp([1.0, 0.0], poly)
    assert st.ok and st.obj == pytest.approx(0.0, abs=1e-12) and st.x[0] == pytest.approx(0.0, abs=1e-12)
    assert st.primal_res <= 1e-8 * (1 + 1.0)


def test_lp_infeasible_with_certificate():
    poly = Polytope(np.array([[1.0]]), np.array([-1.0]), np.array([0.0]), np.array([5.0]))
    st = solve_lp([1.0], poly)
    assert st.tag == "infeasible" and st.infeas > 0
    stat, val = farkas_check(st.certificate, poly)
    assert stat <= 1e-9 and val < 0


def test_lp_infeasible_through_equalities():
    poly = Polytope.box(np.zeros(2), np.ones(2))
    st = solve_lp([0.0, 1.0], poly, C=np.array([[1.0, 1.0]]), d=np.array([3.0]))
    assert st.tag == "infeasible"
    stat, val = farkas_check(st.certificate, poly, np.array([[1.0, 1.0]]), np.array([3.0]))
    assert stat <= 1e-9 and val < 0


def _vertex_min(obj, poly):
    n = len(obj)
    A = np.vstack([poly.A, -np.eye(n), np.eye(n)])
    b = np.r_[poly.b, -poly.lo, poly.hi]
    best = np.inf
    for rows in itertools.combinations(range(len(b)), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ v <= b + 1e-9):
            best = min(best, float(obj @ v))
    return best


def test_relaxation_lp_matches_vertex_enumeration():
    st = init_state(ex2_problem(), Config())
    poly = build_relaxation(st)
    assert len(poly.b) <= 20
    for obj in ([0.0, 1.0], [0.0, -1.0], [1.0, 0.3]):
        obj = np.array(obj)
        res = solve_lp(obj, poly)
        assert res.ok and res.obj == pytest.approx(_vertex_min(obj, poly), abs=1e-9)


def test_lp_is_deterministic():
    st = init_state(ex2_problem(), Config())
    poly = build_relaxation(st)
    a, b = solve_lp([0.3, -1.0], poly), solve_lp([0.3, -1.0], poly)
    assert a.tag == b.tag and np.array_equal(a.x, b.x)


# ---------------------------------------------------------------- subset minimization


def test_empty_subset_is_the_lp():
    p = ex2_problem()
    poly = Polytope.box(p.lo, p.hi)
    a = solve_subset_min(p, [], poly)
    b = solve_lp(p.c, poly)
    assert a.obj == pytest.approx(b.obj, abs=1e-12)


def test_reversed_circle_is_feasible():
    p = ex2_problem()
    st = solve_subset_min(p, [3], Polytope.box(p.lo, p.hi))
    assert st.ok
    assert p.g_all(st.x)[3] >= -1e-8
    assert 3 in st.iv


def test_contradictory_bounds_are_infeasible():
    p = ex2_problem()
    lower0, upper0 = p.bound_index(0, "lower"), p.bound_index(0, "upper")
    st = solve_subset_min(p, [lower0, upper0], Polytope.box(p.lo, p.hi))
    assert st.tag == "infeasible" and st.infeas > 1e-7


@pytest.mark.parametrize("c", EX2_COSTS)
def test_subsets_of_optimal_active_set_bound_the_optimum(c):
    p = ex2_problem(c)
    cost, x, A = reverse_oracle(p)
    poly = Polytope.box(p.lo, p.hi)
    for r in range(len(A) + 1):
        for sub in itertools.combinations(A, r):
            st = solve_subset_min(p, sub, poly)
            assert st.tag != "infeasible"
            if st.ok:
                assert st.obj <= cost + 1e-8


# ---------------------------------------------------------------- reverse maximization


def test_reverse_max_closed_form():
    w = ex3_weights(6, seed=3)
    p = ex3_problem(w)
    for k in range(6):
        active = [0] + [p.bound_index(j, "lower") for j in range(6) if j != k]
        st = solve_reverse_max(p, active)
        expect = np.zeros(6)
        expect[k] = np.sqrt(1.0 / w[k])
        assert st.ok
        np.testing.assert_allclose(st.x, expect, atol=1e-7)


def test_reverse_max_pinned_corner():
    p = ex2_problem((0.6, -0.6))
    st = solve_reverse_max(p, [p.bound_index(0, "lower"), p.bound_index(1, "lower")])
    assert st.ok and st.obj == pytest.approx(float(p.c @ p.lo), abs=1e-8)


def test_reverse_max_recovers_fine_bilinear_optimum():
    p, m = bilinear_rcp(200)
    r = solve(p, Config(U=10**4))
    active = np.flatnonzero(p.g_all(r.x) >= -1e-7)
    assert len(active) == p.n - p.n_C
    st = solve_reverse_max(p, active)
    np.testing.assert_allclose(m.project(st.x), BILINEAR_SOLUTION, atol=1e-3)


def _regular(p, x_star, act):
    assert len(act) == p.n - p.n_C
    st = solve_reverse_max(p, act)
    assert st.ok
    np.testing.assert_allclose(st.x, x_star, atol=1e-6)


@pytest.mark.parametrize("c", EX2_COSTS[:4])
def test_regular_disconnected_region(c):
    p = ex2_problem(c)
    _, x, A = reverse_oracle(p)
    _regular(p, x, A)


def test_regular_ellipse():
    w = ex3_weights(5)
    p = ex3_problem(w)
    k = int(np.argmax(w))
    _regular(p, ex3_solution(w), [0] + [p.bound_index(j, "lower") for j in range(5) if j != k])


def test_regular_bilinear():
    p, _ = bilinear_rcp(6)
    cost, x, A = reverse_oracle(p)
    assert cost < np.inf
    _regular(p, x, A)


def test_reverse_max_is_deterministic():
    p = ex2_problem()
    a, b = solve_reverse_max(p, (1, 6)), solve_reverse_max(p, (1, 6))
    assert a.tag == b.tag and abs(a.obj - b.obj) <= 1e-12


# ---------------------------------------------------------------- local descent


def test_local_min_keeps_strict_minimum():
    w = ex3_weights(4)
    p = ex3_problem(w)
    x0 = ex3_solution(w)
    x = local_min_rcp(p, x0)
    assert float(p.c @ x) == pytest.approx(float(p.c @ x0), abs=1e-9)


def test_local_min_descends_from_origin():
    p, _ = bilinear_rcp(10)
    x0 = np.zeros(p.n)
    assert p.is_feasible(x0, 1e-6)
    x = local_min_rcp(p, x0)
    assert float(p.c @ x) <= 0.0
    assert p.max_violation(x) <= 1e-8
    assert kkt_residual(p, x) <= 1e-6


def test_local_min_then_polish_reaches_sinusoid_minimum():
    p, m = sinaff_rcp(10)
    x0 = sinaff_lift(p, m, 1.9, -4.9, np.sin(1.9))[0]
    assert p.is_feasible(x0, 1e-6)
    x = local_min_rcp(p, x0)
    assert float(p.c @ x) <= float(p.c @ x0) + 1e-9
    assert p.max_violation(x) <= 1e-8
    _, f = polish_nlp(sinaff_nlp(), m.project(x))
    assert f == pytest.approx(-3.2205, abs=1e-3)
