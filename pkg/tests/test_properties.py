"""Run-wide invariants of the enumeration engine, checked through the observer hook."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcpenum.bench import active_mask, reverse_oracle
from rcpenum.cases import EX2_COSTS, bilinear_rcp, ex2_problem, ex3_problem, ex3_weights, ex4_problem
from rcpenum.convex import solve_subset_min
from rcpenum.enumeration import Config, bit_indices, solve

_ORACLE = {}


def _oracle(c):
    if c not in _ORACLE:
        p = ex2_problem(c)
        cost, x, A = reverse_oracle(p)
        mask = 0
        for i in A:
            mask |= 1 << i
        _ORACLE[c] = (cost, x, mask)
    return _ORACLE[c]


costs = st.sampled_from(EX2_COSTS)


@pytest.mark.parametrize("c", EX2_COSTS)
def test_fathoming_never_spans_optimal_active_set(c):
    cost, x, opt = _oracle(c)
    seen = []

    def watch(event, state):
        seen.extend(r.bits for r in state.F.rows())

    r = solve(ex2_problem(c), Config(U=10**4, observer=watch))
    rows = set(seen) | {m.bits for m in r.fathoming}
    assert not any(f & ~opt == 0 for f in rows)
    assert r.cost == pytest.approx(cost, abs=1e-6)


@given(costs, st.integers(0, 3))
def test_subset_lower_bounds_are_valid(c, seed):
    cost, x, opt = _oracle(c)
    r = solve(ex2_problem(c), Config(U=10**3, seed=seed, all_minima=True))
    for rec in r.tree:
        if rec.mask & ~opt == 0 and np.isfinite(rec.s_low):
            assert rec.s_low <= cost + 1e-8


@given(costs, st.integers(0, 3))
def test_validated_subsets_are_feasible(c, seed):
    final = {}

    def watch(event, state):
        final["state"] = state

    p = ex2_problem(c)
    solve(p, Config(U=10**3, seed=seed, all_minima=True, observer=watch))
    state = final["state"]
    full = state.p.n - state.p.n_C
    for row in state.V.rows():
        idx = row.indices
        subsets = [[i] for i in idx] + [[i, j] for i in idx for j in idx if i < j]
        for sub in subsets:
            if len(sub) <= full:
                assert solve_subset_min(state.p, sub, state.poly).tag != "infeasible"


def _monotone_and_contains(p, x_star, cfg):
    boxes, inside = [], []

    def watch(event, state):
        if event == "rebuild":
            boxes.append((state.lo_C.copy(), state.hi_C.copy()))
            inside.append(state.poly.row_violation(x_star))

    solve(p, Config(**cfg, observer=watch))
    assert boxes
    for (l0, h0), (l1, h1) in zip(boxes, boxes[1:]):
        assert np.all(l1 >= l0) and np.all(h1 <= h0)
    assert max(inside) <= 1e-7


@given(costs, st.integers(0, 3))
def test_reduced_box_shrinks_and_keeps_optimum(c, seed):
    _, x, _ = _oracle(c)
    _monotone_and_contains(ex2_problem(c), x, {"U": 10**3, "seed": seed})


@pytest.mark.parametrize("n_p", [4, 8])
def test_reduced_box_keeps_approximation_optimum(n_p):
    p, _ = bilinear_rcp(n_p)
    _, x, _ = reverse_oracle(p)
    _monotone_and_contains(p, x, {"U": 10**3})


PROBLEMS = [
    lambda: ex2_problem((0.6, -0.6)),
    lambda: ex2_problem((0.3, -1.3)),
    lambda: ex3_problem(ex3_weights(6, seed=2)),
    lambda: ex4_problem(-1.0),
    lambda: ex4_problem(0.1),
    lambda: bilinear_rcp(10)[0],
    lambda: bilinear_rcp(10, rho=1)[0],
]


@given(st.sampled_from(range(len(PROBLEMS))), st.integers(0, 5))
@settings(max_examples=15)
def test_termination_criteria_are_consistent(k, seed):
    p = PROBLEMS[k]()
    cfg = Config(U=10**3, seed=seed)
    r = solve(p, cfg)
    if r.criterion == "I":
        assert p.max_violation(r.x_low) <= cfg.eps_g
    elif r.criterion == "II":
        assert p.is_feasible(r.x_up, 1e-8)
        assert float(p.c @ r.x_up - p.c @ r.x_low) <= cfg.eps
    for x in r.candidates:
        assert p.max_violation(x) <= cfg.eps_g


@given(st.sampled_from(range(len(PROBLEMS))), st.integers(0, 5))
@settings(max_examples=10)
def test_fixed_seed_is_deterministic(k, seed):
    a = solve(PROBLEMS[k](), Config(U=10**3, seed=seed))
    b = solve(PROBLEMS[k](), Config(U=10**3, seed=seed))
    da, db = a.to_dict(), b.to_dict()
    da.pop("elapsed")
    db.pop("elapsed")
    assert da == db
    assert [(t.mask, t.action) for t in a.tree] == [(t.mask, t.action) for t in b.tree]


def test_optimal_mask_is_active_at_oracle_point():
    for c in EX2_COSTS:
        cost, x, opt = _oracle(c)
        assert active_mask(ex2_problem(c), x, 1e-6) & opt == opt
        assert bit_indices(opt) and len(bit_indices(opt)) == 2
