import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcpenum.cases import (
    BILINEAR_COST,
    BILINEAR_SOLUTION,
    SINAFF_BOUNDS,
    bilinear_nlp,
    bilinear_rcp,
    ex4_problem,
    sinaff_nlp,
    sinaff_rcp,
)
from rcpenum.convex import local_min_rcp
from rcpenum.decomposition import (
    InfeasibleBox,
    build_rcp,
    dc_split_bilinear,
    decompose_factorable,
    epigraph_transform,
    split_equalities,
)
from rcpenum.enumeration import Config, solve
from rcpenum.nlp import Factor, FactorableNlp, FExpr, Product, linear_expr
from rcpenum.univariate import Exp, Lin, Sin, Square

from support import sinaff_lift


def test_epigraph_of_sinusoid_product():
    nlp, t = epigraph_transform(sinaff_nlp())
    assert t == 2 and nlp.names == ("y1", "y2", "t")
    assert nlp.mandatory == (0,)
    y = np.array([0.7, -1.3, 0.4])
    assert nlp.cost.value(y) == pytest.approx(0.4)
    expect = np.sin(0.7) * (-0.7 + 0.3 * -1.3) - 0.4
    assert nlp.ineqs[0].value(y) == pytest.approx(expect, abs=1e-15)


def test_linear_cost_is_left_alone():
    nlp = FactorableNlp(2, [0, 0], [1, 1], linear_expr([1.0, -2.0]))
    out, t = epigraph_transform(nlp)
    assert t is None and out is nlp


def test_epigraph_keeps_linear_cost_part():
    # -50 y.y + alpha c.y: linear part stays in the cost, the quadratic moves to the constraint
    cy = np.array([3.0, -1.0])
    sq = [Product(-50.0, (Factor.of(Square(), j, 2),)) for j in range(2)]
    cost = FExpr(tuple(sq) + (Product(1.0, (Factor(Lin(), cy),)),))
    nlp, t = epigraph_transform(FactorableNlp(2, [0, 0], [1, 1], cost))
    y = np.array([0.2, 0.9, -7.0])
    assert nlp.cost.value(y) == pytest.approx(cy @ y[:2] - 7.0)
    assert nlp.ineqs[0].value(y) == pytest.approx(-50 * (0.04 + 0.81) + 7.0)


def test_split_of_nonlinear_equality():
    h = FExpr((Product(1.0, (Factor.of(Sin(), 0, 2),)), Product(-1.0, (Factor.of(Lin(), 1, 2),))))
    out = split_equalities(FactorableNlp(2, [-2, -1], [2, 1], linear_expr([0, 1]), eqs=(h,)))
    assert out.eqs == () and len(out.ineqs) == 2 and out.split_pairs == ((0, 1),)
    y = np.array([0.3, 0.1])
    assert out.ineqs[0].value(y) == pytest.approx(-out.ineqs[1].value(y))


def test_linear_equality_kept():
    h = linear_expr([-1.0, 0.3])
    out = split_equalities(FactorableNlp(2, [0, 0], [1, 1], linear_expr([1, 1]), eqs=(h,)))
    assert out.eqs == (h,) and out.ineqs == ()


def test_trivial_equality_dropped_with_warning(caplog):
    nlp = FactorableNlp(1, [0], [1], linear_expr([1.0]), eqs=(FExpr(),))
    with caplog.at_level(logging.WARNING):
        out = split_equalities(nlp)
    assert out.eqs == () and "0 = 0" in caplog.text
    with pytest.raises(InfeasibleBox):
        split_equalities(FactorableNlp(1, [0], [1], linear_expr([1.0]), eqs=(FExpr((), 1.0),)))


def _product_sum(m, n_y, seed=0):
    rng = np.random.default_rng(seed)
    fns = [Sin(), Exp(0.5, 0.0), Lin(), Square()]
    prods = []
    for _ in range(m):
        prods.append(Product(float(rng.uniform(0.5, 2)), tuple(Factor.of(fns[rng.integers(4)], j, n_y) for j in range(n_y))))
    return FExpr(tuple(prods), 0.25)


@pytest.mark.parametrize("m, n_y, n_ineq", [(1, 2, 5), (2, 2, 10), (3, 4, 39)])
def test_product_decomposition_counts(m, n_y, n_ineq):
    fam = decompose_factorable(_product_sum(m, n_y), n_y)
    assert len(fam.ineqs) == n_ineq and len(fam.eqs) == m
    assert sum(q.kind == "univariate" for q in fam.ineqs) == 2 * m * n_y


@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 100))
def test_decomposition_is_exact_at_consistent_points(m, n_y, seed):
    expr = _product_sum(m, n_y, seed)
    fam = decompose_factorable(expr, n_y, -np.ones(n_y), np.ones(n_y))
    dm = fam.map
    y = np.random.default_rng(seed).uniform(-1, 1, n_y)
    x = np.zeros(len(dm.names))
    x[:n_y] = y
    phi = np.ones((m, n_y))
    for i, prod in enumerate(expr.products):
        for f in prod.factors:
            phi[i, f.var] = float(f.fn(y[f.var]))
        phi[i, 0] *= prod.coef
    x[dm.Z_b] = phi
    for i in range(m):
        x[dm.Z_c[i, n_y - 2]] = phi[i, n_y - 1]
        for j in range(n_y - 3, -1, -1):
            x[dm.Z_c[i, j]] = phi[i, j + 1] * x[dm.Z_c[i, j + 1]]
    terms = [phi[i, 0] * x[dm.Z_c[i, 0]] for i in range(m)]
    for k, i in enumerate(range(1, m)):
        x[dm.z_a[k]] = terms[i]
    assert np.all(x >= dm.lo - 1e-12) and np.all(x <= dm.hi + 1e-12)
    vals = [q.value(x) for q in fam.ineqs]
    assert vals[0] == pytest.approx(float(expr.value(y)), abs=1e-12)
    assert all(v <= 1e-12 for v in vals[1:])
    assert all(abs(q.value(x)) <= 1e-12 for q in fam.eqs)


def test_dc_split_of_auxiliary_product():
    s = dc_split_bilinear(3, 4, +1, (-1.0, 1.0), (-3.5, 3.5))
    assert s.z_range == (-4.5, 4.5)
    assert s.z_coef == {3: 1.0, 4: 1.0}
    assert s.convex == (0.5, -1)
    assert s.concave == ((-0.5, 3), (-0.5, 4))


def test_dc_split_positive_box():
    assert dc_split_bilinear(0, 1, +1, (0.0, 5.0), (0.0, 5.0)).z_range == (0.0, 10.0)


def test_dc_split_negative_sign_keeps_one_convex_square():
    s = dc_split_bilinear(0, 1, -1, (0.0, 5.0), (0.0, 5.0))
    assert s.convex == (0.5, -1) and all(w < 0 for w, _ in s.concave)
    x = np.random.default_rng(1).uniform(0, 5, (50, 2))
    z = x[:, 0] * s.z_coef[0] + x[:, 1] * s.z_coef[1]
    val = 0.5 * z**2 - 0.5 * x[:, 0] ** 2 - 0.5 * x[:, 1] ** 2
    np.testing.assert_allclose(val, -x[:, 0] * x[:, 1], atol=1e-12)
    s2 = dc_split_bilinear(0, 1, -1, (0.0, 5.0), (0.0, 5.0), mode="sum")
    assert s2.z_range == (0.0, 10.0) and s2.convex[0] == 0.0


def test_sinusoid_product_structure():
    n_p = 3
    p, m = sinaff_rcp(n_p)
    assert m.names == ["y1", "y2", "t", "z1", "z2", "z3"]
    assert p.n == 6 and p.n_C == 2
    nonlin = [c for c in p.constraints[: p.n_general] if not c.meta.is_linear]
    assert len(nonlin) == 3 * n_p and p.n_general == 3 * n_p
    for name, (lo, hi) in SINAFF_BOUNDS.items():
        j = m.index(name)
        assert (p.lo[j], p.hi[j]) == (lo, hi)
    assert (p.lo[0], p.hi[0], p.lo[1], p.hi[1]) == (-2, 2, -5, 5)
    groups = p.mandatory_groups()
    assert list(groups) == [0] and len(groups[0]) == n_p
    sides = {c.meta.split.side for c in p.constraints if c.meta.split is not None}
    assert sides == {-1, 1}


def test_bilinear_structure():
    n_p = 5
    p, m = bilinear_rcp(n_p)
    assert m.names == ["y1", "y2", "t", "z1"]
    assert p.n_C == 1
    np.testing.assert_allclose(p.C[0], [1, 1, 0, -1])
    assert (p.lo[3], p.hi[3]) == (0.0, 10.0)
    epi = p.mandatory_groups()[0]
    assert len(epi) == n_p
    assert sum(c.meta.is_linear for c in p.constraints[: p.n_general]) == 2
    t = m.t
    assert p.lo[t] < -25 and p.hi[t] > 50


def test_linear_nlp_passes_through():
    nlp = FactorableNlp(2, [0, 0], [1, 1], linear_expr([1.0, 2.0]), (linear_expr([1, 1], -1.5),))
    p, m = build_rcp(nlp, n_pieces=3)
    assert p.n == 2 and p.n_general == 1 and m.names == ["y1", "y2"]
    np.testing.assert_array_equal(p.c, [1.0, 2.0])


def test_inverted_box_rejected():
    nlp = FactorableNlp(1, [1.0], [0.0], linear_expr([1.0]))
    with pytest.raises(InfeasibleBox):
        build_rcp(nlp, n_pieces=2)


@pytest.mark.parametrize("n_p", [3, 5, 10, 20])
def test_outer_approximation_bounds_optimum(n_p):
    r = solve(bilinear_rcp(n_p)[0], Config(U=10**4))
    assert r.cost <= BILINEAR_COST + 1e-6


@pytest.mark.parametrize("n_p", [3, 5, 10])
def test_inner_approximation_is_feasible(n_p):
    p, m = bilinear_rcp(n_p, rho=+1)
    r = solve(p, Config(U=10**4))
    y = m.project(r.x)
    assert bilinear_nlp().max_violation(y) <= 1e-8
    assert bilinear_nlp().objective(y) <= r.cost + 1e-8


def test_optimum_lifts_into_outer_approximation():
    p, m = bilinear_rcp(10)
    y = BILINEAR_SOLUTION
    x = np.array([y[0], y[1], y[0] * y[1], y[0] + y[1]])
    assert p.max_violation(x) <= 1e-12 and p.eq_residual(x) <= 1e-12
    assert float(p.c @ x) == pytest.approx(BILINEAR_COST)


def test_fine_approximation_tracks_grid_optimum():
    """Sinusoid product at 200 pieces: best compiled point vs a 10^6-point grid of the original."""
    nlp = sinaff_nlp()
    g1, g2 = np.meshgrid(np.linspace(-2, 2, 1000), np.linspace(-5, 5, 1000), indexing="ij")
    Y = np.column_stack([g1.ravel(), g2.ravel()])
    grid_best = float(np.min(np.sin(Y[:, 0]) * (-Y[:, 0] + 0.3 * Y[:, 1])))

    p, m = sinaff_rcp(200)
    grid = np.meshgrid(np.linspace(-2, 2, 41), np.linspace(-5, 5, 21), np.linspace(-1, 1, 101), indexing="ij")
    X = sinaff_lift(p, m, *(a.ravel() for a in grid))
    ok = np.max(p.g_all(X), axis=1) <= 1e-9
    start = X[ok][np.argmin(X[ok] @ p.c)]
    x = local_min_rcp(p, start)
    assert p.max_violation(x) <= 1e-8
    assert abs(float(p.c @ x) - grid_best) <= 5e-2
