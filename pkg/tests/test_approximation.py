import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcpenum.approximation import (
    ApproxSpec,
    LipschitzViolated,
    NotConvexOnInterval,
    PiecewiseConcave,
    approximation_error,
    parabola_pieces,
    pwl_convex_pieces,
    required_pieces,
)
from rcpenum.univariate import Const, Exp, Sin, Square, fig1_sinusoid

FIG1 = fig1_sinusoid()


def test_fig1_pair_brackets_sinusoid():
    x = np.linspace(0, 10, 10_000)
    under = parabola_pieces(FIG1, ApproxSpec(70, 40, 0, 10, rho=-1))
    over = parabola_pieces(FIG1, ApproxSpec(70, 40, 0, 10, rho=+1))
    assert np.all(under(x) <= FIG1(x))
    assert np.all(FIG1(x) <= over(x))
    assert approximation_error(over, FIG1, 10_000)[0] >= 0


def test_zero_function_single_piece():
    spec = ApproxSpec(1.0, 1, 0.0, 1.0, rho=-1)
    p = parabola_pieces(Const(0.0), spec)
    x = np.linspace(0, 1, 1001)
    assert np.all(p(x) <= 0)
    assert np.max(np.abs(p(x))) <= 2.5 * spec.kappa * spec.dx + 1e-12


def test_sine_error_strictly_decreasing():
    x = np.linspace(-2, 2, 100_000)
    errs = [np.max(np.abs(parabola_pieces(Sin(), ApproxSpec(1.0, n, -2, 2, rho=-1))(x) - np.sin(x))) for n in (4, 8, 16)]
    assert errs[0] > errs[1] > errs[2]


def test_parabola_curvature_negative_and_shared():
    p = parabola_pieces(Sin(), ApproxSpec(1.0, 6, -2, 2))
    assert np.all(p.beta2 < 0)
    assert np.allclose(p.beta2, -2.0 * 1.0 / (4 / 6))


def test_bad_kappa_detected():
    with pytest.raises(LipschitzViolated):
        parabola_pieces(FIG1, ApproxSpec(5.0, 10, 0, 10))


def test_spec_invariants():
    for bad in (dict(kappa=0), dict(n_p=0), dict(lo=1.0), dict(rho=0), dict(n_fine=5)):
        args = dict(kappa=1.0, n_p=1, lo=0.0, hi=1.0, rho=-1) | bad
        with pytest.raises(ValueError):
            ApproxSpec(**args)


def test_square_tangents_underestimate():
    p = pwl_convex_pieces(Square(), 3, -4.5, 4.5, rho=-1)
    x = np.linspace(-4.5, 4.5, 10_001)
    assert p.n_pieces == 3
    assert np.all(p.beta2 == 0)
    assert np.all(p(x) <= x**2 + 1e-12)


def test_single_chord_overestimates():
    p = pwl_convex_pieces(Square(), 1, 0, 10, rho=+1)
    assert p.n_pieces == 1
    assert (p.beta1[0], p.beta0[0]) == pytest.approx((10.0, 0.0))
    x = np.linspace(0, 10, 1001)
    assert np.all(p(x) >= x**2 - 1e-12)


@pytest.mark.parametrize("n_p", [10, 50])
def test_chord_gap_closed_form(n_p):
    p = pwl_convex_pieces(Square(), n_p, 0, 10, rho=+1)
    x = np.linspace(0, 10, 100_001)
    assert np.max(p(x) - x**2) <= (10.0**2) / (4 * n_p**2) + 1e-9


def test_pwl_requires_convexity():
    with pytest.raises(NotConvexOnInterval):
        pwl_convex_pieces(Sin(), 4, 0.5, 3.0)


@pytest.mark.parametrize(
    "kappa, eps, lo, hi, n", [(70, 1.75, 0, 10, 1000), (1, 2.5, 0, 1, 1), (70, 0.175, 0, 10, 10000)]
)
def test_required_pieces(kappa, eps, lo, hi, n):
    assert required_pieces(kappa, eps, lo, hi) == n


def test_error_of_shifted_copy():
    p = pwl_convex_pieces(Square(), 1, 0, 1, rho=+1)
    q = p.shifted(0.1)
    e = approximation_error(q, lambda x: p(x), 101)
    assert e == pytest.approx((0.1, 0.1), abs=1e-14)


def test_under_output_has_nonpositive_error():
    p = parabola_pieces(Exp(1.0, 0.0), ApproxSpec(np.e, 7, 0, 1, rho=-1))
    assert approximation_error(p, Exp(1.0, 0.0), 10_000)[1] <= 0


CATALOG = [(Sin(), 1.0, -2.0, 2.0), (Exp(1.0, 0.0), np.e, 0.0, 1.0), (Square(), 4.0, -2.0, 2.0), (FIG1, 70.0, 0.0, 10.0)]


@given(st.sampled_from(CATALOG), st.floats(0.05, 1.0))
def test_sandwich_at_required_pieces(case, eps):
    fn, kappa, lo, hi = case
    n = min(required_pieces(kappa, eps, lo, hi), 4000)
    x = np.linspace(lo, hi, 10_000)
    under = parabola_pieces(fn, ApproxSpec(kappa, n, lo, hi, rho=-1))
    over = parabola_pieces(fn, ApproxSpec(kappa, n, lo, hi, rho=+1))
    assert np.all(under(x) <= fn(x)) and np.all(fn(x) <= over(x))
    eps_eff = 2.5 * kappa * (hi - lo) / n
    slack = kappa * (hi - lo) / 9_999
    assert np.max(fn(x) - under(x)) <= eps_eff + slack
    assert np.max(over(x) - fn(x)) <= eps_eff + slack


@given(st.sampled_from(CATALOG[:3]), st.integers(1, 40), st.sampled_from([-1, 1]))
def test_single_interval_maximality(case, n_p, rho):
    fn, kappa, lo, hi = case
    p = parabola_pieces(fn, ApproxSpec(kappa, n_p, lo, hi, rho=rho))
    for k in range(p.n_pieces):
        a, b = p.breaks[k], p.breaks[k + 1]
        inner = np.linspace(a, b, 50)[1:-1]
        if len(inner):
            vals = p.pieces(inner)
            assert np.all(vals[:, k] >= vals.max(axis=1) - 1e-9 * (1 + np.abs(vals).max()))
    assert np.all(np.diff(p.breaks) >= 0)


@given(st.sampled_from(CATALOG), st.sampled_from([-1, 1]))
def test_refinement_monotone_under_doubling(case, rho):
    fn, kappa, lo, hi = case
    x = np.linspace(lo, hi, 20_000)
    errs = [np.max(np.abs(parabola_pieces(fn, ApproxSpec(kappa, n, lo, hi, rho=rho))(x) - fn(x))) for n in (5, 10, 20, 40, 80)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_direct_piecewise_uses_true_max():
    p = PiecewiseConcave(np.array([-1.0, -1.0]), np.array([2.0, -2.0]), np.array([-1.0, -1.0]), np.array([-2.0, 0.0, 2.0]))
    np.testing.assert_allclose(p(np.array([-2.0, 0.0, 2.0])), [-1.0, -1.0, -1.0])
