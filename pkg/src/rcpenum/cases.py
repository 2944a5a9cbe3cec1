"""Problem factories for the benchmark set."""
from __future__ import annotations

import numpy as np

from .decomposition import DecompositionMap, build_rcp
from .nlp import Factor, FactorableNlp, FExpr, Product, linear_expr
from .problem import Affine, ConcaveExpr, Constraint, ConstraintMeta, ExpTerm, QuadDiag, QuadFull, RcpProblem
from .univariate import Lin, Sin

EX2_COSTS = [
    (0.1, 1.0), (1.0, 0.4), (-0.2, 0.7), (-0.1, 0.1), (-0.6, 2.2),
    (0.7, 1.6), (0.6, -0.6), (1.1, 0.1), (-0.1, -0.8), (0.3, -1.3),
]

EX4_A = np.array([
    [2, -6, -1, 0, -3, -3, -2, -6, -2, -2],
    [6, -5, 8, -3, 0, 1, 3, 8, 9, -3],
    [-5, 6, 5, 3, 8, -8, 9, 2, 0, -9],
    [9, 5, 0, -9, 1, -8, 3, -9, -9, -3],
    [-8, 7, -4, -5, -9, 1, -7, -1, 3, -2],
], dtype=float)
EX4_B = np.array([-4, 22, -6, -23, -12], dtype=float)
EX4_CY = np.array([48, 42, 48, 45, 44, 41, 47, 42, 45, 46], dtype=float)


def _aff(a, b):
    return Affine(np.asarray(a, dtype=float), b)


def ex2_problem(c=(0.1, 1.0)) -> RcpProblem:
    """Two variables, seven concave constraints, disconnected feasible region."""
    g = [
        ConcaveExpr((QuadDiag(0, -2.42, -0.4), _aff([1.1, 1.0], -0.235))),
        ConcaveExpr((QuadDiag(0, -1.1), _aff([1.3, -1.0], -0.17))),
        ConcaveExpr((ExpTerm(-1.0, -5.0, 4.0, 0), _aff([0.0, -1.0], 1.2))),
        ConcaveExpr((QuadDiag(0, -1.0, 0.5), QuadDiag(1, -1.0, 0.5), _aff([0.0, 0.0], 0.09))),
        ConcaveExpr((QuadDiag(0, -22.0, 0.3), _aff([1.1, 1.0], -1.155))),
        ConcaveExpr((QuadDiag(0, -2.2, 0.5), _aff([1.1, 1.0], -1.475))),
        ConcaveExpr((QuadDiag(0, -20.0, 0.1), _aff([1.3, -1.0], 0.5))),
    ]
    return RcpProblem.build(c, g, [0.0, 0.0], [1.0, 1.0])


def ex3_weights(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    while True:
        w = rng.uniform(0.05, 1.0, n)
        if np.sum(w == w.max()) == 1:
            return w


def ex3_problem(w) -> RcpProblem:
    """min sum x s.t. 1 - sum w x^2 <= 0, 0 <= x <= 100."""
    w = np.asarray(w, dtype=float)
    n = w.size
    terms = tuple(QuadDiag(j, -w[j]) for j in range(n)) + (_aff(np.zeros(n), 1.0),)
    return RcpProblem.build(np.ones(n), [ConcaveExpr(terms)], np.zeros(n), np.full(n, 100.0))


def ex3_solution(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    x = np.zeros(w.size)
    k = int(np.argmax(w))
    x[k] = np.sqrt(1.0 / w[k])
    return x


def ex4_problem(alpha: float = 1.0) -> RcpProblem:
    """Concave quadratic minimization in epigraph form over 11 variables."""
    Q = np.zeros((11, 11))
    Q[:10, :10] = -50.0 * np.eye(10)
    epi = Constraint(
        ConcaveExpr((QuadFull(Q), _aff(np.r_[np.zeros(10), -1.0], 0.0))),
        ConstraintMeta(mandatory_group=0, label="epigraph"),
    )
    lin = [ConcaveExpr((_aff(np.r_[EX4_A[k], 0.0], -EX4_B[k]),)) for k in range(5)]
    c = np.r_[alpha * EX4_CY, 1.0]
    lo = np.r_[np.zeros(10), -500.0]
    hi = np.r_[np.ones(10), 0.0]
    names = [f"y{i + 1}" for i in range(10)] + ["t"]
    return RcpProblem.build(c, [epi, *lin], lo, hi, names=names)


def ex4_objective(y, alpha: float = 1.0) -> float:
    y = np.asarray(y, dtype=float)
    return float(-50.0 * y @ y + alpha * EX4_CY @ y)


def sinaff_nlp() -> FactorableNlp:
    """min (sin y1)(-y1 + 0.3 y2) over y1 in [-2, 2], y2 in [-5, 5]."""
    cost = FExpr((Product(1.0, (Factor.of(Sin(), 0, 2), Factor(Lin(), [-1.0, 0.3]))),))
    return FactorableNlp(2, [-2.0, -5.0], [2.0, 5.0], cost)


SINAFF_BOUNDS = {"z1": (-1.0, 1.0), "z2": (-3.5, 3.5), "z3": (-4.5, 4.5)}
SINAFF_MINIMA = [np.array([-1.8601, 5.0]), np.array([1.8601, -5.0])]


def sinaff_rcp(n_p: int, **kw) -> tuple[RcpProblem, DecompositionMap]:
    return build_rcp(sinaff_nlp(), n_pieces=n_p, rho=-1, bounds_override=SINAFF_BOUNDS, **kw)


def bilinear_nlp() -> FactorableNlp:
    """min -y1 + y1 y2 - y2 s.t. -6 y1 + 8 y2 <= 3, 3 y1 - y2 <= 3, y in [0, 5]^2."""
    cost = FExpr((
        Product(-1.0, (Factor.of(Lin(), 0, 2),)),
        Product(1.0, (Factor.of(Lin(), 0, 2), Factor.of(Lin(), 1, 2))),
        Product(-1.0, (Factor.of(Lin(), 1, 2),)),
    ))
    ineqs = (linear_expr([-6.0, 8.0], -3.0), linear_expr([3.0, -1.0], -3.0))
    return FactorableNlp(2, [0.0, 0.0], [5.0, 5.0], cost, ineqs)


BILINEAR_SOLUTION = np.array([7.0 / 6.0, 0.5])
BILINEAR_COST = -13.0 / 12.0


def bilinear_rcp(n_p: int, rho: int = -1, **kw) -> tuple[RcpProblem, DecompositionMap]:
    return build_rcp(bilinear_nlp(), n_pieces=n_p, rho=rho, **kw)
