"""Factorable NLPs: sums of products of univariate catalog functions."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.optimize import minimize

from .univariate import Lin, UFunc


@dataclass(frozen=True, eq=False)
class Factor:
    """fn(a @ y + b); a single-variable factor has a = e_j and b = 0."""

    fn: UFunc
    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).ravel())
        object.__setattr__(self, "b", float(self.b))

    @classmethod
    def of(cls, fn: UFunc, j: int, n_y: int) -> "Factor":
        a = np.zeros(n_y)
        a[j] = 1.0
        return cls(fn, a)

    @property
    def var(self) -> int | None:
        nz = np.flatnonzero(self.a)
        if len(nz) == 1 and self.a[nz[0]] == 1.0 and self.b == 0.0:
            return int(nz[0])
        return None

    def arg(self, y):
        return np.asarray(y, dtype=float) @ self.a + self.b

    def value(self, y):
        return self.fn(self.arg(y))

    def grad(self, y):
        return np.multiply.outer(self.fn.deriv(self.arg(y)), self.a)

    def arg_range(self, lo, hi) -> tuple[float, float]:
        lo_, hi_ = self.b, self.b
        for aj, l, h in zip(self.a, lo, hi):
            lo_ += min(aj * l, aj * h)
            hi_ += max(aj * l, aj * h)
        return lo_, hi_

    def range(self, lo, hi) -> tuple[float, float]:
        return self.fn.range(*self.arg_range(lo, hi))

    def padded(self, n: int) -> "Factor":
        return Factor(self.fn, np.r_[self.a, np.zeros(n - self.a.size)], self.b)


@dataclass(frozen=True, eq=False)
class Product:
    coef: float
    factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "coef", float(self.coef))
        object.__setattr__(self, "factors", tuple(self.factors))

    def value(self, y):
        v = self.coef
        for f in self.factors:
            v = v * f.value(y)
        return v

    def grad(self, y):
        """Gradient at a single point y."""
        vals = [float(f.value(y)) for f in self.factors]
        g = np.zeros(np.shape(y))
        for k, f in enumerate(self.factors):
            others = self.coef * math.prod(v for l, v in enumerate(vals) if l != k)
            g = g + others * f.grad(y)
        return g

    def range(self, lo, hi) -> tuple[float, float]:
        a, b = self.coef, self.coef
        for f in self.factors:
            fl, fh = f.range(lo, hi)
            cands = (a * fl, a * fh, b * fl, b * fh)
            a, b = min(cands), max(cands)
        return a, b

    @property
    def is_linear(self) -> bool:
        return len(self.factors) == 0 or (len(self.factors) == 1 and isinstance(self.factors[0].fn, Lin))

    def padded(self, n: int) -> "Product":
        return Product(self.coef, tuple(f.padded(n) for f in self.factors))


@dataclass(frozen=True, eq=False)
class FExpr:
    products: tuple[Product, ...] = ()
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "products", tuple(self.products))
        object.__setattr__(self, "const", float(self.const))

    def value(self, y):
        v = self.const
        for p in self.products:
            v = v + p.value(y)
        return v

    def grad(self, y):
        g = np.zeros(np.shape(y))
        for p in self.products:
            g = g + p.grad(y)
        return g

    def range(self, lo, hi) -> tuple[float, float]:
        a = b = self.const
        for p in self.products:
            pl, ph = p.range(lo, hi)
            a, b = a + pl, b + ph
        return a, b

    @property
    def is_linear(self) -> bool:
        return all(p.is_linear for p in self.products)

    def linear_form(self, n: int) -> tuple[np.ndarray, float]:
        """(a, b) with expr = a @ y + b; requires is_linear."""
        a, b = np.zeros(n), self.const
        for p in self.products:
            if not p.factors:
                b += p.coef
                continue
            f = p.factors[0]
            a = a + p.coef * f.fn.a * np.r_[f.a, np.zeros(n - f.a.size)]
            b += p.coef * (f.fn.a * f.b + f.fn.b)
        return a, b

    def split_linear(self) -> tuple["FExpr", "FExpr"]:
        lin = FExpr(tuple(p for p in self.products if p.is_linear), self.const)
        nonlin = FExpr(tuple(p for p in self.products if not p.is_linear))
        return lin, nonlin

    def padded(self, n: int) -> "FExpr":
        return FExpr(tuple(p.padded(n) for p in self.products), self.const)

    @property
    def is_trivial(self) -> bool:
        return not self.products


def linear_expr(a, b: float = 0.0) -> FExpr:
    a = np.asarray(a, dtype=float)
    return FExpr((Product(1.0, (Factor(Lin(), a),)),), b)


@dataclass(frozen=True, eq=False)
class FactorableNlp:
    """minimize cost(y) s.t. ineqs(y) <= 0, eqs(y) = 0, lo <= y <= hi."""

    n_y: int
    lo: np.ndarray
    hi: np.ndarray
    cost: FExpr
    ineqs: tuple[FExpr, ...] = ()
    eqs: tuple[FExpr, ...] = ()
    names: tuple[str, ...] = ()
    mandatory: tuple[int, ...] = ()
    split_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).ravel())
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).ravel())
        object.__setattr__(self, "ineqs", tuple(self.ineqs))
        object.__setattr__(self, "eqs", tuple(self.eqs))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"y{i + 1}" for i in range(self.n_y)))
        if self.lo.size != self.n_y or self.hi.size != self.n_y:
            raise ValueError("box size does not match n_y")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("factorable NLPs need a bounded box")

    def objective(self, y) -> float:
        return float(self.cost.value(y))

    def max_violation(self, y) -> float:
        y = np.asarray(y, dtype=float)
        v = [0.0, float(np.max(self.lo - y)), float(np.max(y - self.hi))]
        v += [float(g.value(y)) for g in self.ineqs]
        v += [abs(float(h.value(y))) for h in self.eqs]
        return max(v)


def polish_nlp(nlp: FactorableNlp, y0, maxiter: int = 500) -> tuple[np.ndarray, float]:
    """Local SQP descent on the original NLP from y0; returns (y, cost)."""
    y0 = np.clip(np.asarray(y0, dtype=float), nlp.lo, nlp.hi)
    cons = [{"type": "ineq", "fun": (lambda y, g=g: -g.value(y)), "jac": (lambda y, g=g: -g.grad(y))} for g in nlp.ineqs]
    cons += [{"type": "eq", "fun": (lambda y, h=h: h.value(y)), "jac": (lambda y, h=h: h.grad(y))} for h in nlp.eqs]
    res = minimize(nlp.cost.value, y0, jac=nlp.cost.grad, method="SLSQP", bounds=list(zip(nlp.lo, nlp.hi)),
                   constraints=cons, options={"ftol": 1e-14, "maxiter": maxiter})
    y = np.clip(res.x, nlp.lo, nlp.hi)
    if nlp.max_violation(y0) <= 1e-8 and (nlp.max_violation(y) > 1e-8 or nlp.objective(y) > nlp.objective(y0)):
        y = y0
    return y, nlp.objective(y)


def interval_mul(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    c = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return min(c), max(c)


def finite_or_raise(lo: float, hi: float, what: str) -> tuple[float, float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"could not derive finite bounds for {what}")
    return lo, hi
