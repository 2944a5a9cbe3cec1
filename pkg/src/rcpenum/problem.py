"""Standard-form reverse-convex problems built from a closed catalog of concave terms.

A problem is

    minimize    c @ x
    subject to  g_i(x) <= 0,  i = 0..n_g-1   (every g_i concave)
                C @ x = d

with finite box bounds that also appear explicitly as the last 2n constraints
(all lower bounds first, then all upper bounds).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

NSD_TOL = 1e-9
RANK_RTOL = 1e-9


class ProblemError(ValueError):
    """Base class for invalid problem data."""


class RankDeficientC(ProblemError):
    pass


class UnboundedVariable(ProblemError):
    pass


class NonConcaveTerm(ProblemError):
    pass


# ---------------------------------------------------------------------------
# term catalog


@dataclass(frozen=True, eq=False)
class Affine:
    """a @ x + b"""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).ravel())
        object.__setattr__(self, "b", float(self.b))

    def value(self, x):
        return x @ self.a + self.b

    def grad(self, x):
        return np.broadcast_to(self.a, np.shape(x)).copy()

    def is_concave(self) -> bool:
        return True


@dataclass(frozen=True, eq=False)
class QuadDiag:
    """q * (x_j - center)**2 with q <= 0"""

    j: int
    q: float
    center: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "j", int(self.j))
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "center", float(self.center))

    def value(self, x):
        return self.q * (x[..., self.j] - self.center) ** 2

    def grad(self, x):
        g = np.zeros(np.shape(x))
        g[..., self.j] = 2.0 * self.q * (x[..., self.j] - self.center)
        return g

    def is_concave(self) -> bool:
        return self.q <= 0.0


@dataclass(frozen=True, eq=False)
class QuadFull:
    """x @ Q @ x with Q symmetric negative semidefinite"""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))

    def value(self, x):
        return np.einsum("...i,ij,...j->...", x, self.Q, x)

    def grad(self, x):
        return 2.0 * x @ self.Q

    def is_concave(self) -> bool:
        return bool(np.linalg.eigvalsh(self.Q).max() <= NSD_TOL)

    def is_diagonal(self) -> bool:
        return not np.any(self.Q - np.diag(np.diag(self.Q)))


@dataclass(frozen=True, eq=False)
class ExpTerm:
    """s * exp(alpha * x_j + c0) with s <= 0"""

    s: float
    alpha: float
    c0: float
    j: int

    def __post_init__(self):
        for name in ("s", "alpha", "c0"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "j", int(self.j))

    def value(self, x):
        return self.s * np.exp(self.alpha * x[..., self.j] + self.c0)

    def grad(self, x):
        g = np.zeros(np.shape(x))
        g[..., self.j] = self.s * self.alpha * np.exp(self.alpha * x[..., self.j] + self.c0)
        return g

    def is_concave(self) -> bool:
        return self.s <= 0.0


Term = Affine | QuadDiag | QuadFull | ExpTerm


@dataclass(frozen=True)
class Univariate:
    """Concave univariate component lin*x + sum q(x-c)^2 + sum s exp(a x + c0)."""

    lin: float = 0.0
    quads: tuple[tuple[float, float], ...] = ()
    exps: tuple[tuple[float, float, float], ...] = ()

    def value(self, t):
        t = np.asarray(t, dtype=float)
        v = self.lin * t
        for q, c in self.quads:
            v = v + q * (t - c) ** 2
        for s, a, c0 in self.exps:
            v = v + s * np.exp(a * t + c0)
        return v

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        v = self.lin + 0.0 * t
        for q, c in self.quads:
            v = v + 2.0 * q * (t - c)
        for s, a, c0 in self.exps:
            v = v + s * a * np.exp(a * t + c0)
        return v

    def argmax(self, lo: float, hi: float) -> float:
        """Maximizer on [lo, hi]; the derivative is nonincreasing so bisection is exact."""
        if self.deriv(lo) <= 0.0:
            return lo
        if self.deriv(hi) >= 0.0:
            return hi
        a, b = lo, hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if m in (a, b):
                break
            if self.deriv(m) > 0.0:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    def max_on(self, lo: float, hi: float) -> float:
        return float(self.value(self.argmax(lo, hi)))

    def chord(self, lo: float, hi: float) -> tuple[float, float]:
        """(slope, intercept) of the secant through the interval endpoints."""
        flo, fhi = float(self.value(lo)), float(self.value(hi))
        if hi - lo <= 0.0:
            return float(self.deriv(lo)), flo - float(self.deriv(lo)) * lo
        slope = (fhi - flo) / (hi - lo)
        return slope, flo - slope * lo


@dataclass(frozen=True)
class SeparableForm:
    const: float
    parts: tuple[tuple[int, Univariate], ...]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = self.const
        for j, u in self.parts:
            v = v + u.value(x[..., j])
        return v


@dataclass(frozen=True, eq=False)
class ConcaveExpr:
    terms: tuple[Term, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = np.zeros(x.shape[:-1])
        for t in self.terms:
            v = v + t.value(x)
        return v if v.ndim else float(v)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for t in self.terms:
            g = g + t.grad(x)
        return g

    @property
    def is_linear(self) -> bool:
        return all(isinstance(t, Affine) for t in self.terms)

    def linear_part(self, n: int) -> tuple[np.ndarray, float]:
        a, b = np.zeros(n), 0.0
        for t in self.terms:
            if isinstance(t, Affine):
                a = a + t.a
                b += t.b
        return a, b

    def nonconcave_terms(self) -> list[int]:
        return [k for k, t in enumerate(self.terms) if not t.is_concave()]

    def separable(self) -> SeparableForm | None:
        const = 0.0
        lin: dict[int, float] = {}
        quads: dict[int, list] = {}
        exps: dict[int, list] = {}
        for t in self.terms:
            if isinstance(t, Affine):
                const += t.b
                for j in np.flatnonzero(t.a):
                    lin[int(j)] = lin.get(int(j), 0.0) + float(t.a[j])
            elif isinstance(t, QuadDiag):
                quads.setdefault(t.j, []).append((t.q, t.center))
            elif isinstance(t, QuadFull):
                if not t.is_diagonal():
                    return None
                for j in np.flatnonzero(np.diag(t.Q)):
                    quads.setdefault(int(j), []).append((float(t.Q[j, j]), 0.0))
            else:
                exps.setdefault(t.j, []).append((t.s, t.alpha, t.c0))
        idx = sorted(set(lin) | set(quads) | set(exps))
        parts = tuple(
            (j, Univariate(lin.get(j, 0.0), tuple(quads.get(j, ())), tuple(exps.get(j, ()))))
            for j in idx
        )
        return SeparableForm(const, parts)


def affine(a, b=0.0) -> ConcaveExpr:
    return ConcaveExpr((Affine(a, b),))


# ---------------------------------------------------------------------------
# metadata


@dataclass(frozen=True)
class PieceInfo:
    group: int
    index: int
    interval: tuple[float, float]


@dataclass(frozen=True)
class SplitInfo:
    pair: int
    side: int  # +1: under-approximation of f, -1: under-approximation of -f


@dataclass(frozen=True)
class ConstraintMeta:
    mandatory_group: int | None = None
    piece: PieceInfo | None = None
    split: SplitInfo | None = None
    is_linear: bool = False
    bound: tuple[int, str] | None = None
    label: str = ""


@dataclass(frozen=True, eq=False)
class PieceGroup:
    """Constraints beta2 x_var^2 + beta1 x_var + beta0 + rest(x) <= 0, one per piece.

    `breaks` has n_p + 1 entries; piece k is the pointwise maximum on
    [breaks[k], breaks[k+1]].
    """

    gid: int
    var: int
    beta: np.ndarray  # (n_p, 3) columns beta2, beta1, beta0
    breaks: np.ndarray
    rest: ConcaveExpr

    @property
    def n_pieces(self) -> int:
        return len(self.beta)

    def piece_values(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return self.beta[:, 0] * t**2 + self.beta[:, 1] * t + self.beta[:, 2]


@dataclass(frozen=True, eq=False)
class Constraint:
    expr: ConcaveExpr
    meta: ConstraintMeta = field(default_factory=ConstraintMeta)


# ---------------------------------------------------------------------------
# the problem


@dataclass(frozen=True, eq=False)
class RcpProblem:
    c: np.ndarray
    constraints: tuple[Constraint, ...]
    lo: np.ndarray
    hi: np.ndarray
    C: np.ndarray
    d: np.ndarray
    groups: tuple[PieceGroup, ...] = ()
    names: tuple[str, ...] = ()

    @classmethod
    def build(
        cls,
        c,
        constraints: Sequence[Constraint | ConcaveExpr],
        lo,
        hi,
        C=None,
        d=None,
        groups: Sequence[PieceGroup] = (),
        names: Sequence[str] = (),
    ) -> "RcpProblem":
        """Assemble a problem, appending the 2n bound constraints at the end."""
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if lo.size != n or hi.size != n:
            raise ProblemError("box dimensions do not match the cost vector")
        C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)
        d = np.zeros(C.shape[0]) if d is None else np.asarray(d, dtype=float).ravel()
        if d.size != C.shape[0]:
            raise ProblemError("C and d have inconsistent sizes")
        cons = []
        for g in constraints:
            if isinstance(g, ConcaveExpr):
                g = Constraint(g)
            if g.meta.bound is not None:
                continue
            cons.append(replace(g, meta=replace(g.meta, is_linear=g.expr.is_linear)))
        eye = np.eye(n)
        for i in range(n):
            cons.append(Constraint(affine(-eye[i], lo[i]), ConstraintMeta(is_linear=True, bound=(i, "lower"))))
        for i in range(n):
            cons.append(Constraint(affine(eye[i], -hi[i]), ConstraintMeta(is_linear=True, bound=(i, "upper"))))
        names = tuple(names) if names else tuple(f"x{i + 1}" for i in range(n))
        return cls(c, tuple(cons), lo, hi, C, d, tuple(groups), names)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_g(self) -> int:
        return len(self.constraints)

    @property
    def n_C(self) -> int:
        return self.C.shape[0]

    @property
    def n_general(self) -> int:
        """Number of constraints that are not box bounds."""
        return self.n_g - 2 * self.n

    def bound_index(self, j: int, side: str) -> int:
        return self.n_general + j + (self.n if side == "upper" else 0)

    def group(self, gid: int) -> PieceGroup:
        for g in self.groups:
            if g.gid == gid:
                return g
        raise KeyError(gid)

    def group_members(self, gid: int) -> list[int]:
        return [
            i for i, con in enumerate(self.constraints) if con.meta.piece is not None and con.meta.piece.group == gid
        ]

    def mandatory_groups(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, con in enumerate(self.constraints):
            if con.meta.mandatory_group is not None:
                out.setdefault(con.meta.mandatory_group, []).append(i)
        return out

    def canonical(self) -> "RcpProblem":
        """Reorder general constraints: mandatory singletons, other mandatory groups, the rest."""
        groups = self.mandatory_groups()
        single = [m[0] for m in groups.values() if len(m) == 1]
        multi = [i for m in groups.values() if len(m) > 1 for i in m]
        first = sorted(single) + sorted(multi)
        rest = [i for i in range(self.n_general) if i not in set(first)]
        order = first + rest
        if order == list(range(self.n_general)):
            return self
        cons = tuple(self.constraints[i] for i in order) + self.constraints[self.n_general:]
        return replace(self, constraints=cons)

    @property
    def compiled(self) -> "_Compiled":
        cache = self.__dict__.get("_compiled")
        if cache is None:
            cache = _Compiled(self)
            object.__setattr__(self, "_compiled", cache)
        return cache

    def g_all(self, x) -> np.ndarray:
        """All constraint values; x may be (n,) or (k, n)."""
        return self.compiled.values(np.asarray(x, dtype=float))

    def jacobian(self, x) -> np.ndarray:
        return self.compiled.jacobian(np.asarray(x, dtype=float))

    def max_violation(self, x) -> float:
        return float(np.max(self.g_all(x)))

    def eq_residual(self, x) -> float:
        if self.n_C == 0:
            return 0.0
        return float(np.max(np.abs(self.C @ np.asarray(x) - self.d)))

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return self.max_violation(x) <= tol and self.eq_residual(x) <= tol * (1.0 + np.abs(self.d).max(initial=0.0))


class _Compiled:
    """Flattened term arrays for fast batched evaluation."""

    def __init__(self, p: RcpProblem):
        n, m = p.n, p.n_g
        self.A = np.zeros((m, n))
        self.b = np.zeros(m)
        qd, qf, ex = [], [], []
        for i, con in enumerate(p.constraints):
            for t in con.expr.terms:
                if isinstance(t, Affine):
                    self.A[i] += t.a
                    self.b[i] += t.b
                elif isinstance(t, QuadDiag):
                    qd.append((i, t.j, t.q, t.center))
                elif isinstance(t, QuadFull):
                    qf.append((i, t.Q))
                else:
                    ex.append((i, t.j, t.s, t.alpha, t.c0))
        self.qd = np.array(qd, dtype=float).reshape(-1, 4)
        self.qf = qf
        self.ex = np.array(ex, dtype=float).reshape(-1, 5)
        self.m = m
        self.qd_rows = self.qd[:, 0].astype(int)
        self.qd_cols = self.qd[:, 1].astype(int)
        self.ex_rows = self.ex[:, 0].astype(int)
        self.ex_cols = self.ex[:, 1].astype(int)
        self.S_qd = _scatter(self.qd_rows, m)
        self.S_ex = _scatter(self.ex_rows, m)

    def values(self, x):
        v = x @ self.A.T + self.b
        if len(self.qd):
            contrib = self.qd[:, 2] * (x[..., self.qd_cols] - self.qd[:, 3]) ** 2
            v = v + contrib @ self.S_qd
        if len(self.ex):
            contrib = self.ex[:, 2] * np.exp(self.ex[:, 3] * x[..., self.ex_cols] + self.ex[:, 4])
            v = v + contrib @ self.S_ex
        for i, Q in self.qf:
            v[..., i] += np.einsum("...i,ij,...j->...", x, Q, x)
        return v

    def jacobian(self, x):
        J = self.A.copy()
        for i, j, q, c in self.qd:
            J[int(i), int(j)] += 2.0 * q * (x[int(j)] - c)
        for i, j, s, a, c0 in self.ex:
            J[int(i), int(j)] += s * a * np.exp(a * x[int(j)] + c0)
        for i, Q in self.qf:
            J[i] += 2.0 * Q @ x
        return J


def _scatter(rows, m):
    S = np.zeros((len(rows), m))
    S[np.arange(len(rows)), rows] = 1.0
    return S


# ---------------------------------------------------------------------------
# module-level operations


def eval_constraint(p: RcpProblem, i: int, x) -> float:
    return p.constraints[i].expr.value(np.asarray(x, dtype=float))


def grad_constraint(p: RcpProblem, i: int, x) -> np.ndarray:
    return p.constraints[i].expr.grad(np.asarray(x, dtype=float))


def separable_components(p: RcpProblem, i: int) -> SeparableForm | None:
    """Univariate decomposition of g_i, or None when g_i couples variables."""
    return p.constraints[i].expr.separable()


@dataclass
class ValidationReport:
    n: int
    n_g: int
    n_C: int
    rank_C: int
    ok: bool = True
    issues: list[str] = field(default_factory=list)


def validate_problem(p: RcpProblem) -> ValidationReport:
    """Check the standing assumptions; raises on the first violated one."""
    n = p.n
    rank = int(np.linalg.matrix_rank(p.C, tol=_rank_tol(p.C))) if p.n_C else 0
    rep = ValidationReport(n=n, n_g=p.n_g, n_C=p.n_C, rank_C=rank)
    if p.n_C >= n:
        raise RankDeficientC(f"C has {p.n_C} rows for {n} variables")
    if rank < p.n_C:
        raise RankDeficientC(f"rank(C) = {rank} < {p.n_C} rows")
    bad = np.flatnonzero(~(np.isfinite(p.lo) & np.isfinite(p.hi)))
    if bad.size:
        raise UnboundedVariable(f"variable {p.names[bad[0]]} has an infinite bound")
    if np.any(p.lo > p.hi):
        k = int(np.flatnonzero(p.lo > p.hi)[0])
        raise UnboundedVariable(f"variable {p.names[k]} has lo > hi")
    for i, con in enumerate(p.constraints):
        ks = con.expr.nonconcave_terms()
        if ks:
            raise NonConcaveTerm(f"constraint {i} term {ks[0]} ({type(con.expr.terms[ks[0]]).__name__}) is not concave")
    nb = [con.meta.bound for con in p.constraints[p.n_general:]]
    want = [(j, "lower") for j in range(n)] + [(j, "upper") for j in range(n)]
    if nb != want:
        raise ProblemError("bound constraints are not the final 2n constraints in canonical order")
    return rep


def _rank_tol(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    s = np.linalg.svd(M, compute_uv=False)
    return RANK_RTOL * (s[0] if s.size else 0.0)


def matrix_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
