"""Convex subproblems: LPs over the relaxation polytope, reversed-constraint solves, local descent.

Reversing a concave constraint g_i >= 0 gives a convex set, so every subproblem
here is convex.  The conic form handed to Clarabel uses one rotated second-order
cone per reversed quadratic block and one exponential cone per exponential term.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog, minimize, nnls

from .problem import Affine, ExpTerm, QuadDiag, QuadFull, RcpProblem

log = logging.getLogger(__name__)

INFEAS_TOL = 1e-7
FEAS_TOL = 1e-9
OPTIMAL, INFEASIBLE, UNBOUNDED, NUMERICAL = "optimal", "infeasible", "unbounded", "numerical"


@dataclass
class SolveStatus:
    tag: str
    x: np.ndarray | None = None
    obj: float = math.nan
    primal_res: float = math.nan
    gap: float = math.nan
    infeas: float = math.nan  # phase-I optimum when infeasibility was examined
    certificate: dict | None = None
    iv: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.tag == OPTIMAL


@dataclass(eq=False)
class Polytope:
    """{x : A x <= b, lo <= x <= hi}; src[k] is the linear constraint a row copies, or -1."""

    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    src: np.ndarray | None = None

    def __post_init__(self):
        if self.src is None:
            self.src = np.full(len(self.b), -1, dtype=int)

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        n = len(lo)
        return cls(np.zeros((0, n)), np.zeros(0), np.asarray(lo, float).copy(), np.asarray(hi, float).copy())

    def row_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = max(float(np.max(self.lo - x, initial=-np.inf)), float(np.max(x - self.hi, initial=-np.inf)))
        if len(self.b):
            v = max(v, float(np.max((self.A @ x - self.b) / (1.0 + np.abs(self.b)))))
        return v

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.row_violation(x) <= tol


# ---------------------------------------------------------------------------
# LP


def solve_lp(obj, poly: Polytope, C=None, d=None, warm=None) -> SolveStatus:
    """min obj @ x over the polytope and C x = d (HiGHS dual simplex).

    `warm` is accepted for interface symmetry; HiGHS through scipy restarts cold,
    which keeps the result a deterministic function of the data.
    """
    obj = np.asarray(obj, dtype=float)
    n = obj.size
    A_eq = None if C is None or len(C) == 0 else np.asarray(C)
    b_eq = None if A_eq is None else np.asarray(d)
    A_ub = poly.A if len(poly.b) else None
    b_ub = poly.b if len(poly.b) else None
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=np.column_stack([poly.lo, poly.hi]),
                  method="highs-ds")
    if res.status == 0:
        x = res.x
        r = poly.row_violation(x)
        if A_eq is not None:
            r = max(r, float(np.max(np.abs(A_eq @ x - b_eq))))
        return SolveStatus(OPTIMAL, x, float(obj @ x), primal_res=max(r, 0.0), gap=0.0)
    if res.status == 3:
        return SolveStatus(UNBOUNDED)
    if res.status == 2:
        return _lp_phase1(poly, A_eq, b_eq, n)
    return SolveStatus(NUMERICAL)


def _lp_phase1(poly: Polytope, A_eq, b_eq, n) -> SolveStatus:
    """min total slack; a positive optimum plus its duals is a Farkas certificate."""
    m = len(poly.b)
    me = 0 if A_eq is None else len(A_eq)
    nv = n + m + 2 * me
    cost = np.r_[np.zeros(n), np.ones(m + 2 * me)]
    A_ub = np.hstack([poly.A, -np.eye(m), np.zeros((m, 2 * me))]) if m else None
    Ae = None
    if me:
        Ae = np.hstack([A_eq, np.zeros((me, m)), np.eye(me), -np.eye(me)])
    bounds = np.vstack([np.column_stack([poly.lo, poly.hi]), np.column_stack([np.zeros(nv - n), np.full(nv - n, np.inf)])])
    # box conflicts cannot be slacked; report them directly
    if np.any(poly.lo > poly.hi):
        k = int(np.argmax(poly.lo - poly.hi))
        return SolveStatus(INFEASIBLE, infeas=float(poly.lo[k] - poly.hi[k]), certificate={"box": k})
    res = linprog(cost, A_ub=A_ub, b_ub=poly.b if m else None, A_eq=Ae, b_eq=b_eq, bounds=bounds, method="highs-ds")
    if res.status != 0:
        return SolveStatus(NUMERICAL)
    w = float(res.fun)
    if w <= INFEAS_TOL:
        return SolveStatus(NUMERICAL, infeas=w)
    y = -res.ineqlin.marginals if m else np.zeros(0)
    z = -res.eqlin.marginals if me else np.zeros(0)
    u = -res.upper.marginals[:n]
    v = res.lower.marginals[:n]
    return SolveStatus(INFEASIBLE, infeas=w, certificate={"y": y, "z": z, "u": u, "v": v})


def farkas_check(cert: dict, poly: Polytope, C=None, d=None) -> tuple[float, float]:
    """(stationarity residual, certificate value); value < 0 proves infeasibility."""
    y, z, u, v = cert["y"], cert["z"], cert["u"], cert["v"]
    r = u - v
    val = float(poly.hi[u > 0] @ u[u > 0] - poly.lo[v > 0] @ v[v > 0])
    if len(y):
        r = r + poly.A.T @ y
        val += float(poly.b @ y)
    if len(z):
        r = r + np.asarray(C).T @ z
        val += float(np.asarray(d) @ z)
    return float(np.max(np.abs(r), initial=0.0)), val


# ---------------------------------------------------------------------------
# conic assembly for reversed constraints


@dataclass
class _Block:
    a: np.ndarray  # linear part of g
    b: float
    F: np.ndarray  # rows of the convex quadratic -quad(g) = ||F x - f||^2
    f: np.ndarray
    exps: list  # (j, alpha, c0 + log|s|)


def _blocks(p: RcpProblem) -> list[_Block]:
    cache = p.__dict__.get("_conic_blocks")
    if cache is not None:
        return cache
    n = p.n
    out = []
    for con in p.constraints:
        a, b = np.zeros(n), 0.0
        Frows, f, exps = [], [], []
        for t in con.expr.terms:
            if isinstance(t, Affine):
                a += t.a
                b += t.b
            elif isinstance(t, QuadDiag):
                if t.q < 0:
                    r = np.zeros(n)
                    r[t.j] = math.sqrt(-t.q)
                    Frows.append(r)
                    f.append(math.sqrt(-t.q) * t.center)
            elif isinstance(t, QuadFull):
                lam, V = np.linalg.eigh(-t.Q)
                for k in range(n):
                    if lam[k] > 1e-12 * max(1.0, lam.max()):
                        Frows.append(math.sqrt(lam[k]) * V[:, k])
                        f.append(0.0)
            elif isinstance(t, ExpTerm):
                if t.s < 0:
                    exps.append((t.j, t.alpha, t.c0 + math.log(-t.s)))
        F = np.array(Frows).reshape(-1, n)
        out.append(_Block(a, b, F, np.array(f), exps))
    object.__setattr__(p, "_conic_blocks", out)
    return out


_SETTINGS = None


def _settings():
    global _SETTINGS
    if _SETTINGS is None:
        s = clarabel.DefaultSettings()
        s.verbose = False
        s.tol_gap_abs = 1e-9
        s.tol_gap_rel = 1e-9
        s.tol_feas = 1e-9
        s.max_iter = 200
        _SETTINGS = s
    return _SETTINGS


class _Conic:
    """Accumulates rows of A z + s = b, s in K, grouped by cone type."""

    def __init__(self, nz: int):
        self.nz = nz
        self.zero: list[tuple[np.ndarray, float]] = []
        self.nonneg: list[tuple[np.ndarray, float]] = []
        self.soc: list[tuple[np.ndarray, np.ndarray]] = []
        self.exp: list[tuple[np.ndarray, np.ndarray]] = []

    def assemble(self, phase1: bool = False):
        """Return (A, b, cones).  With phase1, one extra variable sigma relaxes every row."""
        nz = self.nz + (1 if phase1 else 0)
        rows, rhs, cones = [], [], []

        def pad(r):
            return np.r_[r, 0.0] if phase1 else r

        if self.zero:
            if phase1:
                # |row| <= sigma written as two nonneg rows
                for r, v in self.zero:
                    rows += [np.r_[r, -1.0], np.r_[-r, -1.0]]
                    rhs += [v, -v]
                cones.append(clarabel.NonnegativeConeT(2 * len(self.zero)))
            else:
                rows += [r for r, _ in self.zero]
                rhs += [v for _, v in self.zero]
                cones.append(clarabel.ZeroConeT(len(self.zero)))
        nn = list(self.nonneg)
        if phase1:
            e = np.zeros(nz)
            e[-1] = -1.0
            rows.append(e)
            rhs.append(1.0)  # sigma >= -1
        for r, v in nn:
            rows.append(np.r_[r, -1.0] if phase1 else r)
            rhs.append(v)
        cnt = len(nn) + (1 if phase1 else 0)
        if cnt:
            cones.append(clarabel.NonnegativeConeT(cnt))
        for Ab, bb in self.soc:
            rows += [pad(r) for r in Ab]
            rhs += list(bb)
            cones.append(clarabel.SecondOrderConeT(len(bb)))
        for Ab, bb in self.exp:
            rows += [pad(r) for r in Ab]
            rhs += list(bb)
            cones.append(clarabel.ExponentialConeT())
        A = np.array(rows).reshape(-1, nz)
        return sp.csc_matrix(A), np.array(rhs, dtype=float), cones


def _reversed_problem(p: RcpProblem, subset, poly: Polytope, C, d):
    """Build the conic model of {g_i >= 0, i in subset} with the polytope and equalities.

    Returns (builder, n_aux, fixed) or an INFEASIBLE/NUMERICAL status when bound
    reversals contradict the box.
    """
    n = p.n
    blocks = _blocks(p)
    lo, hi = poly.lo.copy(), poly.hi.copy()
    fixed: dict[int, float] = {}
    nonlin, lin_eq, lin_ge = [], [], []
    for i in subset:
        meta = p.constraints[i].meta
        if meta.bound is not None:
            j, side = meta.bound
            val = p.lo[j] if side == "lower" else p.hi[j]
            # reversed bound: x_j <= lo_j (lower) or x_j >= hi_j (upper)
            conflict = (lo[j] - val) if side == "lower" else (val - hi[j])
            if j in fixed and abs(fixed[j] - val) > 0:
                conflict = max(conflict, abs(fixed[j] - val))
            if conflict > INFEAS_TOL:
                return SolveStatus(INFEASIBLE, infeas=float(conflict), certificate={"bound": i})
            if conflict > FEAS_TOL:
                return SolveStatus(NUMERICAL, infeas=float(conflict))
            fixed[j] = val
        elif meta.is_linear:
            lin_eq.append(i) if _has_row(poly, i) else lin_ge.append(i)
        else:
            nonlin.append(i)
    free_box = [j for j in range(n) if j not in fixed]
    naux = 0
    layout = []
    for i in nonlin:
        blk = blocks[i]
        r_idx = None
        if len(blk.F):
            r_idx = n + naux
            naux += 1
        w_idx = list(range(n + naux, n + naux + len(blk.exps)))
        naux += len(blk.exps)
        layout.append((i, r_idx, w_idx))
    nz = n + naux
    B = _Conic(nz)
    for j, v in fixed.items():
        e = np.zeros(nz)
        e[j] = 1.0
        B.zero.append((e, v))
    for k in range(len(C)):
        B.zero.append((np.r_[C[k], np.zeros(naux)], float(d[k])))
    for i in lin_eq:
        B.zero.append((np.r_[blocks[i].a, np.zeros(naux)], -blocks[i].b))
    for i in lin_ge:
        B.nonneg.append((np.r_[-blocks[i].a, np.zeros(naux)], blocks[i].b))
    drop = set(lin_eq)
    for k in range(len(poly.b)):
        if poly.src[k] in drop:
            continue
        B.nonneg.append((np.r_[poly.A[k], np.zeros(naux)], float(poly.b[k])))
    for j in free_box:
        e = np.zeros(nz)
        e[j] = 1.0
        if np.isfinite(hi[j]):
            B.nonneg.append((e.copy(), float(hi[j])))
        if np.isfinite(lo[j]):
            B.nonneg.append((-e, float(-lo[j])))
    for i, r_idx, w_idx in layout:
        blk = blocks[i]
        # r + sum w - a x - b <= 0
        row = np.zeros(nz)
        row[:n] = -blk.a
        if r_idx is not None:
            row[r_idx] = 1.0
        for w in w_idx:
            row[w] = 1.0
        B.nonneg.append((row, blk.b))
        if r_idx is not None:
            k = len(blk.F)
            Ab = np.zeros((k + 2, nz))
            bb = np.zeros(k + 2)
            Ab[0, r_idx], bb[0] = -1.0, 1.0
            Ab[1, r_idx], bb[1] = -1.0, -1.0
            Ab[2:, :n] = -2.0 * blk.F
            bb[2:] = -2.0 * blk.f
            B.soc.append((Ab, bb))
        for (j, alpha, c), w in zip(blk.exps, w_idx):
            Ab = np.zeros((3, nz))
            Ab[0, j] = -alpha
            Ab[2, w] = -1.0
            B.exp.append((Ab, np.array([c, 1.0, 0.0])))
    return B, naux


def _has_row(poly: Polytope, i: int) -> bool:
    return bool(np.any(poly.src == i))


def _conic_solve(B: _Conic, cost: np.ndarray):
    A, b, cones = B.assemble()
    P = sp.csc_matrix((B.nz, B.nz))
    q = np.r_[cost, np.zeros(B.nz - len(cost))]
    sol = clarabel.DefaultSolver(P, q, A, b, cones, _settings()).solve()
    return sol, A, b


def _phase1(B: _Conic) -> float | None:
    A, b, cones = B.assemble(phase1=True)
    nz = B.nz + 1
    q = np.zeros(nz)
    q[-1] = 1.0
    sol = clarabel.DefaultSolver(sp.csc_matrix((nz, nz)), q, A, b, cones, _settings()).solve()
    if str(sol.status) not in ("Solved", "AlmostSolved"):
        return None
    return float(sol.x[-1])


def _convex_solve(p: RcpProblem, subset, poly: Polytope, C, d, sign: float) -> SolveStatus:
    built = _reversed_problem(p, subset, poly, C, d)
    if isinstance(built, SolveStatus):
        return built
    B, naux = built
    sol, A, b = _conic_solve(B, sign * p.c)
    status = str(sol.status)
    if status == "Solved":
        z = np.asarray(sol.x)
        x = z[: p.n]
        res = _reversed_residual(p, subset, poly, C, d, x)
        if res <= 1e-7:
            return SolveStatus(OPTIMAL, x, float(p.c @ x), primal_res=res, gap=abs(sol.obj_val - sol.obj_val_dual))
        log.debug("conic solve returned residual %.2e; checking feasibility", res)
    sigma = _phase1(B)
    if sigma is None:
        return SolveStatus(NUMERICAL)
    if sigma > INFEAS_TOL:
        return SolveStatus(INFEASIBLE, infeas=sigma, certificate={"phase1": sigma})
    return SolveStatus(NUMERICAL, infeas=sigma)


def _reversed_residual(p: RcpProblem, subset, poly: Polytope, C, d, x) -> float:
    g = p.g_all(x)
    blocks = _blocks(p)
    r = 0.0
    for i in subset:
        blk = blocks[i]
        # scale by the size of the terms so large-magnitude constraints are judged relatively
        scale = 1.0 + abs(float(blk.a @ x)) + abs(blk.b)
        if len(blk.F):
            scale += float(np.sum((blk.F @ x - blk.f) ** 2))
        scale += sum(math.exp(alpha * x[j] + c) for j, alpha, c in blk.exps)
        r = max(r, -float(g[i]) / scale)
    r = max(r, poly.row_violation(x))
    if len(C):
        r = max(r, float(np.max(np.abs(C @ x - d))) / (1.0 + float(np.abs(d).max())))
    return r


def solve_subset_min(p: RcpProblem, subset, poly: Polytope, iv_tol: float = 1e-9) -> SolveStatus:
    """min c x s.t. g_i(x) >= 0 for i in subset, C x = d, x in the polytope."""
    subset = sorted(int(i) for i in subset)
    if not subset:
        st = solve_lp(p.c, poly, p.C, p.d)
    else:
        st = _convex_solve(p, subset, poly, p.C, p.d, 1.0)
    if st.ok:
        st.iv = [int(i) for i in np.flatnonzero(p.g_all(st.x) >= -iv_tol)]
    return st


def solve_reverse_max(p: RcpProblem, active, guard: Polytope | None = None) -> SolveStatus:
    """max c x s.t. g_i(x) >= 0 for i in active, C x = d, inside the guard box."""
    guard = Polytope.box(p.lo, p.hi) if guard is None else guard
    active = sorted(int(i) for i in active)
    st = _convex_solve(p, active, guard, p.C, p.d, -1.0)
    return st


# ---------------------------------------------------------------------------
# local descent


def _general_rows(p: RcpProblem) -> np.ndarray:
    return np.arange(p.n_general)


def _feasible_tol(p: RcpProblem, x, tol: float) -> bool:
    return p.max_violation(x) <= tol and p.eq_residual(x) <= tol * (1 + np.abs(p.d).max(initial=0.0))


def linearized_descent(p: RcpProblem, x0, tol: float = 1e-8, maxiter: int = 50) -> np.ndarray:
    """Successive LPs over the constraints linearized at the current point.

    A tangent plane of a concave g_i lies above g_i, so each LP region sits
    inside the feasible set and every iterate stays feasible while the cost
    never increases.
    """
    x = np.asarray(x0, dtype=float)
    rows = _general_rows(p)
    bounds = np.column_stack([p.lo, p.hi])
    A_eq = p.C if p.n_C else None
    b_eq = p.d if p.n_C else None
    for _ in range(maxiter):
        J = p.jacobian(x)[rows]
        g = p.g_all(x)[rows]
        res = linprog(p.c, A_ub=J if len(rows) else None, b_ub=J @ x - g if len(rows) else None,
                      A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs-ds")
        if res.status != 0:
            break
        y = np.clip(res.x, p.lo, p.hi)
        if not _feasible_tol(p, y, tol) or p.c @ y >= p.c @ x - 1e-12 * (1.0 + abs(p.c @ x)):
            break
        x = y
    return x


def local_min_rcp(p: RcpProblem, x0, tol: float = 1e-8, maxiter: int = 300) -> np.ndarray:
    """Linearized descent then SQP from a feasible x0; returns x0 when no feasible improvement is found."""
    x0 = np.asarray(x0, dtype=float)
    if _feasible_tol(p, x0, tol):
        x0 = linearized_descent(p, x0, tol)
    rows = _general_rows(p)
    comp = p.compiled
    cons = []
    if len(rows):
        cons.append({"type": "ineq", "fun": lambda x: -comp.values(x)[rows], "jac": lambda x: -comp.jacobian(x)[rows]})
    if p.n_C:
        cons.append({"type": "eq", "fun": lambda x: p.C @ x - p.d, "jac": lambda x: p.C})
    bounds = list(zip(p.lo, p.hi))
    best = x0
    start = x0
    for ftol in (1e-12, 1e-14):
        try:
            res = minimize(lambda x: p.c @ x, start, jac=lambda x: p.c, method="SLSQP", bounds=bounds,
                           constraints=cons, options={"ftol": ftol, "maxiter": maxiter})
        except (ValueError, np.linalg.LinAlgError):
            break
        x = np.clip(res.x, p.lo, p.hi)
        feas = _feasible_tol(p, x, tol)
        if feas and p.c @ x <= p.c @ best + 1e-9:
            return x
        start = x
    return best


def kkt_residual(p: RcpProblem, x, act_tol: float = 1e-6) -> float:
    """Stationarity residual min ||c + J_A^T lam + C^T mu||, lam >= 0 over near-active constraints."""
    x = np.asarray(x, dtype=float)
    g = p.g_all(x)
    act = np.flatnonzero(g >= -act_tol)
    J = p.jacobian(x)[act]
    cols = [J.T]
    if p.n_C:
        cols += [p.C.T, -p.C.T]
    M = np.hstack(cols) if cols else np.zeros((p.n, 0))
    if M.shape[1] == 0:
        return float(np.linalg.norm(p.c))
    _, r = nnls(M, -p.c)
    return float(r)


def polish_active(p: RcpProblem, x, active, max_iter: int = 30) -> np.ndarray:
    """Newton iterations on g_i(x) = 0 (i in active) and C x = d.

    Used to clean up conic solutions of reverse problems, whose accuracy is
    limited by the interior-point tolerances.  Returns x unchanged when the
    system is not square and regular near x or the iteration wanders off.
    """
    x = np.asarray(x, dtype=float)
    active = sorted(int(i) for i in active)
    if len(active) + p.n_C != p.n:
        return x
    y = x.copy()
    for _ in range(max_iter):
        r = np.r_[p.g_all(y)[active], p.C @ y - p.d]
        if np.max(np.abs(r), initial=0.0) <= 1e-13 * (1.0 + np.abs(y).max()):
            break
        J = np.vstack([p.jacobian(y)[active], p.C])
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return x
        y = y + step
    r = np.r_[p.g_all(y)[active], p.C @ y - p.d]
    if np.max(np.abs(r), initial=0.0) > 1e-10 * (1.0 + np.abs(y).max()):
        return x
    if np.max(np.abs(y - x)) > 1e-4 * (1.0 + np.abs(x).max()):
        return x
    return y
