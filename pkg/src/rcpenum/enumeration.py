"""Active-set enumeration for reverse-convex programs.

The search builds candidate active sets one constraint at a time.  A node is a
bitmask over the n_g constraints; children append one constraint with a larger
index.  Nodes are fathomed when a row of the fathoming basis F is contained in
them, skipped (without a solve) when they are contained in a row of the
validation basis V, and otherwise checked by minimizing the cost with the
node's constraints reversed over the relaxation polytope.  Full-cardinality
nodes are resolved by the reverse problem.

The relaxation polytope holds the linear constraints, linear underestimators of
the concave constraints over the current reduced box, and a cost cutting plane
from the best known feasible point.  Domain reduction shrinks the box by
minimizing and maximizing each coordinate over the polytope.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import itertools
import logging
import math
import time
from typing import Callable

import numpy as np

from .approximation import lower_hull
from .convex import (
    Polytope,
    SolveStatus,
    local_min_rcp,
    polish_active,
    solve_lp,
    solve_reverse_max,
    solve_subset_min,
)
from .problem import Affine, ConcaveExpr, ExpTerm, QuadDiag, QuadFull, RcpProblem, matrix_rank, validate_problem

log = logging.getLogger(__name__)


class InfeasibleRelaxation(RuntimeError):
    """The relaxation polytope is empty, so the problem has no feasible point."""


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class BinaryMask:
    bits: int
    width: int

    @classmethod
    def of(cls, indices, width: int) -> "BinaryMask":
        b = 0
        for i in indices:
            if not 0 <= i < width:
                raise IndexError(i)
            b |= 1 << int(i)
        return cls(b, width)

    @property
    def indices(self) -> list[int]:
        return bit_indices(self.bits)

    def count(self) -> int:
        return bin(self.bits).count("1")

    def subset_of(self, other: "BinaryMask") -> bool:
        """self <=_B other: every unit entry of self is a unit entry of other."""
        return self.bits & ~other.bits == 0

    def with_bit(self, k: int) -> "BinaryMask":
        return BinaryMask(self.bits | (1 << k), self.width)

    def __str__(self) -> str:
        return "".join("1" if self.bits >> i & 1 else "0" for i in range(self.width))


def bit_indices(b: int) -> list[int]:
    out = []
    while b:
        low = b & -b
        out.append(low.bit_length() - 1)
        b ^= low
    return out


def _popcount(b: int) -> int:
    return bin(b).count("1")


class MaskBasis:
    """A list of masks with exact span (row <= s) and membership (s <= row) queries.

    Rows are bucketed by their highest set bit, so a span query only inspects
    rows whose top bit is set in the query mask.  Optional companion points
    are kept for validation bases.
    """

    def __init__(self, width: int):
        self.width = width
        self._rows: list[int] = []
        self._points: list[np.ndarray | None] = []
        self._alive: list[bool] = []
        self._by_top: dict[int, list[int]] = {}
        self._set: set[int] = set()
        self.singletons: set[int] = set()

    def __len__(self) -> int:
        return len(self._set)

    def add(self, mask: int, point=None) -> bool:
        if mask in self._set:
            return False
        k = len(self._rows)
        self._rows.append(mask)
        self._points.append(None if point is None else np.asarray(point, dtype=float))
        self._alive.append(True)
        self._by_top.setdefault(mask.bit_length() - 1, []).append(k)
        self._set.add(mask)
        if mask and mask & (mask - 1) == 0:
            self.singletons.add(mask.bit_length() - 1)
        return True

    def _drop(self, k: int):
        if self._alive[k]:
            self._alive[k] = False
            self._set.discard(self._rows[k])
            self._points[k] = None
            m = self._rows[k]
            if m and m & (m - 1) == 0:
                self.singletons.discard(m.bit_length() - 1)

    def spans(self, s: int) -> bool:
        """True when some row r satisfies r <=_B s."""
        b = s
        while b:
            top = b.bit_length() - 1
            for k in self._by_top.get(top, ()):
                if self._alive[k] and self._rows[k] & ~s == 0:
                    return True
            b ^= 1 << top
        return False

    def contains(self, s: int) -> bool:
        """True when s <=_B some row."""
        for k, r in enumerate(self._rows):
            if self._alive[k] and s & ~r == 0:
                return True
        return False

    def prune_dominated(self, v: int):
        """Drop rows r with r <=_B v."""
        for k, r in enumerate(self._rows):
            if self._alive[k] and r & ~v == 0:
                self._drop(k)

    def drop_where(self, pred: Callable[[np.ndarray], bool]):
        for k in range(len(self._rows)):
            if self._alive[k] and self._points[k] is not None and pred(self._points[k]):
                self._drop(k)

    def rows(self) -> list[BinaryMask]:
        return [BinaryMask(r, self.width) for k, r in enumerate(self._rows) if self._alive[k]]

    def points(self) -> list[np.ndarray]:
        return [p for k, p in enumerate(self._points) if self._alive[k]]


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class Config:
    eps: float = 1e-3
    eps_g: float = 1e-6
    eps_x: float = 1e-4
    M: int = 100
    U: int = 10**6
    n_trigger: int = 50
    seed: int = 0
    delta_cut: float = 1e-7
    all_minima: bool = False
    trace: bool = False
    reduce_iter: int = 50
    node_limit: int | None = None
    observer: Callable[[str, "EngineState"], None] | None = None

    def __post_init__(self):
        for name in ("eps", "eps_g", "eps_x", "delta_cut"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.M < 0 or self.U < 0:
            raise ValueError("M and U must be nonnegative")


@dataclass
class TreeRecord:
    mask: int
    depth: int
    action: str
    s_low: float = math.nan


@dataclass
class EngineState:
    p: RcpProblem
    cfg: Config
    F: MaskBasis
    V: MaskBasis
    S: deque = field(default_factory=deque)
    lo_C: np.ndarray | None = None
    hi_C: np.ndarray | None = None
    X_C: np.ndarray | None = None  # (2n, n): minimizer then maximizer of each coordinate
    x_up: np.ndarray | None = None
    up_feasible: bool = False
    x_low: np.ndarray | None = None
    counters: dict = field(default_factory=lambda: {"convex": 0, "lp_reduce": 0, "lp_relax": 0, "local": 0})
    trigger: int = 0
    rng: np.random.Generator | None = None
    poly: Polytope | None = None
    candidates: list = field(default_factory=list)
    tree: list = field(default_factory=list)
    mand_groups: list = field(default_factory=list)
    linear_idx: np.ndarray | None = None
    lin_rows: np.ndarray | None = None
    full: int = 0

    @property
    def cut_value(self) -> float | None:
        if self.x_up is None or not self.up_feasible:
            return None
        return float(self.p.c @ self.x_up) + self.cfg.delta_cut

    def notify(self, event: str):
        if self.cfg.observer is not None:
            self.cfg.observer(event, self)


@dataclass
class SolveReport:
    status: str  # "optimal", "infeasible" or "node_limit"
    criterion: str | None
    x: np.ndarray | None
    cost: float
    candidates: list[np.ndarray]
    candidate_costs: list[float]
    minimal: list[bool]
    counters: dict
    x_up: np.ndarray | None
    x_low: np.ndarray | None
    relaxation_bound: float  # c @ x_low, the last relaxation minimum
    fathoming: list[BinaryMask]
    tree: list[TreeRecord]
    box: tuple[np.ndarray, np.ndarray] | None
    elapsed: float
    nodes: int = 0
    trace: list[str] = field(default_factory=list)

    @property
    def minima(self) -> list[np.ndarray]:
        return [x for x, m in zip(self.candidates, self.minimal) if m]

    @property
    def lp_label(self) -> str:
        return f"{self.counters['lp_reduce']} + {self.counters['lp_relax']}"

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else [float(t) for t in v]

        return {
            "status": self.status,
            "criterion": self.criterion,
            "x": arr(self.x),
            "cost": self.cost,
            "relaxation_bound": self.relaxation_bound,
            "candidates": [
                {"x": arr(x), "cost": c, "minimal": m}
                for x, c, m in zip(self.candidates, self.candidate_costs, self.minimal)
            ],
            "counters": dict(self.counters),
            "nodes": self.nodes,
            "fathoming_rows": len(self.fathoming),
            "elapsed": self.elapsed,
        }


# ---------------------------------------------------------------------------
# innate fathoming


def _linear_rows(p: RcpProblem) -> tuple[np.ndarray, np.ndarray]:
    idx = np.array([i for i, con in enumerate(p.constraints) if con.meta.is_linear], dtype=int)
    rows = np.array([con.expr.linear_part(p.n)[0] for con in (p.constraints[i] for i in idx)]).reshape(-1, p.n)
    return idx, rows


def _crossings(b1, b2, lo: float, hi: float) -> list[float] | None:
    """Points in [lo, hi] where two quadratics agree; None when they coincide."""
    d2, d1, d0 = b1[0] - b2[0], b1[1] - b2[1], b1[2] - b2[2]
    scale = 1.0 + max(abs(v) for v in (*b1, *b2))
    if abs(d2) <= 1e-14 * scale:
        if abs(d1) <= 1e-14 * scale:
            return None if abs(d0) <= 1e-14 * scale else []
        roots = [-d0 / d1]
    else:
        disc = d1 * d1 - 4 * d2 * d0
        if disc < 0:
            return []
        r = math.sqrt(disc)
        roots = [(-d1 - r) / (2 * d2), (-d1 + r) / (2 * d2)]
    tol = 1e-12 * (1.0 + abs(lo) + abs(hi))
    return [x for x in roots if lo - tol <= x <= hi + tol]


def _pair_fathomable(beta: np.ndarray, k: int, l: int, lo: float, hi: float) -> bool:
    xs = _crossings(beta[k], beta[l], lo, hi)
    if xs is None:
        return False
    for x in xs:
        vals = beta[:, 0] * x * x + beta[:, 1] * x + beta[:, 2]
        others = np.delete(vals, [k, l])
        gap = others.max(initial=-np.inf) - vals[k]
        if not gap > 1e-10 * (1.0 + abs(vals[k])):
            return False
    return True


def innate_fathoming_init(p: RcpProblem) -> MaskBasis:
    """Fathoming rows known before any solve: bound pairs, dependent linear pairs,
    non-adjacent or dominated pieces, and cross pairs of strict split sides."""
    F = MaskBasis(p.n_g)
    n, ng = p.n, p.n_general
    for j in range(n):
        F.add((1 << (ng + j)) | (1 << (ng + n + j)))
    idx, rows = _linear_rows(p)
    for a, b in itertools.combinations(range(len(idx)), 2):
        M = np.vstack([p.C, rows[a], rows[b]])
        if matrix_rank(M) < p.n_C + 2:
            F.add((1 << int(idx[a])) | (1 << int(idx[b])))
    for g in p.groups:
        members = sorted(p.group_members(g.gid), key=lambda i: p.constraints[i].meta.piece.index)
        beta = g.beta
        lo, hi = float(g.breaks[0]), float(g.breaks[-1])
        for i in members:
            k = p.constraints[i].meta.piece.index
            a, b = g.breaks[k], g.breaks[k + 1]
            if not b > a:
                F.add(1 << i)
        for i, j in itertools.combinations(members, 2):
            k, l = p.constraints[i].meta.piece.index, p.constraints[j].meta.piece.index
            if abs(k - l) >= 2 and _pair_fathomable(beta, k, l, lo, hi):
                F.add((1 << i) | (1 << j))
    sides: dict[int, dict[int, list[int]]] = {}
    for i, con in enumerate(p.constraints):
        sp = con.meta.split
        if sp is not None:
            sides.setdefault(sp.pair, {}).setdefault(sp.side, []).append(i)
    for pair in sides.values():
        for i in pair.get(1, []):
            for j in pair.get(-1, []):
                F.add((1 << i) | (1 << j))
    return F


def _dependent_linear(st: EngineState, mask: int) -> bool:
    idx = [i for i in bit_indices(mask) if st.p.constraints[i].meta.is_linear]
    if len(idx) < 2 and st.p.n_C == 0:
        return False
    if not idx:
        return False
    pos = np.searchsorted(st.linear_idx, idx)
    M = np.vstack([st.p.C, st.lin_rows[pos]])
    return matrix_rank(M) < st.p.n_C + len(idx)


# ---------------------------------------------------------------------------
# relaxation polytope


def linear_underestimator(expr: ConcaveExpr, lo, hi) -> tuple[np.ndarray, float]:
    """(a, b) with a @ x + b <= expr(x) on the box: the sum of per-term chords.

    Full quadratic forms are split along their eigenvectors, which makes each
    part a concave function of a single linear coordinate.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    a, b = np.zeros(n), 0.0
    for t in expr.terms:
        if isinstance(t, Affine):
            a += t.a
            b += t.b
        elif isinstance(t, QuadDiag):
            l, h = lo[t.j], hi[t.j]
            s = t.q * (l + h - 2.0 * t.center)
            a[t.j] += s
            b += t.q * (l - t.center) ** 2 - s * l
        elif isinstance(t, ExpTerm):
            l, h = lo[t.j], hi[t.j]
            fl, fh = t.s * math.exp(t.alpha * l + t.c0), t.s * math.exp(t.alpha * h + t.c0)
            s = (fh - fl) / (h - l) if h > l else t.s * t.alpha * math.exp(t.alpha * l + t.c0)
            a[t.j] += s
            b += fl - s * l
        elif isinstance(t, QuadFull):
            w, vecs = np.linalg.eigh(t.Q)
            tol = 1e-12 * max(1.0, float(np.abs(w).max(initial=0.0)))
            for lam, v in zip(w, vecs.T):
                if lam >= -tol:
                    continue
                ul = float(np.sum(np.minimum(v * lo, v * hi)))
                uh = float(np.sum(np.maximum(v * lo, v * hi)))
                a += lam * (ul + uh) * v
                b += -lam * ul * uh
        else:
            raise TypeError(f"unsupported term {type(t).__name__}")
    return a, b


def build_underestimators(p: RcpProblem, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Rows A x <= b valid for every feasible point inside the box [lo, hi]."""
    A, b = [], []
    grouped = set()
    for g in p.groups:
        grouped.update(p.group_members(g.gid))
        v = g.var
        l, h = max(lo[v], g.breaks[0]), min(hi[v], g.breaks[-1])
        ra, rb = linear_underestimator(g.rest, lo, hi)
        if h > l:
            inner = g.breaks[(g.breaks > l) & (g.breaks < h)]
            xs = np.concatenate([[l], inner, [h]])
            pts = np.column_stack([xs, g.piece_values(xs).max(axis=-1)])
            hull = lower_hull(pts)
            for (x0, y0), (x1, y1) in zip(hull[:-1], hull[1:]):
                s = (y1 - y0) / (x1 - x0)
                row = ra.copy()
                row[v] += s
                A.append(row)
                b.append(-(rb + y0 - s * x0))
        else:
            A.append(ra)
            b.append(-(rb + float(g.piece_values(l).max())))
    for i in range(p.n_general):
        con = p.constraints[i]
        if con.meta.is_linear or i in grouped:
            continue
        a, c0 = linear_underestimator(con.expr, lo, hi)
        A.append(a)
        b.append(-c0)
    return np.array(A).reshape(-1, p.n), np.array(b, dtype=float)


def build_relaxation(st: EngineState) -> Polytope:
    p = st.p
    rows, rhs, src = [], [], []
    for i in range(p.n_general):
        con = p.constraints[i]
        if con.meta.is_linear:
            a, b0 = con.expr.linear_part(p.n)
            rows.append(a)
            rhs.append(-b0)
            src.append(i)
    Au, bu = build_underestimators(p, st.lo_C, st.hi_C)
    rows += list(Au)
    rhs += list(bu)
    src += [-1] * len(bu)
    cut = st.cut_value
    if cut is not None:
        rows.append(p.c.copy())
        rhs.append(cut)
        src.append(-1)
    A = np.array(rows).reshape(-1, p.n)
    poly = Polytope(A, np.array(rhs, dtype=float), st.lo_C.copy(), st.hi_C.copy(), np.array(src, dtype=int))
    st.poly = poly
    return poly


def _in_C(st: EngineState, x, tol: float = 1e-9) -> bool:
    if not st.poly.contains(x, tol):
        return False
    if st.p.n_C:
        return st.p.eq_residual(x) <= tol * (1.0 + float(np.abs(st.p.d).max()))
    return True


# ---------------------------------------------------------------------------
# fathoming by bound combinations


def fathom_bounds(st: EngineState, cfg: Config) -> int:
    """Breadth-first search over combinations of active bounds; returns rows added."""
    p, poly = st.p, st.poly
    n, ng = p.n, p.n_general
    A = poly.A
    b = poly.b
    if p.n_C:
        A = np.vstack([A, p.C, -p.C])
        b = np.r_[b, p.d, -p.d]
    if len(b) == 0:
        return 0
    lo_C, hi_C = st.lo_C, st.hi_C
    amin = np.minimum(A * lo_C, A * hi_C)
    base = amin.sum(axis=1)
    at_lo = A * p.lo
    at_hi = A * p.hi
    tol = 1e-9 * (1.0 + np.abs(b))
    added = 0
    B = deque([(0, 0)])
    while B:
        low, up = B.popleft()
        used = low | up
        start = used.bit_length()
        for k in range(start, n):
            for lw, uw in ((low | (1 << k), up), (low, up | (1 << k))):
                mask = (lw << ng) | (uw << (ng + n))
                if st.F.spans(mask):
                    continue
                fl, fu = bit_indices(lw), bit_indices(uw)
                fixed = fl + fu
                val = base - amin[:, fixed].sum(axis=1) + at_lo[:, fl].sum(axis=1) + at_hi[:, fu].sum(axis=1)
                if np.any(val > b + tol):
                    st.F.add(mask)
                    added += 1
                else:
                    B.append((lw, uw))
        if len(B) > cfg.M:
            break
    return added


# ---------------------------------------------------------------------------
# fathoming separable constraints


def fathom_separable(st: EngineState) -> int:
    """Fathom constraints that cannot reach zero anywhere on the reduced box."""
    p = st.p
    added = 0
    for i in range(p.n_g):
        if (1 << i) in st.F._set:
            continue
        sep = p.constraints[i].expr.separable()
        if sep is None:
            continue
        top = sep.const
        for j, u in sep.parts:
            top += u.max_on(st.lo_C[j], st.hi_C[j])
        if top < -1e-7 * (1.0 + abs(sep.const)):
            st.F.add(1 << i)
            added += 1
    return added


# ---------------------------------------------------------------------------
# domain reduction


def _shortcut(st: EngineState, i: int, sign: float, x_old: np.ndarray) -> np.ndarray | None:
    """Project the stale point onto the most violated rows and certify optimality."""
    p, poly = st.p, st.poly
    n = p.n
    eye = np.eye(n)
    A = np.vstack([poly.A, eye, -eye])
    b = np.r_[poly.b, poly.hi, -poly.lo]
    order = np.argsort(-(A @ x_old - b), kind="stable")
    k = n - p.n_C
    while k <= len(b):
        top = order[:k]
        Ae = np.vstack([p.C, A[top]])
        if matrix_rank(Ae) >= n:
            break
        k += 1
    else:
        return None
    be = np.r_[p.d, b[top]]
    x = np.linalg.pinv(Ae) @ be
    if not _in_C(st, x):
        return None
    obj = sign * eye[i]
    M = np.vstack([A[top], p.C]).T
    mult, *_ = np.linalg.lstsq(M, -obj, rcond=None)
    if np.linalg.norm(M @ mult + obj) > 1e-9:
        return None
    lam = mult[:k]
    if np.any(lam < -1e-9):
        return None
    act = np.abs(A[top] @ x - b[top]) <= 1e-9 * (1.0 + np.abs(b[top]))
    if np.any((np.abs(lam) > 1e-12) & ~act):
        return None
    return x


def domain_reduce(st: EngineState, cfg: Config) -> int:
    """Shrink the reduced box until the bound-attaining points settle; returns LPs solved."""
    p = st.p
    n = p.n
    solved = 0
    build_relaxation(st)
    for _ in range(max(1, cfg.reduce_iter)):
        X0 = None if st.X_C is None else st.X_C.copy()
        X = np.empty((2 * n, n))
        for i in range(n):
            for side, sign in ((0, 1.0), (1, -1.0)):
                x_old = None if X0 is None else X0[side * n + i]
                x = None
                if x_old is not None and _in_C(st, x_old):
                    x = x_old
                elif x_old is not None:
                    x = _shortcut(st, i, sign, x_old)
                if x is None:
                    obj = np.zeros(n)
                    obj[i] = sign
                    res = solve_lp(obj, st.poly, p.C, p.d)
                    solved += 1
                    if res.tag == "infeasible":
                        raise InfeasibleRelaxation("the relaxation polytope is empty")
                    if not res.ok:
                        x = np.clip(x_old if x_old is not None else (st.lo_C + st.hi_C) / 2, st.lo_C, st.hi_C)
                        x = x.copy()
                        x[i] = st.lo_C[i] if sign > 0 else st.hi_C[i]
                    else:
                        x = res.x
                X[side * n + i] = x
        new_lo = np.maximum(st.lo_C, X[:n, :].diagonal() - 1e-9 * (1.0 + np.abs(X[:n, :].diagonal())))
        new_hi = np.minimum(st.hi_C, X[n:, :].diagonal() + 1e-9 * (1.0 + np.abs(X[n:, :].diagonal())))
        new_hi = np.maximum(new_hi, new_lo)
        st.lo_C, st.hi_C = new_lo, new_hi
        st.X_C = X
        build_relaxation(st)
        st.notify("rebuild")
        if X0 is not None and float(np.max(np.abs(X - X0))) < cfg.eps_x:
            break
    st.counters["lp_reduce"] += solved
    return solved


# ---------------------------------------------------------------------------
# local minimization


def _feasible(p: RcpProblem, x, tol: float = 1e-8) -> bool:
    return p.is_feasible(x, tol)


def _sample_start(st: EngineState, cfg: Config) -> np.ndarray | None:
    """Uniform samples of the reduced box, projected onto C x = d; first feasible wins.

    Once an incumbent exists, samples must also beat it (the cost cutting plane
    is part of the region being sampled).  When none qualifies the
    least-violating sample is returned for a local repair.
    """
    p = st.p
    if cfg.U <= 0:
        return None
    cut = st.cut_value
    proj = np.linalg.pinv(p.C) if p.n_C else None
    best, best_v = None, math.inf
    left = cfg.U
    while left > 0:
        k = min(left, 4096)
        left -= k
        X = st.rng.uniform(st.lo_C, st.hi_C, size=(k, p.n))
        if proj is not None:
            X = X - (X @ p.C.T - p.d) @ proj.T
        viol = np.maximum(p.g_all(X).max(axis=1), 0.0)
        if proj is not None:
            viol = np.maximum(viol, np.abs(X @ p.C.T - p.d).max(axis=1))
        if cut is not None:
            viol = np.maximum(viol, X @ p.c - (cut - cfg.delta_cut))
        j = int(np.argmin(viol))
        if viol[j] <= 0.0:
            return X[j]
        if viol[j] < best_v:
            best, best_v = X[j], viol[j]
    return best


def local_improve(st: EngineState, cfg: Config, x0=None) -> bool:
    """Run a local solve from x0 (or a sampled start); returns True when x_up improved."""
    p = st.p
    if x0 is None:
        x0 = _sample_start(st, cfg)
        if x0 is None:
            return False
    st.counters["local"] += 1
    x = local_min_rcp(p, x0)
    if not _feasible(p, x):
        return False
    if st.up_feasible and p.c @ x >= p.c @ st.x_up:
        return False
    st.x_up = np.asarray(x, dtype=float)
    st.up_feasible = True
    if st.poly is not None:
        build_relaxation(st)
    return True


# ---------------------------------------------------------------------------
# relaxation check


def relax_and_check(st: EngineState, cfg: Config) -> tuple[str, list] | None:
    p = st.p
    res = solve_lp(p.c, st.poly, p.C, p.d)
    st.counters["lp_relax"] += 1
    if res.tag == "infeasible":
        raise InfeasibleRelaxation("the relaxation polytope is empty")
    if not res.ok:
        return None
    st.x_low = res.x
    if p.max_violation(res.x) <= cfg.eps_g:
        return "I", [res.x]
    if st.up_feasible and not cfg.all_minima and p.c @ st.x_up - p.c @ res.x <= cfg.eps:
        return "II", [st.x_up]
    return None


# ---------------------------------------------------------------------------
# tree expansion


def _record(st: EngineState, mask: int, action: str, s_low: float = math.nan):
    st.tree.append(TreeRecord(mask, _popcount(mask), action, s_low))


def _mandatory_ok(st: EngineState, mask: int, k: int) -> bool:
    """Every multi-member mandatory group must still be reachable."""
    need = 0
    for G in st.mand_groups:
        if mask & G:
            continue
        if G.bit_length() - 1 <= k:
            return False
        need += 1
    return need <= st.full - _popcount(mask)


def _children(st: EngineState, parent: int, reserve: int) -> list[int]:
    ng = st.p.n_g
    start = parent.bit_length()
    ks = [k for k in range(start, ng) if k not in st.F.singletons]
    if reserve > 0:
        ks = ks[:-reserve] if reserve < len(ks) else []
    return ks


def _refresh_after_improvement(st: EngineState, cfg: Config):
    """Re-reduce, re-fathom and re-check the relaxation after x_up changed; purge S and V."""
    domain_reduce(st, cfg)
    fathom_bounds(st, cfg)
    fathom_separable(st)
    hit = relax_and_check(st, cfg)
    up = float(st.p.c @ st.x_up)
    tol = 1e-6 * (1.0 + abs(up))
    keep = deque()
    for mask, s_low in st.S:
        if s_low > up + tol:
            st.F.add(mask)
            _record(st, mask, "purged", s_low)
        else:
            keep.append((mask, s_low))
    st.S = keep
    st.V.drop_where(lambda x: not _in_C(st, x))
    return hit


def step_subsets(st: EngineState, cfg: Config, parent: int) -> tuple[str, list] | None:
    p = st.p
    card = _popcount(parent)
    reserve = st.full - card - 1
    for k in _children(st, parent, reserve):
        child = parent | (1 << k)
        if not _mandatory_ok(st, child, k):
            continue
        if st.F.spans(child):
            _record(st, child, "F-span")
            continue
        if p.constraints[k].meta.is_linear and _dependent_linear(st, child):
            st.F.add(child)
            _record(st, child, "rank")
            continue
        if st.V.contains(child):
            s_low = float(p.c @ st.x_low) if st.x_low is not None else -math.inf
            st.S.append((child, s_low))
            _record(st, child, "V-skip", s_low)
            continue
        res = solve_subset_min(p, bit_indices(child), st.poly)
        st.counters["convex"] += 1
        st.trigger += 1
        if res.tag == "infeasible":
            st.F.add(child)
            _record(st, child, "solved-infeasible")
            continue
        if not res.ok:
            s_low = float(p.c @ st.x_low) if st.x_low is not None else -math.inf
            st.S.append((child, s_low))
            _record(st, child, "numerical", s_low)
            continue
        x = res.x
        s_low = float(p.c @ x)
        st.S.append((child, s_low))
        _record(st, child, "solved-feasible", s_low)
        v = 0
        for i in res.iv:
            v |= 1 << i
        st.V.prune_dominated(v)
        st.V.add(v, x)
        feasible = p.max_violation(x) <= 1e-9 and p.eq_residual(x) <= 1e-9 * (1 + np.abs(p.d).max(initial=0.0))
        improved = False
        if feasible:
            improved = local_improve(st, cfg, x)
        elif st.trigger > cfg.n_trigger:
            st.trigger = 0
            improved = local_improve(st, cfg)
        if improved:
            hit = _refresh_after_improvement(st, cfg)
            if hit is not None:
                return hit
        st.notify("node")
    return None


def step_full_sets(st: EngineState, cfg: Config, parent: int):
    p = st.p
    guard = Polytope.box(p.lo, p.hi)
    for k in _children(st, parent, 0):
        child = parent | (1 << k)
        if not _mandatory_ok(st, child, k):
            continue
        _full_set(st, cfg, child, guard)


def _full_set(st: EngineState, cfg: Config, mask: int, guard: Polytope):
    p = st.p
    if st.F.spans(mask):
        _record(st, mask, "F-span")
        return
    if any(p.constraints[i].meta.is_linear for i in bit_indices(mask)) and _dependent_linear(st, mask):
        st.F.add(mask)
        _record(st, mask, "rank")
        return
    res = solve_reverse_max(p, bit_indices(mask), guard)
    st.counters["convex"] += 1
    if not res.ok:
        _record(st, mask, "reverse-" + res.tag)
        return
    x = res.x
    y = polish_active(p, x, bit_indices(mask))
    if p.max_violation(y) <= max(p.max_violation(x), 0.0) + 1e-12 and p.c @ y >= p.c @ x - 1e-6 * (1 + abs(p.c @ x)):
        x = y
    ok = p.max_violation(x) <= cfg.eps_g
    if ok:
        st.candidates.append(x)
        _record(st, mask, "candidate", float(p.c @ x))
    else:
        _record(st, mask, "rejected", float(p.c @ x))


# ---------------------------------------------------------------------------
# driver


def _finish(st: EngineState, cfg: Config, criterion: str | None, xs: list, t0: float, status: str = "optimal"):
    p = st.p
    xs = [np.asarray(x, dtype=float) for x in xs]
    costs = [float(p.c @ x) for x in xs]
    if not xs and status == "optimal" and st.up_feasible:
        log.warning("enumeration produced no candidate; reporting the incumbent")
        xs, costs = [st.x_up], [float(p.c @ st.x_up)]
    if xs:
        best = int(np.argmin(costs))
        minimal = [c <= costs[best] + cfg.eps for c in costs]
        x, cost = xs[best], costs[best]
    else:
        status = "infeasible" if status == "optimal" else status
        minimal, x, cost = [], None, math.nan
    lb = float(p.c @ st.x_low) if st.x_low is not None else -math.inf
    trace = []
    if cfg.trace:
        trace = [f"{BinaryMask(r.mask, p.n_g)} {r.action} {r.s_low:.10g}" for r in st.tree]
    return SolveReport(
        status=status,
        criterion=criterion,
        x=x,
        cost=cost,
        candidates=xs,
        candidate_costs=costs,
        minimal=minimal,
        counters=dict(st.counters),
        x_up=st.x_up,
        x_low=st.x_low,
        relaxation_bound=lb,
        fathoming=st.F.rows(),
        tree=st.tree,
        box=None if st.lo_C is None else (st.lo_C.copy(), st.hi_C.copy()),
        elapsed=time.perf_counter() - t0,
        nodes=len(st.tree),
        trace=trace,
    )


def init_state(p: RcpProblem, cfg: Config) -> EngineState:
    validate_problem(p)
    p = p.canonical()
    st = EngineState(p, cfg, innate_fathoming_init(p), MaskBasis(p.n_g))
    st.rng = np.random.default_rng(cfg.seed)
    st.lo_C, st.hi_C = p.lo.copy(), p.hi.copy()
    st.linear_idx, st.lin_rows = _linear_rows(p)
    groups = p.mandatory_groups()
    first = 0
    for members in groups.values():
        if len(members) == 1:
            first |= 1 << members[0]
        else:
            G = 0
            for i in members:
                G |= 1 << i
            st.mand_groups.append(G)
    st.full = p.n - p.n_C
    st.S.append((first, 0.0))
    return st


def solve(p: RcpProblem, cfg: Config | None = None, x0=None) -> SolveReport:
    """Global minimization of an RCP by active-set enumeration."""
    cfg = cfg or Config()
    t0 = time.perf_counter()
    st = init_state(p, cfg)
    p = st.p
    build_relaxation(st)
    try:
        # initial upper bound
        if x0 is not None and _feasible(p, x0):
            local_improve(st, cfg, np.asarray(x0, dtype=float))
        else:
            local_improve(st, cfg)
        if not st.up_feasible:
            res = solve_lp(-p.c, st.poly, p.C, p.d)
            st.counters["lp_relax"] += 1
            if res.tag == "infeasible":
                raise InfeasibleRelaxation("the relaxation polytope is empty")
            st.x_up = res.x if res.ok else None
        domain_reduce(st, cfg)
        fathom_bounds(st, cfg)
        fathom_separable(st)
        hit = relax_and_check(st, cfg)
        if hit is not None:
            return _finish(st, cfg, hit[0], hit[1], t0)
        guard = Polytope.box(p.lo, p.hi)
        while st.S:
            if cfg.node_limit is not None and len(st.tree) >= cfg.node_limit:
                return _finish(st, cfg, None, st.candidates, t0, status="node_limit")
            parent, _ = st.S.popleft()
            card = _popcount(parent)
            if card >= st.full:
                _full_set(st, cfg, parent, guard)
            elif card < st.full - 1:
                hit = step_subsets(st, cfg, parent)
                if hit is not None:
                    return _finish(st, cfg, hit[0], hit[1], t0)
            else:
                step_full_sets(st, cfg, parent)
        return _finish(st, cfg, "III", st.candidates, t0)
    except InfeasibleRelaxation:
        return _finish(st, cfg, None, [], t0, status="infeasible")
