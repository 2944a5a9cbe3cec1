"""Compile factorable NLPs into standard-form reverse-convex problems.

``build_rcp`` is the practical compiler: the cost is moved into an epigraph
constraint, nonlinear equalities are split into inequality pairs, products are
reduced to bilinear terms over auxiliary variables, bilinear terms are split
into differences of squares, concave pieces are kept exact and everything else
is replaced by a piecewise-concave under- or over-approximation.

``decompose_factorable`` is the literal product decomposition with auxiliary
registers z_a, Z_b and Z_c; it is used for analysis and counting.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from .approximation import ApproxSpec, PiecewiseConcave, parabola_pieces, pwl_convex_pieces, required_pieces
from .nlp import Factor, FactorableNlp, FExpr, Product, interval_mul
from .problem import (
    Affine,
    ConcaveExpr,
    Constraint,
    ConstraintMeta,
    ExpTerm,
    PieceGroup,
    PieceInfo,
    QuadDiag,
    RcpProblem,
    SplitInfo,
)
from .univariate import Const, Exp, Lin, Scaled, Square, UFunc

log = logging.getLogger(__name__)


class DecompositionError(ValueError):
    pass


class UnboundedAuxiliary(DecompositionError):
    pass


class InfeasibleBox(DecompositionError):
    pass


# ---------------------------------------------------------------------------
# NLP-level transforms


def _prod_range(nlp_lo, nlp_hi, expr: FExpr) -> tuple[float, float]:
    return expr.range(nlp_lo, nlp_hi)


def epigraph_transform(nlp: FactorableNlp, slack: float = 0.0) -> tuple[FactorableNlp, int | None]:
    """Move the nonlinear part of the cost into a mandatory constraint f_nl(y) - t <= 0.

    Returns the new problem and the index of t (None when the cost is already linear).
    """
    lin, nonlin = nlp.cost.split_linear()
    if nonlin.is_trivial:
        return nlp, None
    n = nlp.n_y + 1
    lo_t, hi_t = nonlin.range(nlp.lo, nlp.hi)
    if not (math.isfinite(lo_t) and math.isfinite(hi_t)):
        raise UnboundedAuxiliary("cannot bound the epigraph variable")
    e_t = np.zeros(n)
    e_t[-1] = 1.0
    cost = FExpr(lin.padded(n).products + (Product(1.0, (Factor(Lin(), e_t),)),), lin.const)
    epi = FExpr(nonlin.padded(n).products + (Product(-1.0, (Factor(Lin(), e_t),)),))
    ineqs = tuple(g.padded(n) for g in nlp.ineqs) + (epi,)
    out = FactorableNlp(
        n,
        np.r_[nlp.lo, lo_t - slack],
        np.r_[nlp.hi, hi_t + slack],
        cost,
        ineqs,
        tuple(h.padded(n) for h in nlp.eqs),
        tuple(nlp.names) + ("t",),
        tuple(nlp.mandatory) + (len(ineqs) - 1,),
        nlp.split_pairs,
    )
    return out, n - 1


def split_equalities(nlp: FactorableNlp) -> FactorableNlp:
    """Replace every nonlinear equality h = 0 by the tagged pair h <= 0, -h <= 0."""
    eqs, ineqs, pairs = [], list(nlp.ineqs), list(nlp.split_pairs)
    for h in nlp.eqs:
        if h.is_trivial:
            if h.const != 0.0:
                raise InfeasibleBox(f"constant equality {h.const} = 0 cannot hold")
            log.warning("dropping degenerate equality 0 = 0")
            continue
        if h.is_linear:
            eqs.append(h)
            continue
        neg = FExpr(tuple(Product(-p.coef, p.factors) for p in h.products), -h.const)
        ineqs += [h, neg]
        pairs.append((len(ineqs) - 2, len(ineqs) - 1))
    return replace(nlp, ineqs=tuple(ineqs), eqs=tuple(eqs), split_pairs=tuple(pairs))


# ---------------------------------------------------------------------------
# the literal product decomposition


@dataclass(frozen=True)
class PolyCon:
    """lin @ x + const + sum coef*fn(x_var) + sum coef*x_i*x_j, compared with 0."""

    lin: tuple[tuple[int, float], ...] = ()
    const: float = 0.0
    univ: tuple[tuple[float, UFunc, int], ...] = ()
    bilin: tuple[tuple[float, int, int], ...] = ()

    @property
    def kind(self) -> str:
        if self.bilin:
            return "bilinear"
        if self.univ:
            return "univariate"
        return "linear"

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = self.const + sum(c * x[j] for j, c in self.lin)
        v += sum(c * float(fn(x[j])) for c, fn, j in self.univ)
        v += sum(c * x[i] * x[j] for c, i, j in self.bilin)
        return float(v)


@dataclass
class DecompositionMap:
    n_y: int
    names: list[str]
    roles: list[str]
    lo: np.ndarray
    hi: np.ndarray
    t: int | None = None
    z_a: list[int] = field(default_factory=list)
    Z_b: np.ndarray | None = None
    Z_c: np.ndarray | None = None
    definitions: dict[int, str] = field(default_factory=dict)
    families: dict[str, list[int]] = field(default_factory=dict)
    cost_offset: float = 0.0

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., : self.n_y]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        return {
            "n_y": self.n_y,
            "variables": [
                {"name": nm, "role": r, "lo": float(l), "hi": float(h), "definition": self.definitions.get(k, "")}
                for k, (nm, r, l, h) in enumerate(zip(self.names, self.roles, self.lo, self.hi))
            ],
            "t": self.t,
            "families": {k: list(v) for k, v in self.families.items()},
            "cost_offset": self.cost_offset,
        }


@dataclass
class DecomposedFamily:
    ineqs: list[PolyCon]
    eqs: list[PolyCon]
    map: DecompositionMap


def decompose_factorable(expr: FExpr, n_y: int, lo=None, hi=None, slack: float = 0.0) -> DecomposedFamily:
    """Replace expr(y) <= 0 (m products over n_y >= 2 variables) by m(4 n_y - 3)
    inequalities and m linear equalities over y, z_a, Z_b, Z_c."""
    m = len(expr.products)
    if m < 1:
        raise DecompositionError("need at least one product")
    if n_y < 2:
        raise DecompositionError("the product chain needs n_y >= 2")
    lo = np.full(n_y, -1.0) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(n_y, 1.0) if hi is None else np.asarray(hi, dtype=float)
    phi = [[Const(1.0) for _ in range(n_y)] for _ in range(m)]
    for i, prod in enumerate(expr.products):
        for f in prod.factors:
            j = f.var
            if j is None:
                raise DecompositionError("factors must be univariate functions of a single variable")
            if not isinstance(phi[i][j], Const):
                raise DecompositionError(f"product {i} has two factors in variable {j}")
            phi[i][j] = f.fn
        if prod.coef != 1.0:
            phi[i][0] = Scaled(prod.coef, phi[i][0])
    names = [f"y{j + 1}" for j in range(n_y)]
    roles = ["y"] * n_y
    blo, bhi = list(lo), list(hi)

    def new(name, role, rng):
        names.append(name)
        roles.append(role)
        blo.append(rng[0] - slack)
        bhi.append(rng[1] + slack)
        return len(names) - 1

    zb = np.empty((m, n_y), dtype=int)
    for i in range(m):
        for j in range(n_y):
            zb[i, j] = new(f"Zb[{i + 1},{j + 1}]", "Z_b", phi[i][j].range(lo[j], hi[j]))
    zc = np.empty((m, n_y - 1), dtype=int)
    for i in range(m):
        rng = (blo[zb[i, n_y - 1]], bhi[zb[i, n_y - 1]])
        zc[i, n_y - 2] = new(f"Zc[{i + 1},{n_y - 1}]", "Z_c", rng)
        for j in range(n_y - 3, -1, -1):
            rng = interval_mul((blo[zb[i, j + 1]], bhi[zb[i, j + 1]]), (blo[zc[i, j + 1]], bhi[zc[i, j + 1]]))
            zc[i, j] = new(f"Zc[{i + 1},{j + 1}]", "Z_c", rng)
    za = []
    for i in range(1, m):
        rng = interval_mul((blo[zb[i, 0]], bhi[zb[i, 0]]), (blo[zc[i, 0]], bhi[zc[i, 0]]))
        za.append(new(f"za[{i}]", "z_a", rng))

    ineqs: list[PolyCon] = []
    eqs: list[PolyCon] = []
    ineqs.append(PolyCon(tuple((k, 1.0) for k in za), expr.const, (), ((1.0, zb[0, 0], zc[0, 0]),)))
    for i in range(1, m):
        ineqs.append(PolyCon(((za[i - 1], -1.0),), 0.0, (), ((1.0, zb[i, 0], zc[i, 0]),)))
    for i in range(m):
        for j in range(n_y - 2):
            ineqs.append(PolyCon(((zc[i, j], 1.0),), 0.0, (), ((-1.0, zb[i, j + 1], zc[i, j + 1]),)))
            ineqs.append(PolyCon(((zc[i, j], -1.0),), 0.0, (), ((1.0, zb[i, j + 1], zc[i, j + 1]),)))
        eqs.append(PolyCon(((zc[i, n_y - 2], 1.0), (zb[i, n_y - 1], -1.0))))
    for i in range(m):
        for j in range(n_y):
            ineqs.append(PolyCon(((zb[i, j], -1.0),), 0.0, ((1.0, phi[i][j], j),)))
            ineqs.append(PolyCon(((zb[i, j], 1.0),), 0.0, ((-1.0, phi[i][j], j),)))
    dmap = DecompositionMap(n_y, names, roles, np.array(blo), np.array(bhi), None, za, zb, zc)
    return DecomposedFamily(ineqs, eqs, dmap)


# ---------------------------------------------------------------------------
# bilinear split


@dataclass(frozen=True)
class DcSplit:
    """coef * x_i * x_j == 0.5|coef| z^2 - 0.5|coef| x_i^2 - 0.5|coef| x_j^2 with z = x_i + s x_j."""

    z_coef: dict  # linear definition z = sum z_coef[k] x_k
    z_range: tuple[float, float]
    convex: tuple[float, int]  # (weight, var) of the square to approximate (the z variable is -1)
    concave: tuple[tuple[float, int], ...]


def dc_split_bilinear(i: int, j: int, sign: int, box_i: tuple[float, float], box_j: tuple[float, float],
                      mode: str = "auto") -> DcSplit:
    """Split sign * x_i * x_j into one convex square of an auxiliary z and two exact concave squares.

    mode "sum" always uses z = x_i + x_j (then a negative sign leaves two convex
    squares); "auto" uses z = x_i - x_j for a negative sign so that exactly one
    square needs approximating.
    """
    s = 1.0 if sign > 0 or mode == "sum" else -1.0
    bj = box_j if s > 0 else (-box_j[1], -box_j[0])
    zr = (box_i[0] + bj[0], box_i[1] + bj[1])
    if s > 0 and sign < 0:
        # -x_i x_j = -0.5 z^2 + 0.5 x_i^2 + 0.5 x_j^2
        return DcSplit({i: 1.0, j: 1.0}, zr, (0.0, -1), ((-0.5, -1), (0.5, i), (0.5, j)))
    return DcSplit({i: 1.0, j: s}, zr, (0.5, -1), ((-0.5, i), (-0.5, j)))


# ---------------------------------------------------------------------------
# the compiler


@dataclass
class _Ineq:
    lin: dict = field(default_factory=dict)
    const: float = 0.0
    quads: list = field(default_factory=list)  # (var, q, center), q < 0
    exps: list = field(default_factory=list)  # (s, alpha, c0, var), s < 0
    approx: list = field(default_factory=list)  # (coef, fn, var)
    mandatory: bool = False
    split: tuple[int, int] | None = None
    label: str = ""

    def add_lin(self, k: int, v: float):
        self.lin[k] = self.lin.get(k, 0.0) + v


class _Compiler:
    def __init__(self, nlp: FactorableNlp, rho: int, n_pieces, eps_p, n_fine, slack, overrides, dc_mode):
        self.rho = rho
        self.n_pieces = n_pieces
        self.eps_p = eps_p
        self.n_fine = n_fine
        self.slack = slack
        self.overrides = dict(overrides or {})
        self.dc_mode = dc_mode
        self.names = list(nlp.names)
        self.roles = ["y"] * nlp.n_y
        self.lo = list(nlp.lo)
        self.hi = list(nlp.hi)
        self.defs: dict[int, str] = {}
        for k, nm in enumerate(self.names):
            if nm in self.overrides:
                self.lo[k], self.hi[k] = self.overrides[nm]
        self.eq_rows: list[tuple[dict, float]] = []
        self.out: list[_Ineq] = []
        self._aff: dict = {}
        self._fn: dict = {}
        self._pair = 0
        self._zcount = 0

    # variables ------------------------------------------------------------
    def new_var(self, role: str, rng: tuple[float, float], definition: str) -> int:
        self._zcount += 1
        name = f"z{self._zcount}"
        lo, hi = rng[0] - self.slack, rng[1] + self.slack
        if name in self.overrides:
            lo, hi = self.overrides[name]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedAuxiliary(f"could not bound {name} = {definition}")
        self.names.append(name)
        self.roles.append(role)
        self.lo.append(lo)
        self.hi.append(hi)
        self.defs[len(self.names) - 1] = definition
        return len(self.names) - 1

    def affine_var(self, coefs: dict, b: float) -> int:
        coefs = {k: v for k, v in coefs.items() if v != 0.0}
        if b == 0.0 and len(coefs) == 1:
            (k, v), = coefs.items()
            if v == 1.0:
                return k
        key = (tuple(sorted(coefs.items())), b)
        if key in self._aff:
            return self._aff[key]
        lo = b + sum(min(v * self.lo[k], v * self.hi[k]) for k, v in coefs.items())
        hi = b + sum(max(v * self.lo[k], v * self.hi[k]) for k, v in coefs.items())
        desc = " + ".join(f"{v:g}*{self.names[k]}" for k, v in sorted(coefs.items())) + (f" + {b:g}" if b else "")
        z = self.new_var("aux", (lo, hi), desc)
        row = dict(coefs)
        row[z] = -1.0
        self.eq_rows.append((row, -b))
        self._aff[key] = z
        return z

    def factor_var(self, f: Factor) -> int:
        coefs = {int(k): float(f.a[k]) for k in np.flatnonzero(f.a)}
        if isinstance(f.fn, Lin):
            return self.affine_var({k: f.fn.a * v for k, v in coefs.items()}, f.fn.a * f.b + f.fn.b)
        v = self.affine_var(coefs, f.b)
        return self.function_var(f.fn, v)

    def function_var(self, fn: UFunc, v: int) -> int:
        key = (repr(fn), v)
        if key in self._fn:
            return self._fn[key]
        z = self.new_var("aux", fn.range(self.lo[v], self.hi[v]), f"{fn!r}({self.names[v]})")
        self._fn[key] = z
        pair = self._pair
        self._pair += 1
        for side in (1, -1):
            q = _Ineq(label=f"{self.names[z]} definition ({'+' if side > 0 else '-'})")
            self.add_univariate(q, float(side), fn, v)
            q.add_lin(z, -float(side))
            q.split = (pair, side)
            self.out.append(q)
        return z

    def product_var(self, i: int, j: int) -> int:
        key = ("prod", min(i, j), max(i, j))
        if key in self._fn:
            return self._fn[key]
        z = self.new_var("aux", interval_mul((self.lo[i], self.hi[i]), (self.lo[j], self.hi[j])),
                         f"{self.names[i]}*{self.names[j]}")
        self._fn[key] = z
        for side in (1, -1):
            q = _Ineq(label=f"{self.names[z]} definition ({'+' if side > 0 else '-'})")
            self.add_bilinear(q, float(side), i, j)
            q.add_lin(z, -float(side))
            self.out.append(q)
        return z

    # terms ------------------------------------------------------------------
    def add_univariate(self, q: _Ineq, coef: float, fn: UFunc, v: int):
        while isinstance(fn, Scaled):
            coef *= fn.k
            fn = fn.f
        if coef == 0.0:
            return
        if isinstance(fn, Lin):
            q.add_lin(v, coef * fn.a)
            q.const += coef * fn.b
        elif isinstance(fn, Const):
            q.const += coef * fn.value
        elif isinstance(fn, Square) and coef < 0:
            q.quads.append((v, coef, fn.center))
        elif isinstance(fn, Exp) and coef < 0:
            q.exps.append((coef, fn.alpha, fn.beta, v))
        else:
            q.approx.append((coef, fn, v))

    def add_bilinear(self, q: _Ineq, coef: float, i: int, j: int):
        if i == j:
            self.add_univariate(q, coef, Square(), i)
            return
        k = abs(coef)
        sp = dc_split_bilinear(i, j, 1 if coef > 0 else -1, (self.lo[i], self.hi[i]), (self.lo[j], self.hi[j]),
                               self.dc_mode)
        z = self.affine_var(sp.z_coef, 0.0)
        parts = [sp.convex, *sp.concave] if sp.convex[0] else list(sp.concave)
        for w, var in parts:
            self.add_univariate(q, w * k, Square(), z if var == -1 else var)

    def add_product(self, q: _Ineq, prod: Product):
        coef = prod.coef
        fs = []
        for f in prod.factors:
            if isinstance(f.fn, Const):
                coef *= f.fn.value
            else:
                fs.append(f)
        if not fs:
            q.const += coef
            return
        if len(fs) == 1:
            f = fs[0]
            if isinstance(f.fn, Lin):
                for k in np.flatnonzero(f.a):
                    q.add_lin(int(k), coef * f.fn.a * f.a[k])
                q.const += coef * (f.fn.a * f.b + f.fn.b)
            else:
                v = self.affine_var({int(k): float(f.a[k]) for k in np.flatnonzero(f.a)}, f.b)
                self.add_univariate(q, coef, f.fn, v)
            return
        vs = [self.factor_var(f) for f in fs]
        w = vs[0]
        for u in vs[1:-1]:
            w = self.product_var(w, u)
        self.add_bilinear(q, coef, w, vs[-1])

    def compile(self, expr: FExpr, label: str) -> _Ineq:
        q = _Ineq(const=expr.const, label=label)
        for prod in expr.products:
            self.add_product(q, prod)
        return q

    # approximation ----------------------------------------------------------
    def approximate(self, coef: float, fn: UFunc, v: int, rho: int) -> PiecewiseConcave:
        lo, hi = self.lo[v], self.hi[v]
        h = fn if coef == 1.0 else Scaled(coef, fn)
        if h.curvature(lo, hi) in ("convex", "affine"):
            n = self.n_pieces or _pwl_pieces_for(h, self.eps_p, lo, hi, rho)
            return pwl_convex_pieces(h, n, lo, hi, rho)
        kap = h.lipschitz(lo, hi)
        kap = kap if kap > 0 else 1e-12
        n = self.n_pieces or required_pieces(kap, self.eps_p, lo, hi)
        fine = self.n_fine if self.n_fine and self.n_fine >= 10 * n else None
        return parabola_pieces(h, ApproxSpec(kap, n, lo, hi, rho, fine))


def _pwl_pieces_for(h: UFunc, eps: float | None, lo: float, hi: float, rho: int) -> int:
    if eps is None:
        raise DecompositionError("either n_pieces or eps_p is required")
    n = 1
    while True:
        p = pwl_convex_pieces(h, n, lo, hi, rho)
        x = np.linspace(lo, hi, 200 * n + 1)
        if np.max(np.abs(p(x) - h(x))) <= eps or n > 1_000_000:
            return n
        n *= 2


def _expr_of(q: _Ineq, n: int, extra=()) -> list:
    a = np.zeros(n)
    for k, v in q.lin.items():
        a[k] += v
    terms = [QuadDiag(v, c, ctr) for v, c, ctr in q.quads]
    terms += [ExpTerm(s, al, c0, v) for s, al, c0, v in q.exps]
    return terms, a, q.const


def _term_range(q: _Ineq, lo, hi, skip: int | None = None) -> tuple[float, float]:
    a, b = q.const, q.const
    for k, v in q.lin.items():
        if k == skip:
            continue
        a += min(v * lo[k], v * hi[k])
        b += max(v * lo[k], v * hi[k])
    for v, c, ctr in q.quads:
        r = Square(ctr).range(lo[v], hi[v])
        a += c * r[1]
        b += c * r[0]
    for s, al, c0, v in q.exps:
        r = Exp(al, c0).range(lo[v], hi[v])
        a += s * r[1]
        b += s * r[0]
    return a, b


def build_rcp(
    nlp: FactorableNlp,
    eps_p: float | None = None,
    rho: int = -1,
    n_pieces: int | None = None,
    n_fine: int | None = None,
    bound_slack: float | None = None,
    bounds_override: dict | None = None,
    dc_mode: str = "auto",
) -> tuple[RcpProblem, DecompositionMap]:
    """Compile a factorable NLP into an outer (rho=-1) or inner (rho=+1) RCP approximation."""
    if rho not in (-1, 1):
        raise ValueError("rho must be +1 or -1")
    if n_pieces is None and eps_p is None:
        raise DecompositionError("either n_pieces or eps_p is required")
    if np.any(nlp.lo > nlp.hi):
        raise InfeasibleBox("lower bound above upper bound")
    slack = (eps_p or 0.0) if bound_slack is None else bound_slack
    n_y0 = nlp.n_y
    nlp1, t_idx = epigraph_transform(nlp)
    nlp1 = split_equalities(nlp1)
    comp = _Compiler(nlp1, rho, n_pieces, eps_p, n_fine, slack, bounds_override, dc_mode)

    main: list[_Ineq] = []
    paired = {i: (k, s) for k, (a, b) in enumerate(nlp1.split_pairs) for i, s in ((a, 1), (b, -1))}
    for i, g in enumerate(nlp1.ineqs):
        q = comp.compile(g, "epigraph" if i in nlp1.mandatory else f"g{i + 1}")
        q.mandatory = i in nlp1.mandatory
        if i in paired:
            k, s = paired[i]
            q.split = (1000 + k, s)
        main.append(q)
    for h in nlp1.eqs:
        a, b = h.linear_form(nlp1.n_y)
        comp.eq_rows.append(({int(k): float(a[k]) for k in np.flatnonzero(a)}, -b))

    ineqs = comp.out + main
    # hoist extra approximated terms into auxiliary epigraph variables
    final: list[_Ineq] = []
    for q in ineqs:
        extra = q.approx[1:]
        q.approx = q.approx[:1]
        for coef, fn, v in extra:
            r = Scaled(coef, fn).range(comp.lo[v], comp.hi[v])
            w = comp.new_var("aux", r, f"bound on {coef:g}*{fn!r}({comp.names[v]})")
            sub = _Ineq(label=f"{comp.names[w]} definition")
            sub.approx.append((coef, fn, v))
            sub.add_lin(w, -1.0)
            final.append(sub)
            q.add_lin(w, 1.0)
        final.append(q)

    n = len(comp.names)
    constraints: list[Constraint] = []
    groups: list[PieceGroup] = []
    mand_id = 0
    split_ok: dict[int, list[bool]] = {}
    built: list[tuple[_Ineq, PiecewiseConcave | None]] = []
    for q in final:
        p = None
        if q.approx:
            coef, fn, v = q.approx[0]
            q_rho = -1 if q.split is not None else rho
            p = comp.approximate(coef, fn, v, q_rho)
        built.append((q, p))
        if q.split is not None:
            ok = p is not None and p.strict and not q.quads and not q.exps
            split_ok.setdefault(q.split[0], []).append(ok)
    if rho > 0 and any(q.split is not None for q, _ in built):
        log.warning("equality constraints are approximated from below; the rho=+1 result is not an inner approximation")

    lo, hi = np.array(comp.lo, dtype=float), np.array(comp.hi, dtype=float)
    if t_idx is not None and "t" not in comp.overrides:
        for q, p in built:
            if q.mandatory:
                rlo, rhi = _term_range(q, lo, hi, skip=t_idx)
                if p is not None:
                    v = q.approx[0][2]
                    plo, phi_ = p.value_range(lo[v], hi[v])
                    rlo, rhi = rlo + plo, rhi + phi_
                margin = 1e-6 * (1.0 + max(abs(rlo), abs(rhi)))
                lo[t_idx] = min(lo[t_idx], rlo) - margin
                hi[t_idx] = max(hi[t_idx], rhi) + margin

    gid = 0
    for q, p in built:
        terms, a, b = _expr_of(q, n)
        split = None
        if q.split is not None and all(split_ok.get(q.split[0], [False])) and len(split_ok[q.split[0]]) == 2:
            split = SplitInfo(q.split[0], q.split[1])
        if p is None:
            constraints.append(Constraint(
                ConcaveExpr(terms + [Affine(a, b)]),
                ConstraintMeta(mandatory_group=mand_id if q.mandatory else None, split=split, label=q.label),
            ))
            continue
        v = q.approx[0][2]
        rest = ConcaveExpr(terms + [Affine(a, b)])
        groups.append(PieceGroup(gid, v, p.beta, p.breaks, rest))
        for k in range(p.n_pieces):
            e = np.zeros(n)
            e[v] = p.beta1[k]
            pt = [QuadDiag(v, p.beta2[k])] if p.beta2[k] < 0 else []
            constraints.append(Constraint(
                ConcaveExpr(pt + terms + [Affine(a + e, b + p.beta0[k])]),
                ConstraintMeta(
                    mandatory_group=mand_id if q.mandatory else None,
                    piece=PieceInfo(gid, k, (float(p.breaks[k]), float(p.breaks[k + 1]))),
                    split=split,
                    label=f"{q.label} piece {k + 1}",
                ),
            ))
        gid += 1

    c_vec = np.zeros(n)
    ca, cb = nlp1.cost.linear_form(nlp1.n_y)
    c_vec[: nlp1.n_y] = ca
    C = np.zeros((len(comp.eq_rows), n))
    d = np.zeros(len(comp.eq_rows))
    for r, (row, rhs) in enumerate(comp.eq_rows):
        for k, v in row.items():
            C[r, k] += v
        d[r] = rhs
    prob = RcpProblem.build(c_vec, constraints, lo, hi, C, d, groups, comp.names).canonical()
    families: dict[str, list[int]] = {}
    for i, con in enumerate(prob.constraints[: prob.n_general]):
        families.setdefault(con.meta.label.split(" piece ")[0], []).append(i)
    dmap = DecompositionMap(n_y0, list(comp.names), comp.roles, lo, hi, t_idx, definitions=comp.defs,
                            families=families, cost_offset=cb)
    if t_idx is not None:
        dmap.roles[t_idx] = "t"
    return prob, dmap
