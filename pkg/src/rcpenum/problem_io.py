"""JSON problem files for RCPs and factorable NLPs.

A file is a JSON object with ``"format": "rcpenum"``, an integer ``"version"``
and ``"kind"`` set to ``"rcp"`` or ``"nlp"``.  ``emit_problem`` writes the
canonical form (sorted keys, two-space indent, shortest round-trip float
repr), so ``emit(parse(emit(p))) == emit(p)`` byte for byte.

RCP files list only the general constraints; the 2n box constraints are
regenerated from ``lo`` and ``hi``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
import re

import numpy as np

from .nlp import Factor, FactorableNlp, FExpr, Product
from .problem import (
    Affine,
    ConcaveExpr,
    Constraint,
    ConstraintMeta,
    ExpTerm,
    PieceGroup,
    PieceInfo,
    ProblemError,
    QuadDiag,
    QuadFull,
    RcpProblem,
    SplitInfo,
    validate_problem,
)
from .univariate import ufunc_from_dict

FORMAT = "rcpenum"
VERSION = 1


class SchemaError(ValueError):
    """Malformed problem file; carries the offending field and its line."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(ProblemError):
    """The file parsed but the problem violates a standing assumption."""


# ---------------------------------------------------------------------------
# emission


def _f(v) -> float:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError("problem files hold finite numbers only")
    return v


def _vec(a) -> list[float]:
    return [_f(v) for v in np.asarray(a, dtype=float).ravel()]


def _mat(a) -> list[list[float]]:
    a = np.asarray(a, dtype=float)
    return [_vec(r) for r in a]


def _term_dict(t) -> dict:
    if isinstance(t, Affine):
        return {"type": "affine", "a": _vec(t.a), "b": _f(t.b)}
    if isinstance(t, QuadDiag):
        return {"type": "quad_diag", "j": t.j, "q": _f(t.q), "center": _f(t.center)}
    if isinstance(t, QuadFull):
        return {"type": "quad_full", "Q": _mat(t.Q)}
    if isinstance(t, ExpTerm):
        return {"type": "exp", "s": _f(t.s), "alpha": _f(t.alpha), "c0": _f(t.c0), "j": t.j}
    raise TypeError(f"unknown term {type(t).__name__}")


def _meta_dict(m: ConstraintMeta) -> dict:
    out: dict = {}
    if m.mandatory_group is not None:
        out["mandatory_group"] = m.mandatory_group
    if m.piece is not None:
        out["piece"] = {"group": m.piece.group, "index": m.piece.index, "interval": _vec(m.piece.interval)}
    if m.split is not None:
        out["split"] = {"pair": m.split.pair, "side": m.split.side}
    if m.label:
        out["label"] = m.label
    return out


def _fexpr_dict(e: FExpr) -> dict:
    return {
        "const": _f(e.const),
        "products": [
            {"coef": _f(p.coef), "factors": [{"fn": f.fn.to_dict(), "a": _vec(f.a), "b": _f(f.b)} for f in p.factors]}
            for p in e.products
        ],
    }


def problem_to_dict(p: RcpProblem | FactorableNlp) -> dict:
    head = {"format": FORMAT, "version": VERSION}
    if isinstance(p, RcpProblem):
        gen = p.constraints[: p.n_general]
        return {
            **head,
            "kind": "rcp",
            "names": list(p.names),
            "c": _vec(p.c),
            "lo": _vec(p.lo),
            "hi": _vec(p.hi),
            "C": _mat(p.C),
            "d": _vec(p.d),
            "constraints": [{"terms": [_term_dict(t) for t in con.expr.terms], "meta": _meta_dict(con.meta)} for con in gen],
            "groups": [
                {
                    "gid": g.gid,
                    "var": g.var,
                    "beta": _mat(g.beta),
                    "breaks": _vec(g.breaks),
                    "rest": [_term_dict(t) for t in g.rest.terms],
                }
                for g in p.groups
            ],
        }
    if isinstance(p, FactorableNlp):
        return {
            **head,
            "kind": "nlp",
            "names": list(p.names),
            "n_y": p.n_y,
            "lo": _vec(p.lo),
            "hi": _vec(p.hi),
            "cost": _fexpr_dict(p.cost),
            "ineqs": [_fexpr_dict(g) for g in p.ineqs],
            "eqs": [_fexpr_dict(h) for h in p.eqs],
            "mandatory": list(p.mandatory),
            "split_pairs": [list(s) for s in p.split_pairs],
        }
    raise TypeError(f"cannot serialize {type(p).__name__}")


def emit_problem(p: RcpProblem | FactorableNlp) -> str:
    return json.dumps(problem_to_dict(p), indent=2, sort_keys=True) + "\n"


def write_problem(p: RcpProblem | FactorableNlp, path) -> None:
    Path(path).write_text(emit_problem(p))


# ---------------------------------------------------------------------------
# parsing


class _Reader:
    """Typed field access that reports the source line of a bad field."""

    def __init__(self, text: str):
        self.text = text

    def line_of(self, field: str) -> int | None:
        key = field.rsplit(".", 1)[-1].split("[", 1)[0]
        m = re.search(r'"' + re.escape(key) + r'"\s*:', self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def fail(self, msg: str, field: str):
        raise SchemaError(msg, field, self.line_of(field))

    def get(self, obj: dict, key: str, path: str, default=...):
        if not isinstance(obj, dict):
            self.fail("expected an object", path)
        if key not in obj:
            if default is not ...:
                return default
            self.fail("missing required field", f"{path}.{key}" if path else key)
        return obj[key]

    def num(self, obj, key, path, default=...) -> float:
        v = self.get(obj, key, path, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("expected a number", f"{path}.{key}")
        return float(v)

    def int_(self, obj, key, path, default=...) -> int:
        v = self.get(obj, key, path, default)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail("expected an integer", f"{path}.{key}")
        return v

    def vec(self, obj, key, path, size: int | None = None, default=...) -> np.ndarray:
        v = self.get(obj, key, path, default)
        name = f"{path}.{key}" if path else key
        if not isinstance(v, list) or any(isinstance(t, bool) or not isinstance(t, (int, float)) for t in v):
            self.fail("expected a list of numbers", name)
        if size is not None and len(v) != size:
            self.fail(f"expected {size} entries, found {len(v)}", name)
        return np.array(v, dtype=float)

    def mat(self, obj, key, path, cols: int) -> np.ndarray:
        v = self.get(obj, key, path)
        name = f"{path}.{key}" if path else key
        if not isinstance(v, list):
            self.fail("expected a list of rows", name)
        rows = [self.vec({"r": r}, "r", f"{name}[{k}]", cols) for k, r in enumerate(v)]
        return np.array(rows, dtype=float).reshape(len(rows), cols)

    def list_(self, obj, key, path, default=...) -> list:
        v = self.get(obj, key, path, default)
        if not isinstance(v, list):
            self.fail("expected a list", f"{path}.{key}" if path else key)
        return v


def _parse_term(r: _Reader, d, path: str, n: int):
    kind = r.get(d, "type", path)
    if kind == "affine":
        return Affine(r.vec(d, "a", path, n), r.num(d, "b", path))
    if kind == "quad_diag":
        return QuadDiag(_index(r, d, "j", path, n), r.num(d, "q", path), r.num(d, "center", path, 0.0))
    if kind == "quad_full":
        return QuadFull(r.mat(d, "Q", path, n))
    if kind == "exp":
        return ExpTerm(r.num(d, "s", path), r.num(d, "alpha", path), r.num(d, "c0", path), _index(r, d, "j", path, n))
    r.fail(f"unknown term type {kind!r}", f"{path}.type")


def _index(r: _Reader, d, key, path, n) -> int:
    j = r.int_(d, key, path)
    if not 0 <= j < n:
        r.fail(f"index {j} out of range for {n} variables", f"{path}.{key}")
    return j


def _parse_meta(r: _Reader, d, path: str) -> ConstraintMeta:
    piece = split = None
    if "piece" in d:
        pd = d["piece"]
        iv = r.vec(pd, "interval", f"{path}.piece", 2)
        piece = PieceInfo(r.int_(pd, "group", f"{path}.piece"), r.int_(pd, "index", f"{path}.piece"), (iv[0], iv[1]))
    if "split" in d:
        sd = d["split"]
        side = r.int_(sd, "side", f"{path}.split")
        if side not in (-1, 1):
            r.fail("split side must be +1 or -1", f"{path}.split.side")
        split = SplitInfo(r.int_(sd, "pair", f"{path}.split"), side)
    mg = d.get("mandatory_group")
    if mg is not None:
        mg = r.int_(d, "mandatory_group", path)
    label = r.get(d, "label", path, "")
    if not isinstance(label, str):
        r.fail("expected a string", f"{path}.label")
    return ConstraintMeta(mandatory_group=mg, piece=piece, split=split, label=label)


def _parse_rcp(r: _Reader, doc: dict) -> RcpProblem:
    c = r.vec(doc, "c", "")
    n = c.size
    if n == 0:
        r.fail("cost vector is empty", "c")
    lo, hi = r.vec(doc, "lo", "", n), r.vec(doc, "hi", "", n)
    C = r.mat(doc, "C", "", n)
    d = r.vec(doc, "d", "", C.shape[0])
    names = r.list_(doc, "names", "", [])
    if names and (len(names) != n or not all(isinstance(s, str) for s in names)):
        r.fail(f"expected {n} variable names", "names")
    cons = []
    for k, cd in enumerate(r.list_(doc, "constraints", "")):
        path = f"constraints[{k}]"
        terms = tuple(_parse_term(r, t, f"{path}.terms[{l}]", n) for l, t in enumerate(r.list_(cd, "terms", path)))
        if not terms:
            r.fail("constraint has no terms", f"{path}.terms")
        cons.append(Constraint(ConcaveExpr(terms), _parse_meta(r, r.get(cd, "meta", path, {}), f"{path}.meta")))
    groups = []
    for k, gd in enumerate(r.list_(doc, "groups", "", [])):
        path = f"groups[{k}]"
        beta = r.mat(gd, "beta", path, 3)
        rest = tuple(_parse_term(r, t, f"{path}.rest[{l}]", n) for l, t in enumerate(r.list_(gd, "rest", path)))
        groups.append(PieceGroup(
            r.int_(gd, "gid", path), _index(r, gd, "var", path, n), beta,
            r.vec(gd, "breaks", path, len(beta) + 1), ConcaveExpr(rest),
        ))
    try:
        p = RcpProblem.build(c, cons, lo, hi, C, d, groups, names)
        validate_problem(p)
    except ProblemError as exc:
        raise ValidationError(str(exc)) from exc
    return p


def _parse_fexpr(r: _Reader, d, path: str, n: int) -> FExpr:
    prods = []
    for k, pd in enumerate(r.list_(d, "products", path)):
        pp = f"{path}.products[{k}]"
        factors = []
        for l, fd in enumerate(r.list_(pd, "factors", pp)):
            fp = f"{pp}.factors[{l}]"
            spec = r.get(fd, "fn", fp)
            try:
                fn = ufunc_from_dict(spec)
            except (ValueError, TypeError) as exc:
                r.fail(str(exc), f"{fp}.fn")
            factors.append(Factor(fn, r.vec(fd, "a", fp, n), r.num(fd, "b", fp, 0.0)))
        prods.append(Product(r.num(pd, "coef", pp), tuple(factors)))
    return FExpr(tuple(prods), r.num(d, "const", path, 0.0))


def _parse_nlp(r: _Reader, doc: dict) -> FactorableNlp:
    n = r.int_(doc, "n_y", "")
    if n < 1:
        r.fail("n_y must be positive", "n_y")
    lo, hi = r.vec(doc, "lo", "", n), r.vec(doc, "hi", "", n)
    names = r.list_(doc, "names", "", [])
    if names and (len(names) != n or not all(isinstance(s, str) for s in names)):
        r.fail(f"expected {n} variable names", "names")
    cost = _parse_fexpr(r, r.get(doc, "cost", ""), "cost", n)
    ineqs = tuple(_parse_fexpr(r, g, f"ineqs[{k}]", n) for k, g in enumerate(r.list_(doc, "ineqs", "", [])))
    eqs = tuple(_parse_fexpr(r, h, f"eqs[{k}]", n) for k, h in enumerate(r.list_(doc, "eqs", "", [])))
    mand = tuple(int(v) for v in r.list_(doc, "mandatory", "", []))
    pairs = tuple(tuple(int(v) for v in s) for s in r.list_(doc, "split_pairs", "", []))
    try:
        return FactorableNlp(n, lo, hi, cost, ineqs, eqs, tuple(names), mand, pairs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def parse_text(text: str) -> RcpProblem | FactorableNlp:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, None, exc.lineno) from exc
    r = _Reader(text)
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object", None, 1)
    if r.get(doc, "format", "") != FORMAT:
        r.fail(f"expected format {FORMAT!r}", "format")
    if r.get(doc, "version", "") != VERSION:
        r.fail(f"unsupported version, expected {VERSION}", "version")
    kind = r.get(doc, "kind", "")
    if kind == "rcp":
        return _parse_rcp(r, doc)
    if kind == "nlp":
        return _parse_nlp(r, doc)
    r.fail(f"unknown kind {kind!r}", "kind")


def parse_problem(path) -> RcpProblem | FactorableNlp:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    return parse_text(path.read_text())
