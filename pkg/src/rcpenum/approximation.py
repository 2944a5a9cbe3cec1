"""Certified piecewise-concave approximations of univariate functions.

Two constructions are provided:

* ``parabola_pieces`` fits one concave parabola per subinterval (midpoint
  interpolation, edge slopes +2k and -2k) and shifts the whole family so it
  lies entirely above (rho=+1) or below (rho=-1) the target.
* ``pwl_convex_pieces`` approximates a convex function by tangent lines (from
  below) or chords (from above).

Both return a ``PiecewiseConcave``: the pointwise maximum of its pieces, with
the pieces ordered so that piece k is the maximum on exactly one interval.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .univariate import UFunc


class ApproximationError(ValueError):
    pass


class SingularSystem(ApproximationError):
    pass


class LipschitzViolated(ApproximationError):
    pass


class NotConvexOnInterval(ApproximationError):
    pass


@dataclass(frozen=True)
class ApproxSpec:
    kappa: float
    n_p: int
    lo: float
    hi: float
    rho: int = -1
    n_fine: int | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.n_p < 1:
            raise ValueError("n_p must be at least 1")
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if self.rho not in (-1, 1):
            raise ValueError("rho must be +1 or -1")
        if self.n_fine is not None and self.n_fine < 10 * self.n_p:
            raise ValueError("n_fine must be at least 10 * n_p")

    @property
    def fine(self) -> int:
        return self.n_fine if self.n_fine is not None else 100 * self.n_p

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / self.n_p

    @property
    def dx_fine(self) -> float:
        return (self.hi - self.lo) / self.fine


# above this many piece evaluations, points are routed to their owning piece
_DENSE_LIMIT = 4_000_000


@dataclass(frozen=True, eq=False)
class PiecewiseConcave:
    beta2: np.ndarray
    beta1: np.ndarray
    beta0: np.ndarray
    breaks: np.ndarray
    shift: float = 0.0

    @property
    def n_pieces(self) -> int:
        return len(self.beta0)

    @property
    def lo(self) -> float:
        return float(self.breaks[0])

    @property
    def hi(self) -> float:
        return float(self.breaks[-1])

    @property
    def beta(self) -> np.ndarray:
        return np.column_stack([self.beta2, self.beta1, self.beta0])

    @property
    def strict(self) -> bool:
        """True when the shift moved every piece strictly away from the target."""
        return self.shift != 0.0

    def pieces(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return self.beta2 * x**2 + self.beta1 * x + self.beta0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.size * self.n_pieces <= _DENSE_LIMIT:
            return self.pieces(x).max(axis=-1)
        return self._by_interval(x)

    def _by_interval(self, x):
        """Evaluate the piece owning each point; equals the max for envelope-ordered pieces."""
        k = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.n_pieces - 1)
        return self.beta2[k] * x**2 + self.beta1[k] * x + self.beta0[k]

    def active(self, x):
        return self.pieces(x).argmax(axis=-1)

    def shifted(self, amount: float) -> "PiecewiseConcave":
        return PiecewiseConcave(self.beta2, self.beta1, self.beta0 + amount, self.breaks, self.shift + amount)

    def scaled(self, k: float) -> "PiecewiseConcave":
        if k <= 0:
            raise ValueError("scale must be positive to keep pieces concave")
        return PiecewiseConcave(k * self.beta2, k * self.beta1, k * self.beta0, self.breaks, k * self.shift)

    def hull_vertices(self, lo: float | None = None, hi: float | None = None) -> np.ndarray:
        """Vertices of the convex envelope of p over [lo, hi] as an (m, 2) array."""
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        inner = self.breaks[(self.breaks > lo) & (self.breaks < hi)]
        xs = np.concatenate([[lo], inner, [hi]]) if hi > lo else np.array([lo])
        pts = np.column_stack([xs, self(xs)])
        return lower_hull(pts)

    def value_range(self, lo: float | None = None, hi: float | None = None) -> tuple[float, float]:
        """Exact min and max of p over [lo, hi]."""
        lo = self.lo if lo is None else lo
        hi = self.hi if hi is None else hi
        inner = self.breaks[(self.breaks > lo) & (self.breaks < hi)]
        cand = [lo, hi, *inner]
        for k in range(self.n_pieces):
            if self.beta2[k] < 0:
                xv = -self.beta1[k] / (2 * self.beta2[k])
                if lo <= xv <= hi:
                    cand.append(xv)
        v = self(np.array(cand))
        vmin = float(self(np.array([lo, hi, *inner])).min())
        return vmin, float(v.max())


def lower_hull(pts: np.ndarray) -> np.ndarray:
    """Lower convex hull of points sorted by x (monotone chain); collinear points dropped."""
    hull: list[np.ndarray] = []
    for p in pts[np.lexsort((pts[:, 1], pts[:, 0]))]:
        if hull and abs(p[0] - hull[-1][0]) <= 1e-15 * (1 + abs(p[0])):
            continue
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
            if cross <= 1e-14 * (1 + abs(o[1]) + abs(p[1])) * (p[0] - o[0]):
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull)


def _upper_envelope(slope: np.ndarray, icpt: np.ndarray, lo: float, hi: float):
    """Upper envelope of lines on [lo, hi]: returns (indices in x order, breakpoints)."""
    order = np.lexsort((icpt, slope))
    hull: list[int] = []

    def cross_x(i, j):
        return (icpt[i] - icpt[j]) / (slope[j] - slope[i])

    for k in order:
        if hull and slope[hull[-1]] == slope[k]:
            hull.pop()
        while len(hull) >= 2 and cross_x(hull[-2], k) <= cross_x(hull[-2], hull[-1]):
            hull.pop()
        hull.append(int(k))
    xs = [cross_x(hull[i], hull[i + 1]) for i in range(len(hull) - 1)]
    keep, brk = [], [lo]
    for i, k in enumerate(hull):
        left = -math.inf if i == 0 else xs[i - 1]
        right = math.inf if i == len(hull) - 1 else xs[i]
        a, b = max(left, lo), min(right, hi)
        if b > a or (not keep and i == len(hull) - 1):
            keep.append(k)
            brk.append(min(b, hi))
    brk[-1] = hi
    return np.array(keep), np.array(brk)


def _finalize(beta2: float, beta1: np.ndarray, beta0: np.ndarray, lo: float, hi: float, shift: float = 0.0):
    """Order pieces by maximality interval and drop any piece that is never maximal."""
    keep, brk = _upper_envelope(beta1, beta0, lo, hi)
    b2 = np.full(len(keep), float(beta2))
    return PiecewiseConcave(b2, beta1[keep].copy(), beta0[keep].copy(), brk, shift)


def parabola_pieces(phi: UFunc, spec: ApproxSpec, check: bool = True) -> PiecewiseConcave:
    """One concave parabola per subinterval, shifted to bound phi from one side."""
    kap, n = float(spec.kappa), spec.n_p
    xd = np.linspace(spec.lo, spec.hi, n + 1)
    dx = spec.dx
    if not dx > 0 or not np.isfinite(dx):
        raise SingularSystem("degenerate interval")
    B = np.empty((n, 3))
    for i in range(n):
        m = xd[i] + 0.5 * dx
        M = np.array([[m * m, m, 1.0], [2 * xd[i], 1.0, 0.0], [2 * xd[i + 1], 1.0, 0.0]])
        rhs = np.array([float(phi(m)), 2 * kap, -2 * kap])
        try:
            B[i] = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"subinterval {i} gives a singular system") from exc
    # all pieces share beta2 = -2 kappa / dx
    beta2 = float(np.mean(B[:, 0]))
    xf = np.linspace(spec.lo, spec.hi, spec.fine + 1)
    err = _finalize(beta2, B[:, 1], B[:, 2], spec.lo, spec.hi)(xf) - phi(xf)
    slack = 2.5 * kap * spec.dx_fine
    shift = slack - err.min() if spec.rho > 0 else -slack - err.max()
    p = _finalize(beta2, B[:, 1], B[:, 2] + shift, spec.lo, spec.hi, shift)
    if check:
        _post_check(p, phi, spec)
    return p


def _post_check(p: PiecewiseConcave, phi: UFunc, spec: ApproxSpec):
    xv = np.linspace(spec.lo, spec.hi, 4 * spec.fine + 1)
    if np.max(np.abs(phi.deriv(xv))) > spec.kappa * (1 + 1e-9):
        raise LipschitzViolated("derivative of the target exceeds the supplied kappa")
    e = p(xv) - phi(xv)
    if (spec.rho > 0 and e.min() < 0) or (spec.rho < 0 and e.max() > 0):
        raise LipschitzViolated("approximation crosses the target between fine-grid points")


def pwl_convex_pieces(f: UFunc, n_p: int, lo: float, hi: float, rho: int = -1) -> PiecewiseConcave:
    """Linear pieces for a convex f: tangents from below (rho=-1), chords from above (rho=+1).

    Tangent points are n_p evenly spaced points including both endpoints (the
    midpoint when n_p = 1); chords join consecutive points of an even n_p grid.
    """
    if f.curvature(lo, hi) not in ("convex", "affine"):
        raise NotConvexOnInterval(f"{f!r} is not convex on [{lo}, {hi}]")
    if rho < 0:
        t = np.array([0.5 * (lo + hi)]) if n_p == 1 else np.linspace(lo, hi, n_p)
        slope = np.asarray(f.deriv(t), dtype=float)
        icpt = np.asarray(f(t), dtype=float) - slope * t
        p = _finalize(0.0, slope, icpt, lo, hi)
        xf = np.linspace(lo, hi, 100 * n_p + 1)
        over = float((p(xf) - f(xf)).max())
        return p.shifted(-over) if over > 0 else p
    xd = np.linspace(lo, hi, n_p + 1)
    fd = np.asarray(f(xd), dtype=float)
    slope = np.diff(fd) / np.diff(xd)
    icpt = fd[:-1] - slope * xd[:-1]
    p = _finalize(0.0, slope, icpt, lo, hi)
    xf = np.linspace(lo, hi, 100 * n_p + 1)
    under = float((p(xf) - f(xf)).min())
    return p.shifted(-under) if under < 0 else p


def required_pieces(kappa: float, eps_p: float, lo: float, hi: float) -> int:
    """Smallest n_p with (hi - lo)/n_p <= eps_p/(2.5 kappa)."""
    if not eps_p > 0:
        raise ValueError("eps_p must be positive")
    target = eps_p / (2.5 * kappa)
    n = max(1, math.ceil((hi - lo) / target * (1 - 1e-12)))
    while (hi - lo) / n > target * (1 + 1e-12):
        n += 1
    while n > 1 and (hi - lo) / (n - 1) <= target * (1 + 1e-12):
        n -= 1
    return n


def approximation_error(p: PiecewiseConcave, phi: UFunc, grid_n: int) -> tuple[float, float]:
    """(min, max) of p - phi over an even grid of grid_n points."""
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    x = np.linspace(p.lo, p.hi, grid_n)
    e = p(x) - phi(x)
    return float(e.min()), float(e.max())
