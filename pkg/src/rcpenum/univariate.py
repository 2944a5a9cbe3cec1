"""Catalog of univariate functions used as factors and as approximation targets.

Each function knows its value, derivative, a Lipschitz constant and its range on
an interval, and whether it is affine, convex or concave there.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np


def _cos_extrema(w: float, ph: float, lo: float, hi: float) -> tuple[float, float]:
    """Range of cos(w t + ph) for t in [lo, hi]."""
    a, b = sorted((w * lo + ph, w * hi + ph))
    vals = [math.cos(a), math.cos(b)]
    k0 = math.ceil(a / math.pi)
    k1 = math.floor(b / math.pi)
    for k in range(k0, min(k1, k0 + 2) + 1):
        vals.append(math.cos(k * math.pi))
    return min(vals), max(vals)


class UFunc:
    kind = "abstract"

    def __call__(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def lipschitz(self, lo: float, hi: float) -> float:
        raise NotImplementedError

    def range(self, lo: float, hi: float) -> tuple[float, float]:
        raise NotImplementedError

    def curvature(self, lo: float, hi: float) -> str:
        return "none"

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(UFunc):
    value: float = 0.0
    kind = "const"

    def __call__(self, x):
        return np.full(np.shape(x), self.value) if np.ndim(x) else self.value

    def deriv(self, x):
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0

    def lipschitz(self, lo, hi):
        return 0.0

    def range(self, lo, hi):
        return self.value, self.value

    def curvature(self, lo, hi):
        return "affine"

    def to_dict(self):
        return {"fn": "const", "value": self.value}


@dataclass(frozen=True)
class Lin(UFunc):
    """a x + b"""

    a: float = 1.0
    b: float = 0.0
    kind = "lin"

    def __call__(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def deriv(self, x):
        return self.a + 0.0 * np.asarray(x, dtype=float)

    def lipschitz(self, lo, hi):
        return abs(self.a)

    def range(self, lo, hi):
        u, v = self.a * lo + self.b, self.a * hi + self.b
        return min(u, v), max(u, v)

    def curvature(self, lo, hi):
        return "affine"

    def to_dict(self):
        return {"fn": "lin", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Square(UFunc):
    """(x - center)**2"""

    center: float = 0.0
    kind = "square"

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.center) ** 2

    def deriv(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.center)

    def lipschitz(self, lo, hi):
        return 2.0 * max(abs(lo - self.center), abs(hi - self.center))

    def range(self, lo, hi):
        top = max((lo - self.center) ** 2, (hi - self.center) ** 2)
        bot = 0.0 if lo <= self.center <= hi else min((lo - self.center) ** 2, (hi - self.center) ** 2)
        return bot, top

    def curvature(self, lo, hi):
        return "convex"

    def to_dict(self):
        return {"fn": "square", "center": self.center}


@dataclass(frozen=True)
class Exp(UFunc):
    """exp(alpha x + beta)"""

    alpha: float = 1.0
    beta: float = 0.0
    kind = "exp"

    def __call__(self, x):
        return np.exp(self.alpha * np.asarray(x, dtype=float) + self.beta)

    def deriv(self, x):
        return self.alpha * self(x)

    def lipschitz(self, lo, hi):
        return abs(self.alpha) * max(math.exp(self.alpha * lo + self.beta), math.exp(self.alpha * hi + self.beta))

    def range(self, lo, hi):
        u, v = math.exp(self.alpha * lo + self.beta), math.exp(self.alpha * hi + self.beta)
        return min(u, v), max(u, v)

    def curvature(self, lo, hi):
        return "affine" if self.alpha == 0 else "convex"

    def to_dict(self):
        return {"fn": "exp", "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class Sin(UFunc):
    """sin(w x + phase)"""

    w: float = 1.0
    phase: float = 0.0
    kind = "sin"

    def __call__(self, x):
        return np.sin(self.w * np.asarray(x, dtype=float) + self.phase)

    def deriv(self, x):
        return self.w * np.cos(self.w * np.asarray(x, dtype=float) + self.phase)

    def lipschitz(self, lo, hi):
        cmin, cmax = _cos_extrema(self.w, self.phase, lo, hi)
        return abs(self.w) * max(abs(cmin), abs(cmax))

    def range(self, lo, hi):
        # sin(u) = cos(u - pi/2)
        return _cos_extrema(self.w, self.phase - math.pi / 2, lo, hi)

    def curvature(self, lo, hi):
        smin, smax = self.range(lo, hi)
        if smin >= 0.0:
            return "concave"
        if smax <= 0.0:
            return "convex"
        return "none"

    def to_dict(self):
        return {"fn": "sin", "w": self.w, "phase": self.phase}


@dataclass(frozen=True)
class CosSum(UFunc):
    """sum_k amps[k] * cos(freqs[k] x + phases[k])"""

    amps: tuple[float, ...]
    freqs: tuple[float, ...]
    phases: tuple[float, ...]
    kind = "cossum"

    def __post_init__(self):
        for name in ("amps", "freqs", "phases"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def _arg(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.asarray(self.freqs) * x + np.asarray(self.phases)

    def __call__(self, x):
        return np.cos(self._arg(x)) @ np.asarray(self.amps)

    def deriv(self, x):
        return -np.sin(self._arg(x)) @ (np.asarray(self.amps) * np.asarray(self.freqs))

    def lipschitz(self, lo, hi):
        return float(np.sum(np.abs(np.asarray(self.amps) * np.asarray(self.freqs))))

    def range(self, lo, hi):
        n = 4001
        t = np.linspace(lo, hi, n)
        v = self(t)
        slack = 0.5 * self.lipschitz(lo, hi) * (hi - lo) / (n - 1)
        return float(v.min() - slack), float(v.max() + slack)

    def to_dict(self):
        return {"fn": "cossum", "amps": list(self.amps), "freqs": list(self.freqs), "phases": list(self.phases)}


@dataclass(frozen=True)
class Scaled(UFunc):
    """k * f(x)"""

    k: float
    f: UFunc
    kind = "scaled"

    def __call__(self, x):
        return self.k * self.f(x)

    def deriv(self, x):
        return self.k * self.f.deriv(x)

    def lipschitz(self, lo, hi):
        return abs(self.k) * self.f.lipschitz(lo, hi)

    def range(self, lo, hi):
        a, b = self.f.range(lo, hi)
        return (self.k * a, self.k * b) if self.k >= 0 else (self.k * b, self.k * a)

    def curvature(self, lo, hi):
        c = self.f.curvature(lo, hi)
        if self.k == 0:
            return "affine"
        if self.k < 0 and c in ("convex", "concave"):
            return "concave" if c == "convex" else "convex"
        return c

    def to_dict(self):
        return {"fn": "scaled", "k": self.k, "f": self.f.to_dict()}


def fig1_sinusoid() -> CosSum:
    """sum_{i=1..5} i cos((i+1) x + i), Lipschitz constant 70."""
    i = np.arange(1, 6, dtype=float)
    return CosSum(tuple(i), tuple(i + 1), tuple(i))


_REGISTRY = {
    "const": lambda d: Const(d.get("value", 0.0)),
    "lin": lambda d: Lin(d.get("a", 1.0), d.get("b", 0.0)),
    "square": lambda d: Square(d.get("center", 0.0)),
    "exp": lambda d: Exp(d.get("alpha", 1.0), d.get("beta", 0.0)),
    "sin": lambda d: Sin(d.get("w", 1.0), d.get("phase", 0.0)),
    "cos": lambda d: Sin(d.get("w", 1.0), d.get("phase", 0.0) + math.pi / 2),
    "cossum": lambda d: CosSum(tuple(d["amps"]), tuple(d["freqs"]), tuple(d["phases"])),
    "scaled": lambda d: Scaled(d["k"], ufunc_from_dict(d["f"])),
    "fig1": lambda d: fig1_sinusoid(),
}


def ufunc_from_dict(d: dict) -> UFunc:
    try:
        return _REGISTRY[d["fn"]](d)
    except KeyError as exc:
        raise ValueError(f"unknown or incomplete univariate function spec {d!r}") from exc
