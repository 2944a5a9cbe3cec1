"""A product of a sine and an affine function, with two symmetric global minima.

The compiled problem carries auxiliary variables for the sine, the affine
factor and their sum; its minimizers project back onto the original plane,
where a local polish gives an upper bound.
"""
import numpy as np

from rcpenum import Config, solve
from rcpenum.cases import sinaff_nlp, sinaff_rcp
from rcpenum.nlp import polish_nlp

nlp = sinaff_nlp()
g1, g2 = np.meshgrid(np.linspace(-2, 2, 801), np.linspace(-5, 5, 801))
grid = np.sin(g1) * (-g1 + 0.3 * g2)
print(f"grid minimum of the original function: {grid.min():.4f}")

for n_p in (3, 5, 10):
    p, m = sinaff_rcp(n_p)
    r = solve(p, Config(U=10**4, all_minima=True, eps_g=5e-4))
    ys = []
    for x in r.minima:  # several active sets can describe the same point
        y = m.project(x)
        if not any(np.allclose(y, z, atol=1e-6) for z in ys):
            ys.append(y)
    upper = min(polish_nlp(nlp, y)[1] for y in ys)
    shown = ", ".join(f"({y[0]:.3f}, {y[1]:.3f})" for y in ys)
    print(f"n_p={n_p:2d}: lower bound {r.cost:.5f}, polished upper bound {upper:.5f}, minima {shown}")
