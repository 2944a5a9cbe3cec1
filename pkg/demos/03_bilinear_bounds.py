"""Lower and upper bounds on a bilinear program from outer and inner approximations.

The product y1*y2 is rewritten as a difference of squares; the square of the
sum is replaced by tangent pieces (outer, a lower bound) or chords (inner, a
feasible point).  A local polish of the inner point recovers the optimum.
"""
from rcpenum import Config, solve
from rcpenum.cases import BILINEAR_COST, bilinear_nlp, bilinear_rcp
from rcpenum.nlp import polish_nlp

print(f"true optimum {BILINEAR_COST:.6f}")
print(f"{'pieces':>6}  {'lower':>10}  {'upper':>10}  {'polished':>10}")
for n_p in (5, 10, 20, 50, 100):
    lo = solve(bilinear_rcp(n_p, rho=-1)[0], Config(U=10**4))
    p, m = bilinear_rcp(n_p, rho=+1)
    up = solve(p, Config(U=10**4))
    polished = polish_nlp(bilinear_nlp(), m.project(up.x))[1]
    print(f"{n_p:6d}  {lo.cost:10.6f}  {up.cost:10.6f}  {polished:10.6f}")
