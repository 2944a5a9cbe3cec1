"""Two variables, seven concave constraints, and a feasible set in several pieces.

The solver's answer is compared with a brute-force search that solves one
reverse problem for every pair of constraints.
"""
from rcpenum import Config, solve
from rcpenum.bench import reverse_oracle
from rcpenum.cases import EX2_COSTS, ex2_problem

print(f"{'c':>14}  {'solver':>10}  {'oracle':>10}  criterion  convex  LP")
for c in EX2_COSTS:
    p = ex2_problem(c)
    r = solve(p, Config(U=10**4))
    best, _, _ = reverse_oracle(p)
    print(f"{str(c):>14}  {r.cost:10.6f}  {best:10.6f}  {r.criterion:>9}  {r.counters['convex']:6d}  {r.lp_label}")

# The enumeration tree of one run: which active sets were fathomed and why.
r = solve(ex2_problem((0.6, -0.6)), Config(U=10**4, all_minima=True))
actions = {}
for rec in r.tree:
    actions[rec.action] = actions.get(rec.action, 0) + 1
print("\ntree actions for c = (0.6, -0.6):", actions)
