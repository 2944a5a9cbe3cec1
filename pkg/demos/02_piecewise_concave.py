"""Bracketing a wiggly function between two piecewise-concave envelopes.

Each piece is a parabola sharing the same curvature, so the envelopes are
valid concave constraints once the function is replaced by them.  The error
shrinks linearly with the number of pieces.
"""
import numpy as np

from rcpenum import ApproxSpec, parabola_pieces
from rcpenum.univariate import fig1_sinusoid

fn = fig1_sinusoid()
x = np.linspace(0.0, 10.0, 10_000)
phi = fn(x)
print(f"{'pieces':>6}  {'max below':>10}  {'max above':>10}  {'bound 5*kappa*dx':>16}")
for n_p in (20, 40, 80, 160, 320):
    under = parabola_pieces(fn, ApproxSpec(70.0, n_p, 0.0, 10.0, rho=-1))(x)
    over = parabola_pieces(fn, ApproxSpec(70.0, n_p, 0.0, 10.0, rho=+1))(x)
    assert np.all(under <= phi) and np.all(phi <= over)
    print(f"{n_p:6d}  {np.max(phi - under):10.4f}  {np.max(over - phi):10.4f}  {5 * 70.0 * 10.0 / n_p:16.4f}")
