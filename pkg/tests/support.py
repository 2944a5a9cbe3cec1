"""Shared helpers for building feasible points of the compiled sinusoid-product problem."""
import numpy as np


def sinaff_lift(p, m, y1, y2, z1):
    """Rows of compiled points for arrays (y1, y2, z1); t is set to the smallest value the pieces allow."""
    it, i1, i2, i3 = (m.index(k) for k in ("t", "z1", "z2", "z3"))
    epi = np.array([c.meta.mandatory_group is not None for c in p.constraints])
    y1, y2, z1 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (y1, y2, z1))
    X = np.zeros((y1.size, p.n))
    X[:, 0], X[:, 1], X[:, i1] = y1, y2, z1
    X[:, i2] = -y1 + 0.3 * y2
    X[:, i3] = z1 + X[:, i2]
    X[:, it] = np.maximum(np.max(p.g_all(X)[:, epi], axis=1), p.lo[it])
    return X


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok
