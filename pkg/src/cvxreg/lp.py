"""Dense two-phase tableau simplex with Bland's pivoting rule.

Intended for small LPs in standard form (few equality rows, moderate number
of columns), which is the shape of the convex-hull interpolation problem.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFault


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible"
    x: np.ndarray | None
    value: float
    pivots: int


def _pivot(T, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T, basis, ncols, tol, max_pivots, pivots):
    """Minimize the objective held in the last row of T over columns < ncols."""
    m = len(basis)
    while True:
        cost = T[-1, :ncols]
        candidates = np.flatnonzero(cost < -tol)
        if candidates.size == 0:
            return pivots
        c = int(candidates[0])  # Bland: lowest index entering
        colv = T[:m, c]
        pos = np.flatnonzero(colv > tol)
        if pos.size == 0:
            # unbounded; cannot happen for the bounded interpolation LP
            raise NumericalFault("linear program is unbounded")
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))  # Bland: lowest basic index leaves
        _pivot(T, r, c)
        basis[r] = c
        pivots += 1
        if pivots > max_pivots:
            raise NumericalFault(f"simplex exceeded {max_pivots} pivots (cycling guard)")


def simplex_standard_form(c, A, b, tol=1e-11, feas_tol=1e-9, max_pivots=None) -> LPResult:
    """Solve min c@x subject to A@x = b, x >= 0."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    if max_pivots is None:
        max_pivots = 50 * (n + m) + 100

    # columns: n structural, m artificial, rhs
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))

    scale = max(1.0, np.abs(b).max(initial=0.0))
    pivots = _run(T, basis, n + m, tol, max_pivots, 0)
    if -T[-1, -1] > feas_tol * scale:
        return LPResult("infeasible", None, np.inf, pivots)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= n:
            cols = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if cols.size:
                _pivot(T, r, int(cols[0]))
                basis[r] = int(cols[0])
                pivots += 1
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, n + 1))
    T2[:-1, :n] = T[keep, :n]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    T2[-1, :n] = c
    for r, j in enumerate(basis):
        T2[-1] -= c[j] * T2[r]
    pivots = _run(T2, basis, n, tol, max_pivots, pivots)

    x = np.zeros(n)
    for r, j in enumerate(basis):
        x[j] = max(T2[r, -1], 0.0)
    return LPResult("optimal", x, float(c @ x), pivots)
