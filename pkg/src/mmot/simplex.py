"""Two-phase revised simplex method with Bland's anti-cycling rule.

Solves ``min c @ x  s.t.  A @ x = b, x >= 0`` for dense ``A`` with full row
rank. The basis matrix is refactorized at every iteration; at the sizes this
toolkit targets (a few dozen rows) that costs less than pricing does, and it
keeps round-off from accumulating across thousands of degenerate pivots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError


@dataclass
class LPResult:
    x: np.ndarray
    duals: np.ndarray
    basis: np.ndarray
    objective: float
    iterations: int
    # nonbasic columns with zero reduced cost: alternative optima may exist
    zero_reduced_costs: int


def _lu(B):
    try:
        lu = sla.lu_factor(B, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
        raise NumericalError(f"basis factorization failed: {exc}") from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-13:
        raise NumericalError("singular basis matrix")
    return lu


def _simplex(A, b, c, basis, tol, max_iter, allowed=None):
    """Bland's-rule iterations from a feasible ``basis`` (modified in place)."""
    r, n = A.shape
    scale = max(1.0, float(np.max(np.abs(c)))) if n else 1.0
    dtol = tol * scale
    is_basic = np.zeros(n, dtype=bool)
    is_basic[basis] = True
    it = 0
    while True:
        lu = _lu(A[:, basis])
        xB = sla.lu_solve(lu, b, check_finite=False)
        y = sla.lu_solve(lu, c[basis], trans=1, check_finite=False)
        d = c - A.T @ y
        cand = (d < -dtol) & ~is_basic
        if allowed is not None:
            cand &= allowed
        enter = np.flatnonzero(cand)
        if len(enter) == 0:
            return xB, y, d, it
        if it >= max_iter:
            raise NumericalError(f"simplex did not terminate within {max_iter} pivots")
        j = enter[0]  # Bland: lowest index with negative reduced cost
        u = sla.lu_solve(lu, A[:, j], check_finite=False)
        rows = np.flatnonzero(u > tol)
        if len(rows) == 0:
            raise NumericalError("LP is unbounded; impossible for a transport polytope")
        ratios = np.maximum(xB[rows], 0.0) / u[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, best)]
        # Bland: among ties, the basic variable with the lowest index leaves
        leave = ties[np.argmin(basis[ties])]
        is_basic[basis[leave]] = False
        basis[leave] = j
        is_basic[j] = True
        it += 1


def solve_lp(A, b, c, tol: float = 1e-11, max_iter: int = 200000) -> LPResult:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    r, n = A.shape
    A = A.copy()
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase I: artificial identity block
    A1 = np.hstack([A, np.eye(r)])
    c1 = np.concatenate([np.zeros(n), np.ones(r)])
    basis = np.arange(n, n + r)
    xB, _, _, it1 = _simplex(A1, b, c1, basis, tol, max_iter)
    infeas = float(np.sum(xB[basis >= n]))
    if infeas > 1e-9 * max(1.0, float(b.sum())):
        raise NumericalError(f"LP infeasible (phase I residual {infeas:.3g})")

    # pivot zero-level artificials out of the basis
    keep_rows = np.ones(r, dtype=bool)
    for pos in np.flatnonzero(basis >= n):
        lu = _lu(A1[:, basis])
        e = np.zeros(r)
        e[pos] = 1.0
        row = sla.lu_solve(lu, e, trans=1, check_finite=False) @ A
        row[basis[basis < n]] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-9)
        if len(cand):
            basis[pos] = cand[0]
        else:
            keep_rows[pos] = False  # redundant equality
    if not keep_rows.all():
        # drop each redundant row together with its basic artificial
        drop_art = basis[~keep_rows] - n
        rows = np.setdiff1d(np.arange(r), drop_art)
        basis = basis[keep_rows]
        A, b = A[rows], b[rows]
    else:
        rows = np.arange(r)

    xB, y, d, it2 = _simplex(A, b, c, basis, tol, max_iter)
    x = np.zeros(n)
    x[basis] = np.where(np.abs(xB) < 1e-14, 0.0, xB)
    if np.any(x < -1e-9):
        raise NumericalError("simplex ended with a negative basic variable")
    x = np.maximum(x, 0.0)
    duals = np.zeros(r)
    duals[rows] = y
    duals[neg] *= -1
    nonbasic = np.ones(n, dtype=bool)
    nonbasic[basis] = False
    scale = max(1.0, float(np.max(np.abs(c))))
    zero_rc = int(np.sum(nonbasic & (np.abs(d) <= 1e-9 * scale)))
    return LPResult(x, duals, basis.copy(), float(c @ x), it1 + it2, zero_rc)
