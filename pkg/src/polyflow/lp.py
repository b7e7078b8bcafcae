"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Deterministic by construction: entering and leaving columns are chosen by
smallest index among candidates, never by magnitude heuristics, so repeated
solves of the same system pivot identically.  Everything is dense and meant
for desk-scale systems (tens of variables, a couple hundred rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    """Pivot limit exceeded or malformed input; never a silent wrong answer."""


@dataclass(frozen=True)
class LPSolution:
    status: SolveStatus
    x: np.ndarray | None
    objective: float | None

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class _Unbounded(Exception):
    pass


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, T[row])
    # clean the pivot column so roundoff does not accumulate there
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _bland_iterate(T: np.ndarray, basis: np.ndarray, ncols: int, tol: float,
                   max_pivots: int) -> None:
    """Minimize the last tableau row over columns [0, ncols)."""
    m = T.shape[0] - 1
    pivots = 0
    while True:
        cost = T[-1, :ncols]
        enter = -1
        for j in range(ncols):
            if cost[j] < -tol:
                enter = j
                break
        if enter < 0:
            return
        col = T[:m, enter]
        best = np.inf
        leave = -1
        for i in range(m):
            if col[i] > tol:
                ratio = max(T[i, -1], 0.0) / col[i]
                if ratio < best - 1e-12:
                    best = ratio
                    leave = i
                elif ratio <= best + 1e-12 and leave >= 0 and basis[i] < basis[leave]:
                    leave = i  # Bland tie-break: smallest basic index
        if leave < 0:
            raise _Unbounded
        _pivot(T, basis, leave, enter)
        pivots += 1
        if pivots > max_pivots:
            raise LPError(f"simplex pivot limit {max_pivots} exceeded")


def simplex_solve(c, A, b, maximize: bool = False, tol: float = 1e-9,
                  max_pivots: int = 50_000) -> LPSolution:
    """Solve min (or max) c.x subject to A x <= b with x free in sign.

    Free variables are split x = u - w internally; phase 1 uses artificial
    variables only on rows whose right-hand side required negation.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise LPError("inconsistent LP dimensions")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
        raise LPError("non-finite LP data")

    obj_sign = -1.0 if maximize else 1.0
    cmin = obj_sign * c

    # standard form: [A, -A, I] [u; w; s] = b with everything >= 0
    Aeq = np.hstack([A, -A, np.eye(m)])
    rhs = b.copy()
    neg = rhs < 0
    Aeq[neg] *= -1.0
    rhs[neg] *= -1.0
    ncore = 2 * n + m
    art_rows = np.flatnonzero(neg)
    nart = art_rows.size

    T = np.zeros((m + 1, ncore + nart + 1))
    T[:m, :ncore] = Aeq
    T[:m, -1] = rhs
    for k, i in enumerate(art_rows):
        T[i, ncore + k] = 1.0
    basis = 2 * n + np.arange(m)
    basis[art_rows] = ncore + np.arange(nart)

    if nart:
        # phase 1: minimize the artificial sum
        T[-1, ncore:ncore + nart] = 1.0
        for i in art_rows:
            T[-1] -= T[i]
        try:
            _bland_iterate(T, basis, ncore + nart, tol, max_pivots)
        except _Unbounded:  # cannot happen: objective bounded below by 0
            raise LPError("phase-1 unbounded; malformed tableau")
        feas_gap = -T[-1, -1]
        if feas_gap > tol * (1.0 + float(np.linalg.norm(b, ord=1))):
            return LPSolution(SolveStatus.INFEASIBLE, None, None)
        # drive remaining artificials out of the basis (degenerate rows)
        dead = []
        for i in range(m):
            if basis[i] >= ncore:
                piv = -1
                for j in range(ncore):
                    if abs(T[i, j]) > 1e-9:
                        piv = j
                        break
                if piv >= 0:
                    _pivot(T, basis, i, piv)
                else:
                    dead.append(i)  # row implied by the others
        if dead:
            keep = [i for i in range(m) if i not in dead]
            T = T[keep + [m]]
            basis = basis[keep]
            m = len(keep)
        T = np.delete(T, np.s_[ncore:ncore + nart], axis=1)

    # phase 2 objective expressed over the current basis
    cstd = np.zeros(ncore)
    cstd[:n] = cmin
    cstd[n:2 * n] = -cmin
    T[-1, :] = 0.0
    T[-1, :ncore] = cstd
    for i in range(m):
        coef = cstd[basis[i]]
        if coef != 0.0:
            T[-1] -= coef * T[i]
    try:
        _bland_iterate(T, basis, ncore, tol, max_pivots)
    except _Unbounded:
        return LPSolution(SolveStatus.UNBOUNDED, None, None)

    xstd = np.zeros(ncore)
    xstd[basis] = T[:m, -1]
    x = xstd[:n] - xstd[n:2 * n]
    return LPSolution(SolveStatus.OPTIMAL, x, float(c @ x))
