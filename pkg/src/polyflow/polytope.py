"""Polytope representations and constraint preprocessing.

A model arrives as equalities S v = h plus inequalities A_c v <= b_c (bound
rows folded in).  `canonicalize` stacks that into a single H-representation;
`remove_redundant` and `find_implicit_equalities` are the LP-based cleanup
passes that run before any embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lp import LPError, LPSolution, SolveStatus, simplex_solve

ZERO_ROW_TOL = 1e-12


class PolytopeError(ValueError):
    pass


def _as_matrix(x, ncols: int | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        a = a.reshape(0, ncols if ncols is not None else (a.shape[1] if a.ndim == 2 else 0))
    if a.ndim != 2:
        raise PolytopeError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PolytopeError("non-finite matrix entries")
    return a


@dataclass(frozen=True)
class HPolytope:
    """Closed region {v : A v <= b}; rows of A are never all-zero."""

    A: np.ndarray
    b: np.ndarray
    names: tuple[str, ...] | None = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A)
        b = np.asarray(self.b, dtype=float).ravel()
        if b.shape[0] != A.shape[0]:
            raise PolytopeError("A and b row counts differ")
        if not np.all(np.isfinite(b)):
            raise PolytopeError("non-finite right-hand side")
        if A.shape[0] and np.any(np.linalg.norm(A, axis=1) < ZERO_ROW_TOL):
            raise PolytopeError("all-zero constraint row (ill-posed)")
        if self.names is not None and len(self.names) != A.shape[1]:
            raise PolytopeError("names length != dimension")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
        if self.validate and A.shape[0] and not self._feasibility_witness():
            raise PolytopeError("empty polytope (no feasible point)")

    def _feasibility_witness(self, tol: float = 1e-9) -> bool:
        # Chebyshev-style LP: max r s.t. a.v + r||a|| <= b; nonempty iff r* >= -tol
        norms = np.linalg.norm(self.A, axis=1)
        Ax = np.hstack([self.A, norms[:, None]])
        c = np.zeros(self.dim + 1)
        c[-1] = 1.0
        sol = simplex_solve(c, Ax, self.b, maximize=True)
        if sol.status is SolveStatus.UNBOUNDED:
            return True
        return sol.optimal and sol.objective >= -tol

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def nrows(self) -> int:
        return self.A.shape[0]

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Row-wise membership check for points v of shape (..., dim)."""
        v = np.asarray(v, dtype=float)
        slack = self.b - v @ self.A.T
        return np.min(slack, axis=-1) >= -tol

    def slack(self, v: np.ndarray) -> np.ndarray:
        return self.b - np.asarray(v, dtype=float) @ self.A.T


@dataclass(frozen=True)
class VPolytope:
    """Vertex representation; columns of V are the vertices."""

    V: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        V = _as_matrix(self.V)
        if V.shape[1] < V.shape[0] + 1:
            raise PolytopeError("need at least dim+1 vertices for a full-dimensional polytope")
        object.__setattr__(self, "V", V)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    @property
    def nverts(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class CanonicalModel:
    """Equalities S v = h and inequalities A_c v <= b_c over named variables.

    Bound rows from the model file are folded into A_c at load time, so A_c
    is the complete inequality system.
    """

    S: np.ndarray
    h: np.ndarray
    A_c: np.ndarray
    b_c: np.ndarray
    variable_names: tuple[str, ...]

    def __post_init__(self):
        R = len(self.variable_names)
        S = _as_matrix(self.S, ncols=R)
        A_c = _as_matrix(self.A_c, ncols=R)
        h = np.asarray(self.h, dtype=float).ravel()
        b_c = np.asarray(self.b_c, dtype=float).ravel()
        if S.shape[1] != A_c.shape[1]:
            raise PolytopeError("S and A_c column counts differ")
        if len(self.variable_names) != S.shape[1]:
            raise PolytopeError("variable_names length != column count")
        if len(set(self.variable_names)) != len(self.variable_names):
            raise PolytopeError("duplicate variable names")
        if h.shape[0] != S.shape[0] or b_c.shape[0] != A_c.shape[0]:
            raise PolytopeError("right-hand side length mismatch")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(b_c))):
            raise PolytopeError("non-finite right-hand sides (polytope must be closed)")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "A_c", A_c)
        object.__setattr__(self, "b_c", b_c)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))

    @property
    def nvars(self) -> int:
        return self.S.shape[1]


def bound_rows(bounds, names) -> tuple[np.ndarray, np.ndarray]:
    """Turn per-variable [lo, hi] pairs into inequality rows."""
    R = len(names)
    if isinstance(bounds, dict):
        pairs = [bounds.get(n) for n in names]
    else:
        pairs = list(bounds)
        if pairs and len(pairs) != R:
            raise PolytopeError("bounds length != variable count")
    rows, rhs = [], []
    for i, pair in enumerate(pairs):
        if pair is None:
            continue
        lo, hi = float(pair[0]), float(pair[1])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise PolytopeError(f"bound for {names[i]} must be finite (closed polytope)")
        if lo > hi:
            raise PolytopeError(f"empty bound interval for {names[i]}")
        e = np.zeros(R)
        e[i] = 1.0
        rows += [e, -e]
        rhs += [hi, -lo]
    if not rows:
        return np.zeros((0, R)), np.zeros(0)
    return np.array(rows), np.array(rhs)


def load_model(source) -> CanonicalModel:
    """Read the model JSON (keys S, h, A_c, b_c, bounds, variable_names)."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            data = json.load(fh)
    else:
        data = source
    names = list(data["variable_names"])
    R = len(names)
    S = _as_matrix(data.get("S") or np.zeros((0, R)), ncols=R)
    h = np.asarray(data.get("h") or np.zeros(0), dtype=float)
    A_c = _as_matrix(data.get("A_c") or np.zeros((0, R)), ncols=R)
    b_c = np.asarray(data.get("b_c") or np.zeros(0), dtype=float)
    Ab, bb = bound_rows(data.get("bounds") or [], names)
    return CanonicalModel(S, h, np.vstack([A_c, Ab]), np.concatenate([b_c, bb]), tuple(names))


def save_model(model: CanonicalModel, path) -> None:
    data = {
        "S": model.S.tolist(),
        "h": model.h.tolist(),
        "A_c": model.A_c.tolist(),
        "b_c": model.b_c.tolist(),
        "bounds": [],
        "variable_names": list(model.variable_names),
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def canonicalize(model: CanonicalModel, validate: bool = True) -> HPolytope:
    """Stack equalities as paired inequalities: A = [S; -S; A_c], b = [h; -h; b_c]."""
    A = np.vstack([model.S, -model.S, model.A_c])
    b = np.concatenate([model.h, -model.h, model.b_c])
    return HPolytope(A, b, names=model.variable_names, validate=validate)


def solve_lp(c, H: HPolytope, maximize: bool = False) -> LPSolution:
    """Optimize a linear functional over H.  Deterministic (Bland pivoting)."""
    return simplex_solve(c, H.A, H.b, maximize=maximize)


def remove_redundant(H: HPolytope, tol: float = 1e-9) -> HPolytope:
    """Drop every inequality implied by the others.

    One LP per row: maximize a_i.v subject to the remaining active system; the
    row is redundant iff that optimum stays <= b_i + tol.  Rows are examined
    in order against (kept rows so far) + (rows not yet examined), which keeps
    the feasible set identical at every step.
    """
    active = np.ones(H.nrows, dtype=bool)
    for i in range(H.nrows):
        active[i] = False
        rest = np.flatnonzero(active)
        if rest.size == 0:
            active[i] = True
            continue
        sol = simplex_solve(H.A[i], H.A[rest], H.b[rest], maximize=True)
        if sol.status is SolveStatus.UNBOUNDED:
            active[i] = True
        elif sol.optimal:
            if sol.objective > H.b[i] + tol:
                active[i] = True
        else:
            raise LPError("redundancy LP infeasible; input polytope empty?")
    return HPolytope(H.A[active], H.b[active], names=H.names, validate=False)


def find_implicit_equalities(H: HPolytope, tol: float = 1e-9
                             ) -> tuple[np.ndarray, np.ndarray, HPolytope]:
    """Split H into equality rows S+ v = h+ and the residual inequalities.

    Two LPs per row: a row is an implicit equality iff max and min of a_i.v
    over the full system agree within tol.  Both members of a stacked +/-
    equality pair land in S+ (the embeddings tolerate duplicate rows).
    """
    eq_rows, eq_vals, keep = [], [], []
    for i in range(H.nrows):
        hi = simplex_solve(H.A[i], H.A, H.b, maximize=True)
        lo = simplex_solve(H.A[i], H.A, H.b, maximize=False)
        if hi.optimal and lo.optimal and hi.objective - lo.objective < tol:
            eq_rows.append(H.A[i])
            eq_vals.append(0.5 * (hi.objective + lo.objective))
        else:
            keep.append(i)
    Splus = np.array(eq_rows) if eq_rows else np.zeros((0, H.dim))
    hplus = np.array(eq_vals)
    residual = HPolytope(H.A[keep], H.b[keep], names=H.names, validate=False) if keep \
        else HPolytope(np.zeros((0, H.dim)), np.zeros(0), names=H.names, validate=False)
    return Splus, hplus, residual


def enumerate_vertices(H: HPolytope, tol: float = 1e-9) -> VPolytope:
    """Vertices of a bounded H-polytope by active-set enumeration.

    Solves every dim-subset of rows, so the cost is C(nrows, dim) linear
    systems; meant for the low-dimensional rounded models, not raw ones.
    Duplicate solutions from degenerate vertices are merged.
    """
    import itertools

    A, b = H.A, H.b
    m, d = A.shape
    if m < d:
        raise PolytopeError("fewer rows than dimensions; polytope is unbounded")
    scale = 1.0 + float(np.max(np.abs(b)))
    verts: list[np.ndarray] = []
    for rows in itertools.combinations(range(m), d):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.max(A @ v - b) > tol * scale:
            continue
        if not any(np.linalg.norm(v - w) < 1e-7 * scale for w in verts):
            verts.append(v)
    if len(verts) < d + 1:
        raise PolytopeError("found too few vertices; polytope may be degenerate")
    return VPolytope(np.array(verts).T)
