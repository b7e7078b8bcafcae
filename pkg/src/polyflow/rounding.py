"""Affine embedding and John-position rounding.

The pipeline drops a flat polytope onto its full-dimensional free-variable
space (RREF or SVD null-space embedding), then rescales that space so the
maximum-volume inscribed ellipsoid becomes the unit ball.  Facets of the
resulting John polytope all touch the ball, which bounds how eccentric any
downstream chord geometry can get.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lp import SolveStatus, simplex_solve
from .polytope import HPolytope, PolytopeError


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class AffineEmbedding:
    """v_full = T v_free + tau with T of full column rank."""

    T: np.ndarray
    tau: np.ndarray
    kind: str  # "rref" or "svd"
    free_names: tuple[str, ...]

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        tau = np.asarray(self.tau, dtype=float).ravel()
        if T.shape[0] != tau.shape[0]:
            raise PolytopeError("T and tau row counts differ")
        if self.kind not in ("rref", "svd"):
            raise PolytopeError(f"unknown embedding kind {self.kind!r}")
        s = np.linalg.svd(T, compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            raise PolytopeError("embedding matrix is column-rank deficient")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "free_names", tuple(self.free_names))

    @property
    def full_dim(self) -> int:
        return self.T.shape[0]

    @property
    def dim(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class RoundingTransform:
    """Ellipsoid {E y + eps : ||y|| <= 1}; E symmetric positive definite."""

    E: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        eps = np.asarray(self.eps, dtype=float).ravel()
        if E.shape[0] != E.shape[1] or E.shape[0] != eps.shape[0]:
            raise PolytopeError("rounding transform shape mismatch")
        if np.max(np.abs(E - E.T)) > 1e-10 * max(1.0, np.max(np.abs(E))):
            raise PolytopeError("E must be symmetric")
        if np.any(np.linalg.eigvalsh(0.5 * (E + E.T)) <= 0):
            raise PolytopeError("E must be positive definite")
        object.__setattr__(self, "E", 0.5 * (E + E.T))
        object.__setattr__(self, "eps", eps)


@dataclass(frozen=True)
class TransformChain:
    """Embedding + rounding + the rounded (John) polytope they produce."""

    embedding: AffineEmbedding
    rounding: RoundingTransform
    john: HPolytope

    def lift(self, v: np.ndarray) -> np.ndarray:
        """John coordinates -> original model coordinates, batched on the last axis."""
        v = np.asarray(v, dtype=float)
        vd = v @ self.rounding.E.T + self.rounding.eps
        return vd @ self.embedding.T.T + self.embedding.tau

    def unlift(self, v_full: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        v_full = np.asarray(v_full, dtype=float)
        delta = v_full - self.embedding.tau
        vd = delta @ np.linalg.pinv(self.embedding.T).T
        resid = np.abs(vd @ self.embedding.T.T - delta).max()
        if resid > tol:
            raise PolytopeError(
                f"point off the affine subspace (residual {resid:.3e} > {tol:g})")
        return np.linalg.solve(self.rounding.E, (vd - self.rounding.eps).T).T

    def to_json(self) -> dict:
        return {
            "embedding": {
                "kind": self.embedding.kind,
                "T": self.embedding.T.tolist(),
                "tau": self.embedding.tau.tolist(),
                "free_names": list(self.embedding.free_names),
            },
            "rounding": {
                "E": self.rounding.E.tolist(),
                "eps": self.rounding.eps.tolist(),
            },
            "john": {
                "A": self.john.A.tolist(),
                "b": self.john.b.tolist(),
                "names": list(self.john.names) if self.john.names else None,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "TransformChain":
        emb = AffineEmbedding(
            T=np.array(data["embedding"]["T"]),
            tau=np.array(data["embedding"]["tau"]),
            kind=data["embedding"]["kind"],
            free_names=tuple(data["embedding"]["free_names"]),
        )
        rt = RoundingTransform(np.array(data["rounding"]["E"]),
                               np.array(data["rounding"]["eps"]))
        john = HPolytope(np.array(data["john"]["A"]), np.array(data["john"]["b"]),
                         names=data["john"]["names"], validate=False)
        return cls(emb, rt, john)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TransformChain":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def chebyshev_center(H: HPolytope) -> tuple[np.ndarray, float]:
    """Center and radius of the largest inscribed ball.

    Solved as max r subject to a_i.v + r ||a_i|| <= b_i.  Flat polytopes get
    radius 0 with a feasible center.
    """
    norms = np.linalg.norm(H.A, axis=1)
    Ax = np.hstack([H.A, norms[:, None]])
    c = np.zeros(H.dim + 1)
    c[-1] = 1.0
    sol = simplex_solve(c, Ax, H.b, maximize=True)
    if sol.status is SolveStatus.UNBOUNDED:
        raise PolytopeError("Chebyshev LP unbounded; polytope not bounded")
    if not sol.optimal:
        raise PolytopeError("Chebyshev LP infeasible; polytope empty")
    return sol.x[:-1], max(float(sol.objective), 0.0)


def rref_embedding(Splus: np.ndarray, hplus: np.ndarray, center: np.ndarray,
                   names=None, pivot_tol: float = 1e-10) -> AffineEmbedding:
    """Free-variable embedding from the reduced row echelon form of S+.

    Pivot columns are scanned in the original variable order, so the free
    variables are a subset of the model's variables (and keep their names).
    """
    S = np.atleast_2d(np.asarray(Splus, dtype=float))
    center = np.asarray(center, dtype=float).ravel()
    R = center.shape[0]
    if S.size == 0:
        S = S.reshape(0, R)
    h = np.asarray(hplus, dtype=float).ravel()
    if S.shape[1] != R or h.shape[0] != S.shape[0]:
        raise PolytopeError("equality system shape mismatch")
    if names is None:
        names = tuple(f"v{i}" for i in range(R))

    M = np.hstack([S, h[:, None]])
    scale = max(1.0, np.abs(S).max()) if S.size else 1.0
    pivot_cols: list[int] = []
    pivot_rows: list[int] = []
    row = 0
    for j in range(R):
        if row >= M.shape[0]:
            break
        sub = np.abs(M[row:, j])
        imax = int(np.argmax(sub)) + row if sub.size else row
        if sub.size == 0 or np.abs(M[imax, j]) <= pivot_tol * scale:
            continue
        M[[row, imax]] = M[[imax, row]]
        M[row] /= M[row, j]
        others = np.arange(M.shape[0]) != row
        M[others] -= np.outer(M[others, j], M[row])
        pivot_cols.append(j)
        pivot_rows.append(row)
        row += 1
    # rows beyond the last pivot must be ~zero, else the system is inconsistent
    if row < M.shape[0]:
        tail = M[row:]
        if np.abs(tail[:, :R]).max(initial=0.0) > 1e-8 * scale:
            raise PolytopeError("equality system not in row echelon form after elimination")
        if np.abs(tail[:, R]).max(initial=0.0) > 1e-8 * max(1.0, np.abs(h).max(initial=0.0)):
            raise PolytopeError("inconsistent equality system")

    free_cols = [j for j in range(R) if j not in pivot_cols]
    K = len(free_cols)
    if K == 0:
        raise PolytopeError("equality system pins every variable (dimension 0)")
    T = np.zeros((R, K))
    for k, j in enumerate(free_cols):
        T[j, k] = 1.0
        for r, p in zip(pivot_rows, pivot_cols):
            T[p, k] = -M[r, j]
    tau = center - T @ center[free_cols]
    emb = AffineEmbedding(T, tau, "rref", tuple(names[j] for j in free_cols))
    _check_embedding(S, h, emb)
    return emb


def svd_embedding(Splus: np.ndarray, center: np.ndarray, k: int | None = None,
                  names=None, threshold_rel: float = 1e-10) -> AffineEmbedding:
    """Orthonormal null-space embedding of S+ from its SVD."""
    center = np.asarray(center, dtype=float).ravel()
    R = center.shape[0]
    S = np.atleast_2d(np.asarray(Splus, dtype=float))
    if S.size == 0:
        S = S.reshape(0, R)
    if S.shape[1] != R:
        raise PolytopeError("equality system shape mismatch")
    if S.shape[0] == 0:
        return AffineEmbedding(np.eye(R), center, "svd",
                               tuple(f"z{i+1}" for i in range(R)))
    _, s, Vt = np.linalg.svd(S, full_matrices=True)
    s = np.concatenate([s, np.zeros(R - s.shape[0])]) if s.shape[0] < R else s
    thr = threshold_rel * s[0]
    if k is None:
        ambiguous = (s > thr / 10) & (s < thr * 10)
        if np.any(ambiguous):
            raise PolytopeError(
                "rank decision ambiguous near the SVD threshold; pass k explicitly")
        k = int(np.sum(s < thr))
    if k == 0:
        raise PolytopeError("equality system pins every variable (dimension 0)")
    T = Vt[R - k:].T
    emb = AffineEmbedding(T, center, "svd", tuple(f"z{i+1}" for i in range(k)))
    _check_embedding(S, np.asarray([]), emb, check_rhs=False)
    return emb


def _check_embedding(S, h, emb: AffineEmbedding, check_rhs: bool = True) -> None:
    if S.shape[0] == 0:
        return
    scale = max(1.0, np.abs(S).max())
    if np.abs(S @ emb.T).max() > 1e-7 * scale:
        raise PolytopeError("embedding does not annihilate the equality system")
    if check_rhs and np.abs(S @ emb.tau - h).max() > 1e-7 * max(1.0, np.abs(h).max(initial=0.0)):
        raise PolytopeError("embedding offset violates the equality system")


def project_to_full_dim(H: HPolytope, emb: AffineEmbedding,
                        zero_tol: float = 1e-12) -> HPolytope:
    """Inequalities in free-variable space: A T v <= b - A tau, zero rows dropped."""
    if H.dim != emb.full_dim:
        raise PolytopeError("embedding dimension mismatch")
    A = H.A @ emb.T
    b = H.b - H.A @ emb.tau
    norms = np.linalg.norm(A, axis=1) if A.shape[0] else np.zeros(0)
    zero = norms < zero_tol
    if np.any(b[zero] < -1e-9):
        raise PolytopeError("projection exposes an infeasible constraint")
    return HPolytope(A[~zero], b[~zero], names=emb.free_names, validate=False)


def max_volume_ellipsoid(H: HPolytope, tol: float = 1e-8, max_iter: int = 200,
                         x0: np.ndarray | None = None) -> RoundingTransform:
    """Maximum-volume inscribed ellipsoid by a primal-dual interior-point method.

    Maximizes log det E subject to ||E a_i|| + a_i.eps <= b_i.  The dual
    parameterization E^2 = (A' Y A)^{-1} reduces each iteration to one dense
    Newton system; steps are damped by a 0.99 fraction-to-boundary rule.
    """
    A0, b0 = H.A, H.b
    m, n = A0.shape
    if m < n + 1:
        raise PolytopeError("too few constraints for a bounded full-dimensional polytope")
    if x0 is None:
        x0, r0 = chebyshev_center(H)
        if r0 <= 1e-12:
            raise PolytopeError("polytope is not full-dimensional (Chebyshev radius 0)")
    x0 = np.asarray(x0, dtype=float).ravel()
    d = b0 - A0 @ x0
    if np.any(d <= 0):
        raise PolytopeError("MVE starting point is not strictly interior")

    # normalized problem: rows scaled so b = 1 and the start sits at the origin
    A = A0 / d[:, None]
    bmAx = np.ones(m)
    x = np.zeros(n)
    y = np.ones(m)
    z = np.ones(m)
    minmu = min(1e-8, tol)
    res = np.inf

    for it in range(max_iter):
        E2 = np.linalg.inv(A.T @ (y[:, None] * A))
        E2 = 0.5 * (E2 + E2.T)
        Q = A @ E2 @ A.T
        hvec = np.sqrt(np.clip(np.diag(Q), 1e-300, None))
        if it == 0:
            t = float(np.min(bmAx / hvec))
            y /= t * t
            hvec = t * hvec
            Q = t * t * Q
            z = np.maximum(1e-1, bmAx - hvec)
        yz = y * z
        yh = y * hvec
        gap = float(np.sum(yz)) / m
        rmu = max(min(0.5, gap) * gap, minmu)

        R1 = -A.T @ yh
        R2 = bmAx - hvec - z
        R3 = rmu - yz
        res = max(np.abs(R1).max(), np.abs(R2).max(), np.abs(R3).max())
        if res < tol * (1.0 + np.sqrt(m)) and rmu <= minmu * 1.0000001:
            E = _sym_sqrt(E2)
            eps = x0 + x
            _assert_contained(A0, b0, E, eps, tol)
            return RoundingTransform(E, eps)

        YQ = y[:, None] * Q
        G = YQ * YQ.T + np.diag(np.maximum(1e-12, 2.0 * yh * z))
        YA = y[:, None] * A
        Tm = np.linalg.solve(G, (hvec + z)[:, None] * YA)
        ATP = ((2.0 * yh)[:, None] * Tm - YA).T
        R3Dy = R3 / y
        R23 = R2 - R3Dy
        dx = np.linalg.solve(ATP @ A, R1 + ATP @ R23)
        Adx = A @ dx
        dyDy = np.linalg.solve(G, 2.0 * yh * (Adx - R23))
        dz = R3Dy - z * dyDy

        ax = -1.0 / min(float(np.min(-Adx / bmAx)), -0.5)
        ay = -1.0 / min(float(np.min(dyDy)), -0.5)
        az = -1.0 / min(float(np.min(dz / z)), -0.5)
        tau_step = min(0.9999, max(0.99, 1.0 - res))
        step = tau_step * min(1.0, ax, ay, az)

        x = x + step * dx
        y = y * (1.0 + step * dyDy)
        z = z + step * dz
        bmAx = bmAx - step * Adx

    raise ConvergenceError(
        f"MVE interior-point did not converge in {max_iter} iterations "
        f"(KKT residual {res:.3e}, tol {tol:g})")


def _sym_sqrt(M: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    if np.any(w <= 0):
        raise ConvergenceError("MVE shape matrix lost positive definiteness")
    return (U * np.sqrt(w)) @ U.T


def _assert_contained(A, b, E, eps, tol):
    slack = b - A @ eps - np.linalg.norm(A @ E, axis=1)
    if slack.min() < -10 * tol * max(1.0, np.abs(b).max()):
        raise ConvergenceError(f"MVE violates containment (worst slack {slack.min():.3e})")


def john_polytope(H: HPolytope, r: RoundingTransform,
                  emb: AffineEmbedding) -> TransformChain:
    """Rescale so the MVE becomes the unit ball: A E v <= b - A eps."""
    A = H.A @ r.E
    b = H.b - H.A @ r.eps
    norms = np.linalg.norm(A, axis=1)
    ratio = b / norms
    if np.min(ratio) < 1.0 - 1e-6:
        raise ConvergenceError(
            f"unit ball not inscribed after rounding (min b/||a|| = {np.min(ratio):.8f})")
    names = tuple(f"R_{n}" for n in emb.free_names)
    john = HPolytope(A, b, names=names, validate=False)
    return TransformChain(emb, r, john)


def round_polytope(H: HPolytope, embedding: str = "rref", tol: float = 1e-9,
                   mve_tol: float = 1e-8, mve_max_iter: int = 200) -> TransformChain:
    """Full rounding pipeline on a canonicalized polytope.

    Redundancy removal and implicit-equality detection run in the original
    space; the Chebyshev center there seeds the embedding offset, and a second
    Chebyshev solve in the projected space seeds the MVE.
    """
    from .polytope import find_implicit_equalities, remove_redundant

    H = remove_redundant(H, tol)
    Splus, hplus, residual = find_implicit_equalities(H, tol)
    center, _ = chebyshev_center(H)
    names = H.names if H.names is not None else tuple(f"v{i}" for i in range(H.dim))
    if embedding == "rref":
        emb = rref_embedding(Splus, hplus, center, names=names)
    elif embedding == "svd":
        emb = svd_embedding(Splus, center)
    else:
        raise PolytopeError(f"unknown embedding {embedding!r}")
    Hdag = project_to_full_dim(residual, emb)
    c0, r0 = chebyshev_center(Hdag)
    if r0 <= 1e-10:
        raise PolytopeError("projected polytope is not full-dimensional")
    rt = max_volume_ellipsoid(Hdag, tol=mve_tol, max_iter=mve_max_iter, x0=c0)
    return john_polytope(Hdag, rt, emb)
