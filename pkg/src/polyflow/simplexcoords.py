"""Vertex-based coordinates for polytope densities.

A point inside conv(V) gets the unique maximum-entropy barycentric weight
vector, which an isometric log-ratio transform flattens into Euclidean
coordinates. The image of that map is a linear subspace (dimension = the
polytope's), recovered from samples by SVD; projecting onto it and
standardizing gives low-dimensional coordinates suitable as a flow's base
space. The inverse chain and its Jacobian determinant give exact densities
back on the polytope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .polytope import VPolytope
from .rounding import ConvergenceError

__all__ = [
    "BarycentricCoord",
    "IlrBasis",
    "IlrProjection",
    "helmert_basis",
    "mec",
    "mec_inverse",
    "ilr",
    "ilr_inv",
    "fit_projection",
    "to_zt",
    "from_zt",
    "logdet_jvt",
]

LAMBDA_FLOOR = 1e-300


@dataclass(frozen=True)
class BarycentricCoord:
    """Weights over vertices: positive, summing to one (open simplex)."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1:
            raise ValueError("lam must be a vector")
        if np.any(lam <= 0):
            raise ValueError("barycentric weights must be strictly positive")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValueError("barycentric weights must sum to 1")
        object.__setattr__(self, "lam", lam)

    @property
    def entropy(self) -> float:
        return float(-np.sum(self.lam * np.log(self.lam)))


@dataclass(frozen=True)
class IlrBasis:
    """Orthonormal rows spanning the hyperplane orthogonal to all-ones."""

    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] - 1:
            raise ValueError("basis must be (n-1) x n")
        if np.abs(H @ H.T - np.eye(H.shape[0])).max() > 1e-12:
            raise ValueError("basis rows must be orthonormal")
        if np.abs(H.sum(axis=1)).max() > 1e-12:
            raise ValueError("basis rows must be orthogonal to ones")
        object.__setattr__(self, "H", H)

    @property
    def nparts(self) -> int:
        return self.H.shape[1]


def helmert_basis(nparts: int) -> IlrBasis:
    """Standard orthonormal contrast basis for a composition of `nparts`."""
    if nparts < 2:
        raise ValueError("need at least two parts")
    H = np.zeros((nparts - 1, nparts))
    for i in range(1, nparts):
        H[i - 1, :i] = 1.0
        H[i - 1, i] = -i
        H[i - 1] /= np.sqrt(i * (i + 1))
    return IlrBasis(H)


@dataclass(frozen=True)
class IlrProjection:
    """Subspace chart on ilr space: project, then standardize.

    P has orthonormal rows spanning the fitted subspace directions; zbar is
    the centering offset; mu and sigma standardize the projected training
    coordinates.
    """

    P: np.ndarray
    zbar: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        zbar = np.asarray(self.zbar, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if P.ndim != 2 or zbar.shape != (P.shape[1],) or mu.shape != (P.shape[0],):
            raise ValueError("inconsistent projection shapes")
        if sigma.shape != mu.shape or np.any(sigma <= 0):
            raise ValueError("sigma must be positive per coordinate")
        if np.abs(P @ P.T - np.eye(P.shape[0])).max() > 1e-10:
            raise ValueError("projection rows must be orthonormal")
        for name, val in (("P", P), ("zbar", zbar), ("mu", mu), ("sigma", sigma)):
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def to_json(self) -> dict:
        return {
            "P": self.P.tolist(),
            "zbar": self.zbar.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "IlrProjection":
        return cls(np.asarray(data["P"]), np.asarray(data["zbar"]),
                   np.asarray(data["mu"]), np.asarray(data["sigma"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "IlrProjection":
        return cls.from_json(json.loads(Path(path).read_text()))


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _mec_batch(v, V, tol, max_iter, min_weight):
    """Damped Newton on the dual of the max-entropy program, batched.

    V holds one vertex per row. The dual objective
    g(eta) = logsumexp(V eta) - eta.v is smooth and convex; its gradient is
    the primal constraint residual, so the convergence test doubles as the
    KKT check.
    """
    B, K = v.shape
    eta = np.zeros((B, K))

    def evaluate(eta, target):
        scores = eta @ V.T
        lse = logsumexp(scores, axis=1)
        lam = np.exp(scores - lse[:, None])
        grad = lam @ V - target
        return lse - np.einsum("bk,bk->b", eta, target), lam, grad

    g, lam, grad = evaluate(eta, v)
    for _ in range(max_iter):
        resid = np.abs(grad).max(axis=1)
        active = resid > tol
        if not np.any(active):
            break
        la, ga, va = lam[active], grad[active], v[active]
        hess = np.einsum("bn,nk,nj->bkj", la, V, V)
        m1 = la @ V
        hess -= m1[:, :, None] * m1[:, None, :]
        try:
            step = np.linalg.solve(hess, -ga[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular dual Hessian; is the point "
                                   "interior and the hull full-dimensional?") from exc
        # backtracking on the dual objective (Armijo). The slack term admits
        # steps whose true decrease sits below fp resolution of g, where the
        # undamped Newton step is the right move anyway.
        slope = np.einsum("bk,bk->b", ga, step)
        slack = 1e-14 * (1.0 + np.abs(g[active]))
        t = np.ones(active.sum())
        eta_act = eta[active]
        g_act = g[active]
        for _ in range(60):
            trial = eta_act + t[:, None] * step
            g_new, _, _ = evaluate(trial, va)
            bad = g_new > g_act + 1e-4 * t * slope + slack
            if not np.any(bad):
                break
            t[bad] *= 0.5
        eta[active] = eta_act + t[:, None] * step
        g, lam, grad = evaluate(eta, v)

    resid = np.abs(grad).max(axis=1)
    if np.any(resid > tol):
        raise ConvergenceError(
            "max-entropy weights did not converge; point may be outside or "
            f"on the boundary (residual {resid.max():.2e})")
    # boundary points have no finite dual optimum; Newton stops early once
    # the residual beats tol, leaving weights of order tol. Anything below
    # the floor cannot be told apart from a boundary solve.
    if min_weight > 0.0 and np.any(lam < min_weight):
        raise ConvergenceError("barycentric weight underflow: point is on "
                               "or numerically on the hull boundary")
    return lam


def mec(v, Vmat: VPolytope, tol: float = 1e-10, max_iter: int = 100,
        min_weight: float | None = None):
    """Maximum-entropy barycentric coordinates of interior point(s) v.

    Returns a BarycentricCoord for a single point, or an (n, nverts) array
    of weights for a batch.

    min_weight is the boundary-detection floor: solves whose smallest weight
    lands below it are treated as hull points and rejected. The default,
    max(100*tol, LAMBDA_FLOOR), is a heuristic for flagging points that sit
    numerically on the hull; deep interior points of elongated polytopes can
    carry legitimately tiny weights on far vertices, so callers that only
    need log-safe weights should pass LAMBDA_FLOOR, and callers that filter
    degenerate rows themselves may pass 0.0 to disable the check entirely.
    """
    vb, single = _as_batch(v)
    if vb.shape[1] != Vmat.dim:
        raise ValueError("point dimension does not match vertices")
    if min_weight is None:
        min_weight = max(100.0 * tol, LAMBDA_FLOOR)
    lam = _mec_batch(vb, Vmat.V.T, tol, max_iter, min_weight)
    if single:
        return BarycentricCoord(lam[0] / lam[0].sum())
    return lam / lam.sum(axis=1, keepdims=True)


def _lam_array(lam):
    if isinstance(lam, BarycentricCoord):
        return lam.lam
    return np.asarray(lam, dtype=float)


def mec_inverse(lam, Vmat: VPolytope):
    """Weighted vertex combination: the linear inverse of mec."""
    arr = _lam_array(lam)
    if np.any(arr <= 0):
        raise ValueError("weights must lie in the open simplex")
    return arr @ Vmat.V.T


def ilr(lam, basis: IlrBasis):
    """Isometric log-ratio coordinates z = H log(lam)."""
    arr = _lam_array(lam)
    if np.any(arr < LAMBDA_FLOOR):
        raise ValueError("weight underflow: cannot take logs")
    return np.log(arr) @ basis.H.T


def ilr_inv(z, basis: IlrBasis):
    """Back to the open simplex: closure of exp(H^T z)."""
    z = np.asarray(z, dtype=float)
    return softmax(z @ basis.H, axis=-1)


def fit_projection(Z, k: int, gap_tol: float = 1e-8) -> IlrProjection:
    """Recover the k-dimensional affine subspace holding the rows of Z.

    Centers by the row mean, takes the top-k right singular directions, and
    records mean/std of the projected coordinates for standardization.
    Requires a clean spectral gap: sigma_{k+1}/sigma_1 below gap_tol with
    sigma_k/sigma_1 above it.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < k + 1:
        raise ValueError("need at least k+1 sample rows")
    zbar = Z.mean(axis=0)
    _, s, vt = np.linalg.svd(Z - zbar, full_matrices=False)
    if s.size < k or s[k - 1] < gap_tol * s[0]:
        raise ValueError("sample cloud has rank below k")
    # k == ambient ilr dimension means the chart covers the whole space and
    # there is no trailing spectrum to test
    if s.size > k and s[k] >= gap_tol * s[0]:
        raise ValueError(
            f"no rank-{k} spectral gap: sigma ratio {s[k] / s[0]:.2e}")
    P = vt[:k]
    zp = (Z - zbar) @ P.T
    mu = zp.mean(axis=0)
    sigma = zp.std(axis=0)
    return IlrProjection(P, zbar, mu, sigma)


def to_zt(v, Vmat: VPolytope, basis: IlrBasis, proj: IlrProjection,
          min_weight: float | None = None):
    """Standardized subspace coordinates of interior point(s) v."""
    vb, single = _as_batch(v)
    lam = mec(vb, Vmat, min_weight=min_weight)
    z = ilr(lam, basis)
    zt = ((z - proj.zbar) @ proj.P.T - proj.mu) / proj.sigma
    return zt[0] if single else zt


def from_zt(zt, Vmat: VPolytope, basis: IlrBasis, proj: IlrProjection):
    """Inverse chart: standardized coordinates back to polytope points."""
    ztb, single = _as_batch(zt)
    z = (ztb * proj.sigma + proj.mu) @ proj.P + proj.zbar
    lam = ilr_inv(z, basis)
    v = lam @ Vmat.V.T
    return v[0] if single else v


def _logdet_single(zt, Vmat, basis, proj):
    z = (zt * proj.sigma + proj.mu) @ proj.P + proj.zbar
    lam = softmax(z @ basis.H)
    # d lam / dz = (diag(lam) - lam lam^T) H^T, chained with the fixed maps
    M = basis.H.T @ (proj.P.T * proj.sigma)
    inner = lam[:, None] * (M - (lam @ M))
    J = Vmat.V @ inner
    sign, logdet = np.linalg.slogdet(J)
    if sign == 0:
        raise ValueError("singular coordinate Jacobian")
    return logdet


def logdet_jvt(zt, Vmat: VPolytope, basis: IlrBasis, proj: IlrProjection):
    """log |det d v / d z^t| along the inverse chart, per point.

    Computed point by point so batched calls match a caller's loop exactly.
    """
    ztb, single = _as_batch(zt)
    out = np.array([_logdet_single(row, Vmat, basis, proj) for row in ztb])
    return float(out[0]) if single else out
