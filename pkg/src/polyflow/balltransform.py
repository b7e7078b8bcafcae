"""Homeomorphism between a polytope (origin interior) and the unit ball.

Forward map: d = ||v||, s = v/d, r = (d / alpha_max(s))^exponent, beta = r s,
where alpha_max(s) is the distance from the origin to the boundary along s.
With exponent 1/K this flattens the radial density the way uniform ball
sampling expects.  All Jacobians here are analytic and batched; nothing uses
automatic differentiation.

Points land on a non-differentiable chord when two facets are tied closest;
those are flagged (never averaged or perturbed).  Inputs may be single
vectors (K,) or batches (n, K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polytope import HPolytope

DENOM_TOL = 1e-14
TIE_MARGIN = 1e-10


class NonDifferentiablePointError(ValueError):
    """Raised for facet-tie chords and cylinder poles; carries batch indices."""

    def __init__(self, message: str, indices=None):
        super().__init__(message)
        self.indices = np.asarray(indices) if indices is not None else None


class OutsideDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BallMapConfig:
    """exponent None means the dimension-dependent default 1/K."""

    exponent: float | None = None
    closed: bool = False

    def __post_init__(self):
        if self.exponent is not None and not (0.0 < self.exponent <= 1.0):
            raise ValueError("exponent must lie in (0, 1]")

    def resolve_exponent(self, dim: int) -> float:
        return 1.0 / dim if self.exponent is None else self.exponent


def _as_batch(x, dim=None):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"expected dimension {dim}, got {x.shape[1]}")
    return x, single


def _chord(s: np.ndarray, H: HPolytope) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-direction (alpha_max, tightest row index, relative tie margin)."""
    ds = s @ H.A.T
    ratios = np.where(ds > DENOM_TOL, H.b[None, :] / np.where(ds > DENOM_TOL, ds, 1.0), np.inf)
    if np.any(np.all(~np.isfinite(ratios), axis=1)):
        raise OutsideDomainError("unbounded direction: no facet ahead of the ray")
    order = np.argsort(ratios, axis=1)
    first = order[:, 0]
    alpha = np.take_along_axis(ratios, first[:, None], axis=1)[:, 0]
    if ratios.shape[1] > 1:
        second = np.take_along_axis(ratios, order[:, 1][:, None], axis=1)[:, 0]
        with np.errstate(invalid="ignore"):
            margin = np.where(np.isfinite(second), (second - alpha) / alpha, np.inf)
    else:
        margin = np.full(alpha.shape, np.inf)
    return alpha, first, margin


def chord_scale(s, H: HPolytope):
    """Distance from the origin to the boundary along unit direction(s) s."""
    s, single = _as_batch(s, H.dim)
    norms = np.linalg.norm(s, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("direction must be a unit vector")
    alpha, _, _ = _chord(s, H)
    return float(alpha[0]) if single else alpha


def chord_tie_margin(v, H: HPolytope):
    """Relative gap between the two tightest facets along the ray through v.

    Use this to pre-filter points before requesting Jacobians; the origin
    gets margin +inf (no ray).
    """
    v, single = _as_batch(v, H.dim)
    d = np.linalg.norm(v, axis=1)
    margin = np.full(d.shape, np.inf)
    nz = d > 0
    if np.any(nz):
        _, _, m = _chord(v[nz] / d[nz, None], H)
        margin[nz] = m
    return float(margin[0]) if single else margin


def to_ball(v, H: HPolytope, cfg: BallMapConfig = BallMapConfig()):
    """Polytope point(s) -> ball point(s) beta with ||beta|| < 1 for interior input."""
    v, single = _as_batch(v, H.dim)
    e = cfg.resolve_exponent(H.dim)
    d = np.linalg.norm(v, axis=1)
    beta = np.zeros_like(v)
    nz = d > 0
    if np.any(nz):
        s = v[nz] / d[nz, None]
        alpha, _, _ = _chord(s, H)
        rho = d[nz] / alpha
        limit = 1.0 + 1e-12 if cfg.closed else 1.0
        if np.any(rho >= limit):
            raise OutsideDomainError("point on or outside the boundary")
        r = np.minimum(rho, 1.0) ** e
        beta[nz] = r[:, None] * s
    return beta[0] if single else beta


def from_ball(beta, H: HPolytope, cfg: BallMapConfig = BallMapConfig()):
    """Inverse of to_ball: v = alpha_max(s) * r^(1/exponent) * s."""
    beta, single = _as_batch(beta, H.dim)
    e = cfg.resolve_exponent(H.dim)
    rho = np.linalg.norm(beta, axis=1)
    limit = 1.0 + 1e-12 if cfg.closed else 1.0
    if np.any(rho >= limit):
        raise OutsideDomainError("point on or outside the unit ball")
    v = np.zeros_like(beta)
    nz = rho > 0
    if np.any(nz):
        s = beta[nz] / rho[nz, None]
        alpha, _, _ = _chord(s, H)
        v[nz] = (alpha * np.minimum(rho[nz], 1.0) ** (1.0 / e))[:, None] * s
    return v[0] if single else v


def jacobian_ball(v, H: HPolytope, cfg: BallMapConfig = BallMapConfig()
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Batched analytic Jacobian of from_ball at beta = to_ball(v).

    Returns (J, logabsdet) with J of shape (n, K, K).  Derivation: with
    p = rho^(1/e) the map is v = alpha(s) p s, and

        J = (alpha p / rho) (I - s s^T) + s w^T,
        w = -(p alpha^2 / (b_i rho)) P a_i + (alpha / e) rho^(1/e - 1) s,

    where (a_i, b_i) is the tightest facet and P = I - s s^T.  Only w's
    radial component survives in the determinant:
    log|det J| = K log alpha - log e + (K/e - K) log rho.
    """
    v, single = _as_batch(v, H.dim)
    K = H.dim
    e = cfg.resolve_exponent(K)
    d = np.linalg.norm(v, axis=1)
    J = np.zeros((v.shape[0], K, K))
    logdet = np.full(v.shape[0], -np.inf)

    nz = d > 0
    if np.any(~nz) and e >= 1.0:
        raise NonDifferentiablePointError(
            "origin is not differentiable for exponent 1", np.flatnonzero(~nz))
    if np.any(nz):
        idx = np.flatnonzero(nz)
        s = v[idx] / d[idx, None]
        alpha, tightest, margin = _chord(s, H)
        ties = margin < TIE_MARGIN
        if np.any(ties):
            raise NonDifferentiablePointError(
                f"{int(ties.sum())} point(s) on a facet-tie chord", idx[ties])
        rho = (d[idx] / alpha) ** e
        p = rho ** (1.0 / e)  # = d / alpha
        a = H.A[tightest]
        b = H.b[tightest]
        Pa = a - np.sum(a * s, axis=1, keepdims=True) * s
        w = (-(p * alpha ** 2 / (b * rho)))[:, None] * Pa \
            + ((alpha / e) * rho ** (1.0 / e - 1.0))[:, None] * s
        eye = np.eye(K)[None, :, :]
        proj = eye - s[:, :, None] * s[:, None, :]
        J[idx] = (alpha * p / rho)[:, None, None] * proj + s[:, :, None] * w[:, None, :]
        logdet[idx] = K * np.log(alpha) - np.log(e) + (K / e - K) * np.log(rho)
    if single:
        return J[0], float(logdet[0])
    return J, logdet


def cylinder_map(s) -> tuple[np.ndarray, np.ndarray]:
    """Peel sphere coordinates down to S^1: returns (theta, c) with c = [c_3..c_K].

    Each stage keeps the current last coordinate and renormalizes the prefix;
    theta = atan2(u_1, u_2) on the final circle.  Pole points (denominator
    below 1e-12) are flagged.
    """
    s, single = _as_batch(s)
    K = s.shape[1]
    if K < 2:
        raise ValueError("need at least two coordinates")
    u = s.copy()
    cs = []
    for D in range(K - 1, 1, -1):
        cD = u[:, D]
        denom_sq = 1.0 - cD ** 2
        bad = denom_sq <= 1e-24
        if np.any(bad):
            raise NonDifferentiablePointError("pole point in cylinder map",
                                              np.flatnonzero(bad))
        u[:, :D] /= np.sqrt(denom_sq)[:, None]
        cs.append(cD)
    theta = np.arctan2(u[:, 0], u[:, 1])
    c = np.stack(cs[::-1], axis=1) if cs else np.zeros((s.shape[0], 0))
    if single:
        return float(theta[0]), c[0]
    return theta, c


def inverse_cylinder(theta, c) -> np.ndarray:
    """Rebuild the sphere point from (theta, c); exact inverse of cylinder_map."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 0
    theta = np.atleast_1d(theta)
    c = np.asarray(c, dtype=float)
    if c.ndim == 1 and single:
        c = c[None, :]
    if c.size == 0:
        c = np.zeros((theta.shape[0], 0))
    if np.any(np.abs(c) >= 1.0):
        raise OutsideDomainError("|c_i| >= 1 is outside the open cylinder")
    u = np.stack([np.sin(theta), np.cos(theta)], axis=1)
    for j in range(c.shape[1]):
        cj = c[:, j]
        u = np.concatenate([u * np.sqrt(1.0 - cj ** 2)[:, None], cj[:, None]], axis=1)
    return u[0] if single else u


def ball_to_polar(beta) -> np.ndarray:
    """beta -> phi = [theta, c_3..c_K, r], stacked as one array."""
    beta, single = _as_batch(beta)
    rho = np.linalg.norm(beta, axis=1)
    if np.any(rho == 0):
        raise NonDifferentiablePointError("origin has no polar representation",
                                          np.flatnonzero(rho == 0))
    theta, c = cylinder_map(beta / rho[:, None])
    theta = np.atleast_1d(theta)
    c = c.reshape(beta.shape[0], -1)
    phi = np.concatenate([theta[:, None], c, rho[:, None]], axis=1)
    return phi[0] if single else phi


def polar_to_ball(phi) -> np.ndarray:
    """Inverse of ball_to_polar."""
    phi, single = _as_batch(phi)
    theta = phi[:, 0]
    c = phi[:, 1:-1]
    r = phi[:, -1]
    s = inverse_cylinder(theta, c)
    beta = r[:, None] * np.atleast_2d(s)
    return beta[0] if single else beta


def composite_logdet_vtheta(v, H: HPolytope, cfg: BallMapConfig = BallMapConfig()):
    """log|det| of the polar-cylinder -> ball -> polytope chain at v.

    The cylinder/polar factor is r^(K-1) * prod_j (1 - c_j^2)^((j-3)/2) for
    j = 3..K, multiplying the radial ball-map determinant.
    """
    v, single = _as_batch(v, H.dim)
    K = H.dim
    e = cfg.resolve_exponent(K)
    d = np.linalg.norm(v, axis=1)
    if np.any(d == 0):
        raise NonDifferentiablePointError("origin has no polar representation",
                                          np.flatnonzero(d == 0))
    s = v / d[:, None]
    alpha, _, margin = _chord(s, H)
    ties = margin < TIE_MARGIN
    if np.any(ties):
        raise NonDifferentiablePointError(
            f"{int(ties.sum())} point(s) on a facet-tie chord", np.flatnonzero(ties))
    rho = (d / alpha) ** e
    _, c = cylinder_map(s)
    c = c.reshape(v.shape[0], -1)
    weights = 0.5 * np.arange(c.shape[1])  # c_3 carries weight 0, c_4 carries 1/2, ...
    cyl_term = (np.log1p(-c ** 2) * weights[None, :]).sum(axis=1) if c.shape[1] else 0.0
    out = (K * np.log(alpha) - np.log(e) + (K / e - K) * np.log(rho)
           + (K - 1) * np.log(rho) + cyl_term)
    return float(out[0]) if single else out
