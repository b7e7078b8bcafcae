"""Worked example model and target densities for the experiments.

The flux model is a small metabolic network: eight species balances over
thirteen reactions, with a fixed substrate uptake and bounded biomass
production. Canonicalizing and rounding it gives a 4-dimensional John
polytope whose coordinates carry R_-prefixed names.

Target densities are Gaussian mixtures. The benchmark targets place one
component per chosen rounded axis just outside the inscribed unit ball;
weights and covariances ship as artifact defaults (equal weights, isotropic
0.05 variance) with hooks to substitute other values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .polytope import CanonicalModel, HPolytope, bound_rows

__all__ = [
    "SPECIES", "REACTIONS", "MixtureOfGaussians", "build_example_model",
    "rounded_mixture", "cube_polytope", "cube_mixture", "box_mixture_2d",
    "MEAN_RADIUS", "DEFAULT_VAR",
]

SPECIES = ("A", "B", "C", "D", "E", "F", "H", "cof")
REACTIONS = ("c_out", "v1", "v2", "v3", "v4", "v5", "v6", "v7",
             "d_out", "f_out", "biomass", "h_out", "a_in")

# component means sit just outside the inscribed unit ball
MEAN_RADIUS = 1.015
DEFAULT_VAR = 0.05

_STOICH = np.array([
    #        c_out  v1  v2  v3  v4  v5  v6  v7 d_out f_out biomass h_out a_in
    [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],    # A
    [0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.6, 0.0, 0.0],  # B
    [0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -0.1, 0.0, 0.0],   # C
    [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0],   # D
    [0.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0],# E
    [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, -2.0, 0.0, -1.0, 0.0, 0.0, 0.0],   # F
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -0.3, -1.0, 0.0],   # H
    [-1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],    # cof
])


def build_example_model() -> CanonicalModel:
    """Flux model: steady-state balances plus flux bounds.

    Bounds: 0.05 <= biomass <= 1.5, substrate uptake pinned at 10 (an
    implicit equality the cleanup passes will detect), everything else in
    [0, 100].
    """
    bounds = []
    for name in REACTIONS:
        if name == "biomass":
            bounds.append((0.05, 1.5))
        elif name == "a_in":
            bounds.append((10.0, 10.0))
        else:
            bounds.append((0.0, 100.0))
    A_c, b_c = bound_rows(bounds, REACTIONS)
    return CanonicalModel(_STOICH, np.zeros(len(SPECIES)), A_c, b_c, REACTIONS)


@dataclass(frozen=True)
class MixtureOfGaussians:
    """Finite Gaussian mixture with full covariances.

    logpdf omits any support restriction; restricting to a polytope is the
    caller's normalization problem.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None].repeat(len(w), axis=0)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if mu.shape[0] != len(w) or covs.shape != (len(w), mu.shape[1], mu.shape[1]):
            raise ValueError("component count mismatch between fields")
        try:
            chol = np.linalg.cholesky(covs)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariances must be positive definite") from exc
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def logpdf(self, v) -> np.ndarray:
        """Stable log-sum-exp over component Gaussians, batched."""
        v = np.asarray(v, dtype=float)
        single = v.ndim == 1
        pts = np.atleast_2d(v)
        if pts.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        comp = np.empty((len(pts), self.n_components))
        for i in range(self.n_components):
            L = self._chol[i]
            diff = pts - self.means[i]
            y = solve_triangular(L, diff.T, lower=True)
            quad = np.sum(y * y, axis=0)
            logdet = np.sum(np.log(np.diag(L)))
            comp[:, i] = (-0.5 * self.dim * np.log(2.0 * np.pi) - logdet
                          - 0.5 * quad)
        out = logsumexp(comp + np.log(self.weights), axis=1)
        return float(out[0]) if single else out

    @classmethod
    def isotropic(cls, means, var: float = DEFAULT_VAR,
                  weights=None) -> "MixtureOfGaussians":
        means = np.atleast_2d(np.asarray(means, dtype=float))
        m, k = means.shape
        if weights is None:
            weights = np.full(m, 1.0 / m)
        return cls(weights, means, var * np.eye(k))


def rounded_mixture(names, scale: float = MEAN_RADIUS,
                    var: float = DEFAULT_VAR,
                    axes=("R_v7", "R_biomass", "R_h_out"),
                    signs=(-1.0, 1.0, 1.0)) -> MixtureOfGaussians:
    """Three-component target in the rounded flux coordinates.

    One component per entry of axes, displaced by signs[i] * scale along
    that coordinate. Raises if a coordinate name is missing, so a wrong
    embedding surfaces loudly; pass axes explicitly when the embedding's
    free-variable choice differs from the default names.
    """
    names = list(names)
    if len(axes) != len(signs):
        raise ValueError("axes and signs must pair up")
    means = np.zeros((len(axes), len(names)))
    for i, (axis, sign) in enumerate(zip(axes, signs)):
        means[i, names.index(axis)] = sign * scale
    return MixtureOfGaussians.isotropic(means, var)


def cube_polytope(dim: int = 20) -> HPolytope:
    """[-1, 1]^dim, already in John position."""
    A = np.vstack([np.eye(dim), -np.eye(dim)])
    names = tuple(f"x{i + 1}" for i in range(dim))
    return HPolytope(A, np.ones(2 * dim), names=names)


def cube_mixture(dim: int = 20, scale: float = MEAN_RADIUS,
                 var: float = DEFAULT_VAR) -> MixtureOfGaussians:
    """Hypercube target: component i points along axis i for i in 1..3."""
    if dim < 3:
        raise ValueError("need at least 3 dimensions")
    means = np.zeros((3, dim))
    for i in range(3):
        means[i, i] = scale
    return MixtureOfGaussians.isotropic(means, var)


def box_mixture_2d(offset: float = 0.5,
                   var: float = DEFAULT_VAR) -> MixtureOfGaussians:
    """Two well-separated components on the unit box, for quick end-to-end
    runs."""
    means = np.array([[offset, offset], [-offset, -offset]])
    return MixtureOfGaussians.isotropic(means, var)
