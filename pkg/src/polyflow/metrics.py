"""Volume, normalizing-constant, and flow-quality estimators.

Two independent routes to the normalizer Z exist on purpose: rejection
sampling against a circumscribed ball (estimate_volume + estimate_Z) and
self-normalized importance weights from a trained flow (flow_metrics).
Agreement between them is one of the end-to-end checks, so neither is
allowed to call the other.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import gaussian_kde

from .mcmc import sample_ball
from .polytope import HPolytope, PolytopeError, solve_lp

__all__ = [
    "MetricsReport", "circumscribed_radius", "log_ball_volume",
    "estimate_volume", "estimate_Z", "flow_metrics", "density_grid_rows",
    "write_density_grid_csv", "write_metrics_json",
]


@dataclass(frozen=True)
class MetricsReport:
    kl_nats: float
    ess_pct: float
    z_estimate: float
    n_samples: int
    seed: int | None = None
    outside_pct: float | None = None

    def __post_init__(self):
        if not 0.0 < self.ess_pct <= 100.0:
            raise ValueError("ess_pct must be in (0, 100]")
        if self.outside_pct is not None and not 0.0 <= self.outside_pct <= 100.0:
            raise ValueError("outside_pct must be in [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)


def circumscribed_radius(H: HPolytope) -> float:
    """Radius of an origin-centered ball containing H, via 2·dim LPs.

    Uses the corner of the coordinate bounding box, which circumscribes the
    polytope but is cheap and deterministic.
    """
    corner = np.empty(H.dim)
    for i in range(H.dim):
        c = np.zeros(H.dim)
        c[i] = 1.0
        hi = solve_lp(c, H, maximize=True)
        lo = solve_lp(c, H, maximize=False)
        if not (hi.optimal and lo.optimal):
            raise PolytopeError("polytope is unbounded; no circumscribed ball")
        corner[i] = max(abs(hi.objective), abs(lo.objective))
    return float(np.linalg.norm(corner))


def log_ball_volume(dim: int, radius: float = 1.0) -> float:
    return (0.5 * dim * np.log(np.pi) - gammaln(0.5 * dim + 1.0)
            + dim * np.log(radius))


def estimate_volume(H: HPolytope, n: int, rng, phi: float | None = None,
                    return_samples: bool = False):
    """Rejection estimate of vol(H) from a circumscribed ball B(phi).

    Returns (vol, stderr) with the binomial standard error; with
    return_samples=True also returns the accepted points, which are exact
    uniform draws from H.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    if phi is None:
        phi = circumscribed_radius(H)
    draws = phi * sample_ball(rng, n, H.dim)
    inside = H.contains(draws)
    acc = float(np.mean(inside))
    if acc == 0.0:
        raise ValueError("zero acceptances; ball radius too large or region too thin")
    vol_ball = float(np.exp(log_ball_volume(H.dim, phi)))
    vol = vol_ball * acc
    stderr = vol_ball * float(np.sqrt(acc * (1.0 - acc) / n))
    if return_samples:
        return vol, stderr, draws[inside]
    return vol, stderr


def estimate_Z(target_logpdf, H: HPolytope, vol: float,
               uniform_samples: np.ndarray) -> float:
    """Normalizer of an unnormalized density over H.

    Z = vol(H) * mean(p(v_i)) over uniform draws v_i from H.
    """
    v = np.atleast_2d(np.asarray(uniform_samples, dtype=float))
    if not np.all(H.contains(v)):
        raise ValueError("uniform_samples must lie inside the polytope")
    logp = np.asarray(target_logpdf(v), dtype=float)
    return float(vol * np.exp(logsumexp(logp) - np.log(len(v))))


def flow_metrics(samples, logq, logp, Z: float | None = None,
                 H: HPolytope | None = None,
                 seed: int | None = None) -> MetricsReport:
    """Importance-weight quality metrics for a fitted density q vs target p.

    logp is the unnormalized target log-density at the q-samples. Weights
    w = p/q are handled in log space. KL(q||p) = mean(ln q - ln p) + ln Z
    where Z defaults to the self-normalized mean(w); pass an externally
    estimated Z to score against a known normalizer instead. ESS is
    (sum w)^2 / sum w^2 as a percent of the sample count, and z_estimate
    records the normalizer used.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    logq = np.asarray(logq, dtype=float).ravel()
    logp = np.asarray(logp, dtype=float).ravel()
    if not (len(samples) == len(logq) == len(logp)):
        raise ValueError("samples, logq, logp must be the same length")
    lw = logp - logq
    if not np.any(lw > -np.inf):
        raise ValueError("all importance weights are zero")
    m = float(np.max(lw))
    w = np.exp(lw - m)
    ess_pct = float((w.sum() ** 2) / np.sum(w * w) / len(w) * 100.0)
    log_z_kl = m + float(np.log(np.mean(w)))
    log_z = np.log(Z) if Z is not None else log_z_kl
    kl = float(np.mean(logq - logp) + log_z)
    outside = None
    if H is not None:
        outside = float(100.0 * np.mean(~H.contains(samples)))
    return MetricsReport(kl_nats=kl, ess_pct=ess_pct,
                         z_estimate=float(np.exp(log_z)),
                         n_samples=len(samples), seed=seed,
                         outside_pct=outside)


def density_grid_rows(samples: np.ndarray, names, gridsize: int = 100,
                      pad: float = 0.1):
    """Gaussian-KDE of every 2D marginal on a regular grid.

    Yields (name_x, name_y, x, y, density) tuples in deterministic order,
    ready for CSV. Grid bounds are the per-pair sample box padded by `pad`
    of its width.
    """
    samples = np.asarray(samples, dtype=float)
    names = list(names)
    K = samples.shape[1]
    for i in range(K):
        for j in range(i + 1, K):
            pts = samples[:, [i, j]].T
            kde = gaussian_kde(pts)
            lo = pts.min(axis=1)
            hi = pts.max(axis=1)
            span = hi - lo
            lo -= pad * span
            hi += pad * span
            xs = np.linspace(lo[0], hi[0], gridsize)
            ys = np.linspace(lo[1], hi[1], gridsize)
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            dens = kde(np.vstack([gx.ravel(), gy.ravel()]))
            for (x, y, d) in zip(gx.ravel(), gy.ravel(), dens):
                yield names[i], names[j], float(x), float(y), float(d)


def write_density_grid_csv(path, samples, names, gridsize: int = 100) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim_x", "dim_y", "x", "y", "density"])
        for row in density_grid_rows(samples, names, gridsize):
            writer.writerow([row[0], row[1],
                             format(row[2], ".17g"), format(row[3], ".17g"),
                             format(row[4], ".17g")])


def write_metrics_json(path, report: MetricsReport, extra: dict | None = None) -> None:
    data = report.to_dict()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True))
