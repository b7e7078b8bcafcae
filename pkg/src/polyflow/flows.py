"""Continuous normalizing flows on polytope coordinate systems.

A flow lives in one of three coordinate systems over the same polytope:

* ``euclid``: the polytope's own coordinates, base = uniform over the
  polytope (density needs its volume; sampling needs MCMC).
* ``ball``: the radial homeomorphism onto the open unit ball, base =
  uniform on the ball. Integration projects states back into the ball, so
  mapped-back samples can never leave the polytope.
* ``ait``: the standardized isometric-log-ratio chart of vertex weights,
  base = standard normal on the chart.

Training is conditional flow matching on straight-line interpolants between
independently paired base and target draws. Densities come from reverse
integration of the velocity field with divergence accumulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .balltransform import BallMapConfig, from_ball, jacobian_ball, to_ball
from .mcmc import run_chains, sample_ball
from .nets import Adam, VectorFieldNet
from .polytope import HPolytope, VPolytope
from .rounding import ConvergenceError
from .simplexcoords import (LAMBDA_FLOOR, IlrBasis, IlrProjection, from_zt,
                            logdet_jvt, to_zt)

__all__ = [
    "FLOW_KINDS", "ManifoldSpec", "BaseDist", "TrainConfig", "TrainedFlow",
    "geodesic_interpolant", "rcfm_step", "integrate", "project_polytope",
    "divergence_exact", "divergence_hutchinson", "train_flow",
    "parse_divergence",
]

FLOW_KINDS = ("euclid", "ball", "ait")


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _poly_to_json(H: HPolytope) -> dict:
    names = None if H.names is None else list(H.names)
    return {"A": H.A.tolist(), "b": H.b.tolist(), "names": names}


def _poly_from_json(data: dict) -> HPolytope:
    names = data["names"]
    return HPolytope(np.asarray(data["A"], dtype=float),
                     np.asarray(data["b"], dtype=float),
                     names=None if names is None else list(names))


# ---------------------------------------------------------------------------
# projections


def _project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {lam >= 0, sum lam = 1} (sort method)."""
    n = w.size
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, n + 1) > 0)[0][-1]
    return np.maximum(w - css[rho] / (rho + 1), 0.0)


def _project_h(y: np.ndarray, H: HPolytope, tol: float, max_iter: int) -> np.ndarray:
    """Dykstra's alternating projections over the halfspaces of H.

    The corrections lam are the KKT multipliers of the projection problem
    (y - x = sum_i lam_i a_i with lam >= 0 by construction), so feasibility
    plus complementary slackness certifies optimality. The iterate x alone
    is not a usable stopping signal: it can plateau for many cycles while
    the corrections still shift mass between facets.
    """
    A, b = H.A, H.b
    sq = np.sum(A * A, axis=1)
    x = y.astype(float).copy()
    lam = np.zeros(H.nrows)
    scale = 1.0 + float(y @ y)
    for _ in range(max_iter):
        for i in range(H.nrows):
            z = x + lam[i] * A[i]
            lam[i] = max((A[i] @ z - b[i]) / sq[i], 0.0)
            x = z - lam[i] * A[i]
        slack = b - A @ x
        if np.min(slack) >= -tol and np.max(lam * np.abs(slack) * sq) <= tol * scale:
            return x
    raise ConvergenceError("halfspace projection did not converge")


def _project_v(y: np.ndarray, V: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """min ||V lam - y||^2 over the simplex, by projected gradient.

    V has vertices as columns. The step size is 1/L with L the largest
    eigenvalue of V^T V, which makes the iteration a contraction; the exact
    simplex projection keeps iterates feasible. Terminates on the KKT
    conditions of the constrained problem.
    """
    G = V.T @ V
    c = V.T @ y
    L = float(np.linalg.norm(G, 2))
    lam = np.full(V.shape[1], 1.0 / V.shape[1])
    kkt_tol = tol * (1.0 + np.linalg.norm(y))
    for _ in range(max_iter):
        g = G @ lam - c
        # multiplier estimate: on the support g_i equals the multiplier nu,
        # off it g_i >= nu
        nu = float(lam @ g)
        support = lam > 1e-12
        stat = np.max(np.abs(g[support] - nu)) if np.any(support) else 0.0
        gap = max(0.0, nu - float(np.min(g)))
        if stat <= kkt_tol and gap <= kkt_tol:
            return V @ lam
        lam = _project_simplex(lam - g / L)
    raise ConvergenceError("simplex-constrained projection did not converge")


def project_polytope(y, poly, tol: float = 1e-9, max_iter: int = 20000):
    """Euclidean projection of point(s) y onto a polytope.

    Halfspace form uses Dykstra's alternating projections; vertex form
    solves the simplex-constrained least-squares problem by projected
    gradient with exact projection onto the weight simplex.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    if isinstance(poly, HPolytope):
        if pts.shape[1] != poly.dim:
            raise ValueError("dimension mismatch")
        out = np.array([p if np.max(poly.A @ p - poly.b) <= 0.0
                        else _project_h(p, poly, tol, max_iter) for p in pts])
    elif isinstance(poly, VPolytope):
        if pts.shape[1] != poly.V.shape[0]:
            raise ValueError("dimension mismatch")
        out = np.array([_project_v(p, poly.V, tol, max_iter) for p in pts])
    else:
        raise TypeError("poly must be an HPolytope or a VPolytope")
    return out[0] if single else out


@dataclass(frozen=True)
class ManifoldSpec:
    """Where integration states live and how off-manifold drift is repaired.

    kind "ball" retracts to the closed unit ball after every half and full
    integrator step; "euclid" optionally projects onto the polytope (off by
    default, the base density handles escapes); "ait" is an unconstrained
    chart. Each retraction is idempotent.
    """

    kind: str
    H: HPolytope | None = None
    project: bool = False

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind == "euclid" and self.project and self.H is None:
            raise ValueError("euclid projection requires the polytope")

    def project_point(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "ball":
            norms = np.linalg.norm(y, axis=-1, keepdims=True)
            return y / np.maximum(1.0, norms)
        if self.kind == "euclid" and self.project:
            return project_polytope(y, self.H)
        return y


@dataclass(frozen=True)
class BaseDist:
    """Reference distribution at t=0 of a flow."""

    kind: str  # "uniform_polytope" | "uniform_ball" | "normal"
    dim: int
    H: HPolytope | None = None
    log_volume: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform_polytope", "uniform_ball", "normal"):
            raise ValueError(f"unknown base kind {self.kind!r}")
        if self.kind == "uniform_polytope" and self.H is None:
            raise ValueError("uniform polytope base requires the polytope")

    def logpdf(self, h) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if h.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        if self.kind == "normal":
            return -0.5 * self.dim * np.log(2.0 * np.pi) - 0.5 * np.sum(h * h, axis=1)
        if self.kind == "uniform_ball":
            const = gammaln(self.dim / 2.0 + 1.0) - 0.5 * self.dim * np.log(np.pi)
            out = np.full(len(h), const)
            out[np.linalg.norm(h, axis=1) > 1.0 + 1e-9] = -np.inf
            return out
        if self.log_volume is None:
            raise ValueError("uniform polytope base has no volume attached")
        out = np.full(len(h), -self.log_volume)
        out[~self.H.contains(h)] = -np.inf
        return out

    def sample(self, n: int, rng, mcmc_opts: dict | None = None) -> np.ndarray:
        """Draw n base points. The polytope kind runs hit-and-run chains."""
        rng = _as_rng(rng)
        if n == 0:
            return np.zeros((0, self.dim))
        if self.kind == "normal":
            return rng.standard_normal((n, self.dim))
        if self.kind == "uniform_ball":
            return sample_ball(rng, n, self.dim)
        opts = {"n_chains": 8, "burn_in": 1000, "thin": 10,
                "seed": int(rng.integers(2 ** 62))}
        opts.update(mcmc_opts or {})
        # chain diagnostics need 100+ draws per chain; overdraw and subsample
        per = max(100, -(-n // opts["n_chains"]))
        draws, _ = run_chains(self.H, lambda v: np.zeros(len(v)), per, **opts)
        pool = draws.reshape(-1, self.dim)
        return pool[rng.permutation(len(pool))[:n]]

    def to_json(self) -> dict:
        return {"kind": self.kind, "dim": self.dim,
                "log_volume": self.log_volume,
                "polytope": None if self.H is None else _poly_to_json(self.H)}

    @classmethod
    def from_json(cls, data: dict) -> "BaseDist":
        H = None if data["polytope"] is None else _poly_from_json(data["polytope"])
        return cls(data["kind"], int(data["dim"]), H=H,
                   log_volume=data["log_volume"])


def parse_divergence(spec: str) -> tuple[str, int | None]:
    """'exact' -> ('exact', None); 'hutchinson:N' -> ('hutchinson', N)."""
    if spec == "exact":
        return "exact", None
    if spec.startswith("hutchinson"):
        _, _, tail = spec.partition(":")
        n = int(tail) if tail else 1
        if n < 1:
            raise ValueError("hutchinson probe count must be positive")
        return "hutchinson", n
    raise ValueError(f"unknown divergence mode {spec!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 35
    lr: float = 1e-3
    batch_size: int = 8192
    step_size: float = 0.05
    divergence: str = "exact"
    seed: int = 0
    hidden: tuple = (512,) * 6
    dtype: str = "float64"

    def __post_init__(self):
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError("step_size must be in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        parse_divergence(self.divergence)
        np.dtype(self.dtype)


# ---------------------------------------------------------------------------
# flow matching


def geodesic_interpolant(h0, h1, t):
    """Straight-line interpolant h^t and its conditional velocity h1 - h0."""
    h0 = np.asarray(h0)
    h1 = np.asarray(h1)
    tcol = np.asarray(t).reshape(-1, 1)
    return (1.0 - tcol) * h0 + tcol * h1, h1 - h0


def rcfm_step(net: VectorFieldNet, opt: Adam, h0, h1, t) -> float:
    """One regression step of the field onto the conditional velocity.

    Returns the batch loss mean ||psi(h^t, t) - (h1 - h0)||^2.
    """
    h0 = np.asarray(h0, dtype=net.dtype)
    h1 = np.asarray(h1, dtype=net.dtype)
    t = np.asarray(t, dtype=net.dtype)
    ht, target = geodesic_interpolant(h0, h1, t)
    x = net._stack(ht, t)
    out, _, _ = net.forward_cached(x)
    resid = out - target
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grads = net.backprop(x, 2.0 * resid / len(ht))
    opt.step(grads)
    return loss


def train_flow(net: VectorFieldNet, target_h: np.ndarray, base: BaseDist,
               config: TrainConfig, base_pool: np.ndarray | None = None):
    """Fit the field by conditional flow matching; returns the loss history.

    Every batch independently pairs target draws with fresh base draws
    (analytic kinds) or uniform resamples from base_pool (so a polytope
    base does not need an MCMC run per step).
    """
    rng = np.random.default_rng(config.seed)
    target_h = np.asarray(target_h, dtype=net.dtype)
    n = len(target_h)
    if n == 0:
        raise ValueError("no training samples")
    bsz = min(config.batch_size, n)
    steps = -(-n // bsz)
    if base.kind == "uniform_polytope" and base_pool is None:
        raise ValueError("polytope base training needs a pregenerated pool")
    opt = Adam(net, lr=config.lr)
    losses = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for s in range(steps):
            idx = perm[s * bsz:(s + 1) * bsz]
            h1 = target_h[idx]
            if base_pool is not None:
                h0 = base_pool[rng.integers(0, len(base_pool), len(idx))]
            else:
                h0 = base.sample(len(idx), rng)
            t = rng.random(len(idx))
            loss = rcfm_step(net, opt, h0, h1, t)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss} at epoch {epoch} step {s}; "
                    f"lr={config.lr}, batch={len(idx)}, dtype={net.dtype}")
            losses.append(loss)
    return losses


# ---------------------------------------------------------------------------
# integration and divergence


def divergence_exact(net, h, t) -> np.ndarray:
    """Trace of the state Jacobian via one directional pass per coordinate."""
    h = np.atleast_2d(h)
    div = np.zeros(len(h))
    for k in range(h.shape[1]):
        e = np.zeros_like(h)
        e[:, k] = 1.0
        _, d = net.jvp(h, t, e)
        div += d[:, k]
    return div


def divergence_hutchinson(net, h, t, n_probes: int, rng) -> np.ndarray:
    """Unbiased trace estimate from Rademacher probes eps^T J eps."""
    if n_probes < 1:
        raise ValueError("need at least one probe")
    rng = _as_rng(rng)
    h = np.atleast_2d(h)
    acc = np.zeros(len(h))
    for _ in range(n_probes):
        eps = rng.integers(0, 2, size=h.shape) * 2.0 - 1.0
        _, d = net.jvp(h, t, eps)
        acc += np.sum(eps * d, axis=1)
    return acc / n_probes


def _div_fn(net, divergence: str, rng):
    mode, n = parse_divergence(divergence)
    if mode == "exact":
        return lambda h, t: divergence_exact(net, h, t)
    rng = _as_rng(rng)
    return lambda h, t: divergence_hutchinson(net, h, t, n, rng)


def integrate(net, h, manifold: ManifoldSpec, step_size: float = 0.05,
              direction: str = "forward", with_divergence: bool = False,
              divergence: str = "exact", rng=None):
    """Fixed-step midpoint integration of dh/dt = psi(h, t) over [0, 1].

    States are retracted onto the manifold after each half and each full
    step. With with_divergence=True (reverse direction), also accumulates
    the midpoint quadrature of integral_0^1 div psi(h_t, t) dt along the
    trajectory and returns (h, divergence_integral).
    """
    if not 0.0 < step_size <= 1.0:
        raise ValueError("step_size must be in (0, 1]")
    if direction not in ("forward", "reverse"):
        raise ValueError("direction must be 'forward' or 'reverse'")
    h = np.atleast_2d(np.asarray(h, dtype=float)).copy()
    n_steps = max(1, round(1.0 / step_size))
    dt = 1.0 / n_steps
    acc = np.zeros(len(h))
    div_f = _div_fn(net, divergence, rng) if with_divergence else None
    sign = 1.0 if direction == "forward" else -1.0
    t = 0.0 if direction == "forward" else 1.0
    for _ in range(n_steps):
        t_mid = t + sign * 0.5 * dt
        mid = manifold.project_point(h + sign * 0.5 * dt * net.forward(h, t))
        if div_f is not None:
            acc += dt * div_f(mid, t_mid)
        h = manifold.project_point(h + sign * dt * net.forward(mid, t_mid))
        t += sign * dt
    return (h, acc) if with_divergence else h


# ---------------------------------------------------------------------------
# trained flow bundle


@dataclass
class TrainedFlow:
    """A fitted field plus everything needed to evaluate and sample it.

    kind selects the coordinate system; H is the polytope in flow space
    (euclid domain, or the ball map's polytope), and the ait kind instead
    carries its vertex matrix, ilr basis and standardizing chart.
    """

    kind: str
    net: VectorFieldNet
    base: BaseDist
    step_size: float = 0.05
    H: HPolytope | None = None
    ball_cfg: BallMapConfig | None = None
    vmat: VPolytope | None = None
    basis: IlrBasis | None = None
    proj: IlrProjection | None = None

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if self.kind in ("euclid", "ball") and self.H is None:
            raise ValueError(f"{self.kind} flow requires the polytope")
        if self.kind == "ball" and self.ball_cfg is None:
            self.ball_cfg = BallMapConfig()
        if self.kind == "ait" and (self.vmat is None or self.basis is None
                                   or self.proj is None):
            raise ValueError("ait flow requires vertex matrix, basis and chart")

    @property
    def manifold(self) -> ManifoldSpec:
        if self.kind == "euclid":
            return ManifoldSpec("euclid", H=self.H, project=False)
        return ManifoldSpec(self.kind)

    def to_flow_coords(self, v) -> np.ndarray:
        if self.kind == "euclid":
            return np.asarray(v, dtype=float)
        if self.kind == "ball":
            return to_ball(v, self.H, self.ball_cfg)
        # log-safety floor only: the flow's own samples are strictly interior
        # but can sit closer to the hull than the boundary heuristic allows
        return to_zt(v, self.vmat, self.basis, self.proj,
                     min_weight=LAMBDA_FLOOR)

    def from_flow_coords(self, h) -> np.ndarray:
        if self.kind == "euclid":
            return np.asarray(h, dtype=float)
        if self.kind == "ball":
            return from_ball(h, self.H, self.ball_cfg)
        return from_zt(h, self.vmat, self.basis, self.proj)

    def _coord_logdet(self, v, h) -> np.ndarray:
        """log |det d v / d h| of the inverse coordinate map, per point."""
        if self.kind == "euclid":
            return np.zeros(len(v))
        if self.kind == "ball":
            _, ld = jacobian_ball(v, self.H, self.ball_cfg)
            return np.atleast_1d(ld)
        return np.atleast_1d(logdet_jvt(h, self.vmat, self.basis, self.proj))

    def log_density(self, v, divergence: str | None = None, rng=None) -> np.ndarray:
        """Model log-density in polytope coordinates.

        Maps v into flow space, integrates the field in reverse while
        accumulating its divergence, evaluates the base at the pulled-back
        point and subtracts the divergence integral and the coordinate-map
        volume factor.
        """
        v = np.asarray(v, dtype=float)
        single = v.ndim == 1
        vb = np.atleast_2d(v)
        h = np.atleast_2d(self.to_flow_coords(vb))
        h0, div_int = integrate(
            self.net, h, self.manifold, self.step_size, "reverse",
            with_divergence=True,
            divergence=divergence or "exact", rng=rng)
        logq = self._pullback_base_logpdf(h0) - div_int - self._coord_logdet(vb, h)
        return float(logq[0]) if single else logq

    def log_density_flow_space(self, h, divergence: str | None = None,
                               rng=None) -> np.ndarray:
        """Model log-density of flow-space states (no coordinate factor)."""
        h = np.atleast_2d(np.asarray(h, dtype=float))
        h0, div_int = integrate(
            self.net, h, self.manifold, self.step_size, "reverse",
            with_divergence=True, divergence=divergence or "exact", rng=rng)
        return self._pullback_base_logpdf(h0) - div_int

    def _pullback_base_logpdf(self, h0: np.ndarray) -> np.ndarray:
        """Base log-density at reverse-integration endpoints.

        The discrete reverse map is not the exact inverse of the forward
        map, so an endpoint can overshoot a boundary-supported base by
        integration error; a zero there would be an artifact of the
        mismatch, not a property of the flow. Endpoints inside a collar of
        one squared step (the midpoint scheme's global error order) are
        retracted onto the support; deeper violations keep density zero.
        """
        if self.base.kind == "uniform_polytope":
            depth = -np.min(self.base.H.slack(h0), axis=-1)
            shallow = (depth > 0.0) & (depth <= self.step_size ** 2)
            if np.any(shallow):
                h0 = h0.copy()
                h0[shallow] = project_polytope(h0[shallow], self.base.H)
        return self.base.logpdf(h0)

    def sample(self, n: int, rng=None, mcmc_opts: dict | None = None,
               base_pool: np.ndarray | None = None) -> np.ndarray:
        """Draw n model samples in polytope coordinates."""
        rng = _as_rng(rng)
        if n == 0:
            return np.zeros((0, self.base.dim))
        if base_pool is not None:
            h0 = base_pool[rng.integers(0, len(base_pool), n)]
        else:
            h0 = self.base.sample(n, rng, mcmc_opts=mcmc_opts)
        h1 = integrate(self.net, h0, self.manifold, self.step_size, "forward")
        if self.kind == "ball":
            # retraction can park states exactly on the sphere; nudge them
            # inside so the inverse map (open ball) accepts them
            r = np.linalg.norm(h1, axis=1)
            hot = r >= 1.0 - 1e-12
            if np.any(hot):
                h1[hot] *= ((1.0 - 1e-12) / r[hot])[:, None]
        return self.from_flow_coords(h1)

    def to_json(self) -> dict:
        data = {
            "kind": self.kind,
            "step_size": self.step_size,
            "net": self.net.to_json(),
            "base": self.base.to_json(),
            "polytope": None if self.H is None else _poly_to_json(self.H),
            "ball_cfg": None,
            "vrep": None,
            "ilr_basis": None,
            "chart": None,
        }
        if self.ball_cfg is not None:
            data["ball_cfg"] = {"exponent": self.ball_cfg.exponent,
                                "closed": self.ball_cfg.closed}
        if self.vmat is not None:
            data["vrep"] = {"V": self.vmat.V.tolist(),
                            "names": list(self.vmat.names or [])}
        if self.basis is not None:
            data["ilr_basis"] = self.basis.H.tolist()
        if self.proj is not None:
            data["chart"] = self.proj.to_json()
        return data

    @classmethod
    def from_json(cls, data: dict, dtype=np.float64) -> "TrainedFlow":
        kind = data["kind"]
        H = None if data["polytope"] is None else _poly_from_json(data["polytope"])
        cfg = None
        if data["ball_cfg"] is not None:
            cfg = BallMapConfig(exponent=data["ball_cfg"]["exponent"],
                                closed=data["ball_cfg"]["closed"])
        vmat = None
        if data["vrep"] is not None:
            vmat = VPolytope(np.asarray(data["vrep"]["V"], dtype=float),
                             names=data["vrep"]["names"] or None)
        basis = None
        if data["ilr_basis"] is not None:
            basis = IlrBasis(np.asarray(data["ilr_basis"], dtype=float))
        proj = None
        if data["chart"] is not None:
            proj = IlrProjection.from_json(data["chart"])
        return cls(kind=kind,
                   net=VectorFieldNet.from_json(data["net"], dtype=dtype),
                   base=BaseDist.from_json(data["base"]),
                   step_size=float(data["step_size"]),
                   H=H, ball_cfg=cfg, vmat=vmat, basis=basis, proj=proj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path, dtype=np.float64) -> "TrainedFlow":
        return cls.from_json(json.loads(Path(path).read_text()), dtype=dtype)
