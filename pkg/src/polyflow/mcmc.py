"""Multi-proposal hit-and-run sampling over polytope-supported densities.

Each step picks a random direction, finds the feasible chord through the
current point, draws M proposals on that chord, and moves by a categorical
draw over [current, proposals] with Peskun or Barker transition weights.
Proposals share the step's direction, so the pairwise proposal densities
reduce to scalar densities on chord offsets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

from .polytope import HPolytope, PolytopeError

__all__ = [
    "ProposalDist",
    "ChordProposal",
    "KernelKind",
    "ChainState",
    "ChainDiagnostics",
    "chord_extremes",
    "propose",
    "transition_weights",
    "run_chains",
    "rhat",
    "ess_autocorr",
    "sample_sphere",
    "sample_ball",
    "write_samples_csv",
    "write_diagnostics_json",
]

# relative inset of the chord interval before proposing; keeps every retained
# state strictly feasible without breaking detailed balance (the inset chord
# is a function of the chord alone, not of the current position on it)
CHORD_INSET = 1e-9
_DS_TOL = 1e-13


class KernelKind(str, Enum):
    PESKUN = "peskun"
    BARKER = "barker"


@dataclass(frozen=True)
class ProposalDist:
    """Proposal family for chord offsets.

    kind "uniform" draws uniformly on the feasible chord. kind "truncnorm"
    draws from a normal centered on the current point, truncated to the
    chord, with variance s'Sigma s along direction s (Sigma defaults to I).
    """

    kind: str = "uniform"
    Sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "truncnorm"):
            raise ValueError(f"unknown proposal kind: {self.kind!r}")
        if self.Sigma is not None:
            S = np.asarray(self.Sigma, dtype=float)
            if S.ndim != 2 or S.shape[0] != S.shape[1]:
                raise ValueError("Sigma must be a square matrix")
            if not np.allclose(S, S.T, atol=1e-12):
                raise ValueError("Sigma must be symmetric")
            if np.any(np.linalg.eigvalsh(S) <= 0):
                raise ValueError("Sigma must be positive definite")
            object.__setattr__(self, "Sigma", S)

    def chord_sigma(self, s) -> float:
        s = np.asarray(s, dtype=float)
        if self.Sigma is None:
            return float(np.sqrt(s @ s))
        return float(np.sqrt(s @ self.Sigma @ s))

    def on_chord(self, s, alpha_min: float, alpha_max: float) -> "ChordProposal":
        return ChordProposal(self.kind, float(alpha_min), float(alpha_max),
                             self.chord_sigma(s))


@dataclass(frozen=True)
class ChordProposal:
    """A ProposalDist resolved onto one chord: scalar density over offsets."""

    kind: str
    lo: float
    hi: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.hi - self.lo < 1e-14:
            raise ValueError("degenerate chord interval")
        if self.kind == "truncnorm" and self.sigma <= 0:
            raise ValueError("chord variance must be positive")

    def sample(self, u):
        """Map uniform draws in [0,1) to proposal offsets (exact inverse CDF)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        a = self.lo / self.sigma
        b = self.hi / self.sigma
        return self.sigma * _truncnorm_ppf(u, a, b)

    def logpdf(self, x, center):
        """log q(x | center): density of a fresh proposal from `center`."""
        x = np.asarray(x, dtype=float)
        center = np.asarray(center, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        if self.kind == "uniform":
            out = np.full(np.broadcast(x, center).shape, -np.log(self.hi - self.lo))
            return np.where(inside, out, -np.inf)
        z = (x - center) / self.sigma
        a = (self.lo - center) / self.sigma
        b = (self.hi - center) / self.sigma
        out = (-0.5 * z * z - 0.5 * np.log(2 * np.pi) - np.log(self.sigma)
               - _truncnorm_logz(a, b))
        return np.where(inside, out, -np.inf)


@dataclass(frozen=True)
class ChainState:
    """Single-chain bookkeeping for custom stepping loops."""

    current: np.ndarray
    rng_seed: int
    step_index: int = 0


@dataclass(frozen=True)
class ChainDiagnostics:
    rhat: np.ndarray
    ess_fraction: np.ndarray

    def __post_init__(self):
        ess = np.asarray(self.ess_fraction, dtype=float)
        if np.any(ess <= 0) or np.any(ess > 100):
            raise ValueError("ess_fraction must lie in (0, 100]")
        object.__setattr__(self, "rhat", np.asarray(self.rhat, dtype=float))
        object.__setattr__(self, "ess_fraction", ess)

    def to_dict(self, names=None) -> dict:
        names = names or [f"x{i}" for i in range(self.rhat.size)]
        return {
            str(n): {"rhat": float(r), "ess_pct": float(e)}
            for n, r, e in zip(names, self.rhat, self.ess_fraction)
        }


def _truncnorm_logz(a, b):
    # log(Phi(b) - Phi(a)), reflected into the left tail where log_ndtr is sharp
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)
    la = log_ndtr(aa)
    lb = log_ndtr(bb)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


def _truncnorm_ppf(u, a, b):
    # quantile of N(0,1) truncated to [a, b]; exact in both tails
    u = np.asarray(u, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), u.shape)
    b = np.broadcast_to(np.asarray(b, dtype=float), u.shape)
    flip = a > 0
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)
    uu = np.where(flip, 1.0 - u, u)
    la = log_ndtr(aa)
    lb = log_ndtr(bb)
    logp = la + np.log1p(uu * np.expm1(lb - la))
    x = ndtri_exp(np.minimum(logp, 0.0))
    return np.where(flip, -x, x)


def _chord_extremes_batch(dv, ds):
    """Feasible offset interval per row batch: dv = b - Av > 0, ds = As."""
    pos = ds > _DS_TOL
    neg = ds < -_DS_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dv / ds
    amax = np.min(np.where(pos, ratio, np.inf), axis=-1)
    amin = np.max(np.where(neg, ratio, -np.inf), axis=-1)
    if np.any(~np.isfinite(amax)) or np.any(~np.isfinite(amin)):
        raise PolytopeError("chord is unbounded; polytope must be bounded")
    return amin, amax


def chord_extremes(v, s, H: HPolytope):
    """Feasible interval [alpha_min, alpha_max] for moving from v along s."""
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    dv = H.b - H.A @ v
    if np.any(dv < 0):
        raise PolytopeError("point is not feasible")
    amin, amax = _chord_extremes_batch(dv, H.A @ s)
    return float(amin), float(amax)


def propose(alpha_min, alpha_max, M: int, dist: ProposalDist, s, rng):
    """Draw M proposal offsets on the chord [alpha_min, alpha_max]."""
    chord = dist.on_chord(s, alpha_min, alpha_max)
    return chord.sample(rng.random(M))


def transition_weights(logpi, alphas, dist, kernel) -> np.ndarray:
    """Probability vector over [current, proposals...].

    logpi and alphas are length M+1 with index 0 the current state
    (alphas[0] = 0). dist must be a ChordProposal when the proposal family
    is not uniform, since the pairwise densities depend on the chord.
    """
    logpi = np.asarray(logpi, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if logpi.shape != alphas.shape or logpi.ndim != 1:
        raise ValueError("logpi and alphas must be equal-length vectors")
    if not np.isfinite(logpi[0]):
        raise ValueError("current state must have finite log-density")
    kernel = KernelKind(kernel)
    M = logpi.size - 1

    if isinstance(dist, ProposalDist) and dist.kind != "uniform":
        raise ValueError("non-uniform proposals need a chord-resolved "
                         "ChordProposal for transition weights")
    if isinstance(dist, ChordProposal) and dist.kind != "uniform":
        # q(a_i | rest) = prod_{j != i} q(a_i | a_j), all on the same chord
        pair = dist.logpdf(alphas[:, None], alphas[None, :])
        np.fill_diagonal(pair, 0.0)
        logq = pair.sum(axis=1)
    else:
        logq = np.zeros(M + 1)  # constant proposal density cancels

    score = logpi + logq
    if kernel is KernelKind.BARKER:
        w = np.exp(score - score.max())
        return w / w.sum()

    logratio = score[1:] - score[0]
    w = np.empty(M + 1)
    w[1:] = np.exp(np.minimum(0.0, logratio)) / M
    w[0] = 1.0 - w[1:].sum()
    assert w[0] > -1e-12, "Peskun stay-weight went negative"
    w[0] = max(w[0], 0.0)
    return w


def sample_sphere(rng, n: int, dim: int) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sample_ball(rng, n: int, dim: int) -> np.ndarray:
    s = sample_sphere(rng, n, dim)
    return s * (rng.random(n) ** (1.0 / dim))[:, None]


def _select(weights, u):
    # categorical draw via the cumulative sums; index 0 keeps the state
    cum = np.cumsum(weights, axis=-1)
    k = np.sum(cum <= u[..., None], axis=-1)
    return np.minimum(k, weights.shape[-1] - 1)


def run_chains(H: HPolytope, target_logpdf, n_samples: int, M: int = 1,
               n_chains: int = 8, burn_in: int = 1000, thin: int = 10,
               dist: ProposalDist | None = None, kernel="peskun",
               seed: int = 0, chunk: int = 4096):
    """Run hit-and-run chains; returns (samples, ChainDiagnostics).

    target_logpdf must accept an (n, K) batch and return (n,) log-densities;
    it is called concurrently across chains and must be pure. samples has
    shape (n_chains, n_samples, K): every thin-th state after burn_in.

    Chains draw from independent per-chain RNG streams spawned from `seed`;
    adding or removing chains never perturbs the others. Randomness is
    pregenerated per chunk of C steps: each chain draws C*K direction
    normals, then C*M proposal uniforms, then C selection uniforms, so a
    trajectory is reproducible for fixed (seed, chunk, M).
    """
    if dist is None:
        dist = ProposalDist()
    kernel = KernelKind(kernel)
    K = H.dim
    A, b = H.A, H.b
    row_norms = np.linalg.norm(A, axis=1)
    if np.any(b <= 0):
        raise PolytopeError("origin must be interior to initialize from a ball")
    r_init = min(1.0, float(np.min(b / row_norms)))

    seqs = np.random.SeedSequence(seed).spawn(n_chains)
    gens = [np.random.Generator(np.random.PCG64(s)) for s in seqs]

    v = np.stack([r_init * sample_ball(g, 1, K)[0] for g in gens])
    logpi = np.asarray(target_logpdf(v), dtype=float)
    if not np.all(np.isfinite(logpi)):
        raise ValueError("target log-density not finite at an interior point")

    if dist.kind == "truncnorm":
        Sigma = dist.Sigma if dist.Sigma is not None else np.eye(K)

    uniform_peskun = dist.kind == "uniform" and kernel is KernelKind.PESKUN
    uniform_barker = dist.kind == "uniform" and kernel is KernelKind.BARKER

    total = burn_in + n_samples * thin
    out = np.empty((n_chains, n_samples, K))
    step = 0
    while step < total:
        steps = min(chunk, total - step)
        normals = np.stack([g.standard_normal((steps, K)) for g in gens])
        u_prop = np.stack([g.random((steps, M)) for g in gens])
        u_sel = np.stack([g.random(steps) for g in gens])

        for t in range(steps):
            s = normals[:, t, :]
            s /= np.linalg.norm(s, axis=1, keepdims=True)
            dv = b[None, :] - v @ A.T
            amin, amax = _chord_extremes_batch(dv, s @ A.T)
            width = amax - amin
            lo = amin + CHORD_INSET * width
            hi = amax - CHORD_INSET * width

            if dist.kind == "uniform":
                alphas = lo[:, None] + u_prop[:, t, :] * (hi - lo)[:, None]
            else:
                sig = np.sqrt(np.einsum("ij,jk,ik->i", s, Sigma, s))
                alphas = sig[:, None] * _truncnorm_ppf(
                    u_prop[:, t, :], (lo / sig)[:, None], (hi / sig)[:, None])

            cand = v[:, None, :] + alphas[:, :, None] * s[:, None, :]
            logpi_cand = np.asarray(
                target_logpdf(cand.reshape(-1, K)), dtype=float
            ).reshape(n_chains, M)

            if uniform_peskun:
                ratio = logpi_cand - logpi[:, None]
                w = np.empty((n_chains, M + 1))
                w[:, 1:] = np.exp(np.minimum(0.0, ratio)) / M
                w[:, 0] = 1.0 - w[:, 1:].sum(axis=1)
            elif uniform_barker:
                score = np.concatenate([logpi[:, None], logpi_cand], axis=1)
                w = np.exp(score - score.max(axis=1, keepdims=True))
                w /= w.sum(axis=1, keepdims=True)
            else:
                a_full = np.concatenate(
                    [np.zeros((n_chains, 1)), alphas], axis=1)
                lp_full = np.concatenate(
                    [logpi[:, None], logpi_cand], axis=1)
                w = np.empty((n_chains, M + 1))
                for c in range(n_chains):
                    chord = ChordProposal(dist.kind, lo[c], hi[c], sig[c])
                    w[c] = transition_weights(
                        lp_full[c], a_full[c], chord, kernel)

            k = _select(w, u_sel[:, t])
            moved = k > 0
            if np.any(moved):
                idx = np.nonzero(moved)[0]
                v[idx] = cand[idx, k[idx] - 1]
                logpi[idx] = logpi_cand[idx, k[idx] - 1]

            step += 1
            rec = step - burn_in
            if rec > 0 and rec % thin == 0:
                out[:, rec // thin - 1, :] = v

    diags = ChainDiagnostics(rhat(out), ess_autocorr(out))
    return out, diags


def _split_chains(chains):
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    L, N, K = chains.shape
    if L < 2 or N < 100:
        raise ValueError("need at least 2 chains of 100+ draws")
    half = N // 2
    return np.concatenate(
        [chains[:, :half, :], chains[:, half : 2 * half, :]], axis=0)


def rhat(chains) -> np.ndarray:
    """Split-Rhat per dimension for chains of shape (L, N, K)."""
    split = _split_chains(chains)
    n = split.shape[1]
    means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean(axis=0)
    between = n * means.var(axis=0, ddof=1)
    if np.any(within <= 0):
        raise ValueError("constant chain: Rhat undefined")
    var_hat = (n - 1) / n * within + between / n
    return np.sqrt(var_hat / within)


def ess_autocorr(chains) -> np.ndarray:
    """ESS per dimension as a percentage of retained draws.

    Chain-averaged FFT autocovariances, paired into lag sums and truncated
    at the first negative pair (initial positive sequence), give the
    integrated autocorrelation time tau; the fraction is 100 / tau.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    L, N, K = chains.shape
    if N < 100:
        raise ValueError("need 100+ draws for autocorrelation ESS")
    centered = chains - chains.mean(axis=1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * N)))
    f = np.fft.rfft(centered, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :N, :].real / N
    acov = acov.mean(axis=0)
    if np.any(acov[0] <= 0):
        raise ValueError("constant chain: ESS undefined")
    rho = acov / acov[0]

    frac = np.empty(K)
    npairs = N // 2
    for k in range(K):
        pairs = rho[: 2 * npairs, k].reshape(npairs, 2).sum(axis=1)
        bad = np.nonzero(pairs <= 0)[0]
        stop = bad[0] if bad.size else npairs
        tau = 2.0 * pairs[:stop].sum() - 1.0
        frac[k] = min(100.0, 100.0 / max(tau, 1e-12))
    return frac


def write_samples_csv(path, samples, names) -> None:
    samples = np.asarray(samples, dtype=float).reshape(-1, len(names))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows(samples.tolist())


def write_diagnostics_json(path, diag: ChainDiagnostics, names=None) -> None:
    Path(path).write_text(json.dumps(diag.to_dict(names), indent=2))
