import json

import numpy as np
import pytest
from scipy import stats

from polyflow.mcmc import (
    CHORD_INSET,
    ChainDiagnostics,
    ChordProposal,
    ProposalDist,
    _chord_extremes_batch,
    _truncnorm_ppf,
    chord_extremes,
    ess_autocorr,
    propose,
    rhat,
    run_chains,
    sample_ball,
    sample_sphere,
    transition_weights,
    write_diagnostics_json,
    write_samples_csv,
)
from polyflow.polytope import HPolytope, PolytopeError


def cube_h(dim, half=1.0):
    A = np.vstack([np.eye(dim), -np.eye(dim)])
    return HPolytope(A, half * np.ones(2 * dim))


def uniform_target(V):
    return np.zeros(len(np.atleast_2d(V)))


class TestChordExtremes:
    def test_cube_center(self):
        lo, hi = chord_extremes(np.zeros(2), np.array([1.0, 0.0]), cube_h(2))
        assert (lo, hi) == (-1.0, 1.0)

    def test_cube_offset(self):
        lo, hi = chord_extremes(np.array([0.5, 0.0]), np.array([1.0, 0.0]), cube_h(2))
        assert (lo, hi) == (-1.5, 0.5)

    def test_endpoints_tight(self, rng):
        A = rng.normal(size=(14, 3))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        H = HPolytope(A, rng.uniform(0.5, 2.0, size=14))
        for _ in range(50):
            s = sample_sphere(rng, 1, 3)[0]
            v = 0.3 * sample_ball(rng, 1, 3)[0]
            lo, hi = chord_extremes(v, s, H)
            assert lo < 0 < hi
            for a in (lo, hi):
                resid = np.min(H.b - H.A @ (v + a * s))
                assert abs(resid) < 1e-12

    def test_infeasible_point(self):
        with pytest.raises(PolytopeError):
            chord_extremes(np.array([2.0, 0.0]), np.array([1.0, 0.0]), cube_h(2))

    def test_unbounded_chord(self):
        H = HPolytope([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [1.0, 1.0, 1.0],
                      validate=False)
        with pytest.raises(PolytopeError):
            chord_extremes(np.zeros(2), np.array([-1.0, 0.0]), H)


class TestPropose:
    def test_uniform_moments(self, rng):
        draws = propose(-1.0, 1.0, 100_000, ProposalDist(), np.array([1.0, 0.0]), rng)
        assert abs(draws.mean()) < 0.01
        assert abs(draws.var() - 1 / 3) < 0.01

    def test_single_draw_inside(self, rng):
        d = propose(-0.5, 2.0, 1, ProposalDist(), np.array([0.0, 1.0]), rng)
        assert d.shape == (1,) and -0.5 <= d[0] <= 2.0

    def test_degenerate_interval(self, rng):
        with pytest.raises(ValueError):
            propose(0.0, 5e-15, 1, ProposalDist(), np.array([1.0, 0.0]), rng)

    def test_wide_truncnorm_is_uniform(self, rng):
        # sigma = 1000 * interval width: truncation dominates the shape
        dist = ProposalDist("truncnorm", Sigma=np.eye(2) * (2000.0 ** 2))
        draws = propose(-1.0, 1.0, 100_000, dist, np.array([1.0, 0.0]), rng)
        ks = stats.kstest(draws, "uniform", args=(-1.0, 2.0)).statistic
        assert ks < 0.01

    def test_truncnorm_matches_scipy_ppf(self, rng):
        u = rng.random(2000)
        for a, b in [(-1.5, 0.7), (-9.0, -7.5), (6.0, 9.0), (-0.2, 30.0)]:
            ours = _truncnorm_ppf(u, a, b)
            ref = stats.truncnorm.ppf(u, a, b)
            np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-12)
            assert np.all((ours >= a) & (ours <= b))

    def test_chord_sigma_from_matrix(self):
        dist = ProposalDist("truncnorm", Sigma=np.diag([4.0, 1.0]))
        assert dist.chord_sigma(np.array([1.0, 0.0])) == pytest.approx(2.0)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            ProposalDist("truncnorm", Sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            ProposalDist("gamma")

    def test_chord_logpdf_normalized(self):
        chord = ChordProposal("truncnorm", -0.8, 2.5, sigma=0.6)
        x = np.linspace(-0.8, 2.5, 40_001)
        dens = np.exp(chord.logpdf(x, center=0.4))
        assert abs(np.trapezoid(dens, x) - 1.0) < 1e-6
        assert chord.logpdf(3.0, 0.0) == -np.inf


class TestTransitionWeights:
    def test_m1_peskun_is_metropolis(self):
        for dlp in (-2.0, -0.1, 0.0, 0.5, 3.0):
            w = transition_weights([0.0, dlp], [0.0, 0.3], ProposalDist(), "peskun")
            assert w[1] == pytest.approx(min(1.0, np.exp(dlp)), abs=1e-15)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_equal_densities(self):
        M = 4
        lp = np.zeros(M + 1)
        al = np.linspace(0, 1, M + 1)
        wp = transition_weights(lp, al, ProposalDist(), "peskun")
        np.testing.assert_allclose(wp[1:], 1 / M, atol=1e-15)
        assert wp[0] == pytest.approx(0.0, abs=1e-15)
        wb = transition_weights(lp, al, ProposalDist(), "barker")
        np.testing.assert_allclose(wb, 1 / (M + 1), atol=1e-15)

    def test_barker_matches_linear_space(self, rng):
        lp = rng.normal(size=6)
        al = np.concatenate([[0.0], rng.uniform(-1, 1, size=5)])
        w = transition_weights(lp, al, ProposalDist(), "barker")
        ref = np.exp(lp) / np.exp(lp).sum()
        np.testing.assert_allclose(w, ref, rtol=1e-12)

    def test_barker_truncnorm_matches_linear_oracle(self, rng):
        chord = ChordProposal("truncnorm", -1.0, 2.0, sigma=0.7)
        al = np.concatenate([[0.0], rng.uniform(-0.9, 1.9, size=3)])
        lp = rng.normal(size=4)
        w = transition_weights(lp, al, chord, "barker")
        a = (chord.lo - al) / chord.sigma
        b = (chord.hi - al) / chord.sigma
        q = stats.truncnorm.pdf(al[:, None], a[None, :], b[None, :],
                                loc=al[None, :], scale=chord.sigma)
        np.fill_diagonal(q, 1.0)
        score = np.exp(lp) * q.prod(axis=1)
        np.testing.assert_allclose(w, score / score.sum(), rtol=1e-9)

    def test_probability_vector(self, rng):
        for _ in range(100):
            lp = np.concatenate([[0.0], rng.normal(scale=3, size=5)])
            al = np.concatenate([[0.0], rng.uniform(-1, 1, size=5)])
            for kern in ("peskun", "barker"):
                w = transition_weights(lp, al, ProposalDist(), kern)
                assert np.all(w >= 0)
                assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_truncnorm_needs_chord(self):
        with pytest.raises(ValueError):
            transition_weights([0.0, 1.0], [0.0, 0.5],
                               ProposalDist("truncnorm"), "peskun")


def mh_reference(H, target, n_samples, burn_in, thin, seed, chunk=4096):
    """Plain Metropolis-Hastings with the library's RNG stream layout."""
    A, b = H.A, H.b
    K = H.dim
    r = min(1.0, float(np.min(b / np.linalg.norm(A, axis=1))))
    g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(1)[0]))
    v = np.stack([r * sample_ball(g, 1, K)[0]])
    lp = np.asarray(target(v), dtype=float)
    total = burn_in + n_samples * thin
    out = np.empty((n_samples, K))
    step = 0
    while step < total:
        steps = min(chunk, total - step)
        normals = np.stack([g.standard_normal((steps, K))])
        u_prop = np.stack([g.random((steps, 1))])
        u_sel = np.stack([g.random(steps)])
        for t in range(steps):
            s = normals[:, t, :]
            s /= np.linalg.norm(s, axis=1, keepdims=True)
            amin, amax = _chord_extremes_batch(b[None, :] - v @ A.T, s @ A.T)
            width = amax - amin
            lo = amin + CHORD_INSET * width
            hi = amax - CHORD_INSET * width
            alpha = lo[:, None] + u_prop[:, t, :] * (hi - lo)[:, None]
            cand = v[:, None, :] + alpha[:, :, None] * s[:, None, :]
            lpc = np.asarray(target(cand.reshape(-1, K)), dtype=float)
            accept_p = np.exp(np.minimum(0.0, lpc[0] - lp[0]))
            if u_sel[0, t] >= 1.0 - accept_p:
                v = cand[:, 0, :].copy()
                lp = lpc.copy()
            step += 1
            rec = step - burn_in
            if rec > 0 and rec % thin == 0:
                out[rec // thin - 1] = v[0]
    return out


class TestRunChains:
    def test_uniform_cube_moments(self):
        H = cube_h(4)
        samples, diag = run_chains(H, uniform_target, n_samples=2500, M=1,
                                   n_chains=8, burn_in=500, thin=5, seed=7)
        assert samples.shape == (8, 2500, 4)
        flat = samples.reshape(-1, 4)
        assert np.abs(flat.mean(axis=0)).max() < 0.03
        assert np.abs(flat.var(axis=0) - 1 / 3).max() < 0.02
        assert diag.rhat.max() < 1.01

    def test_all_draws_strictly_feasible(self):
        H = cube_h(3)
        samples, _ = run_chains(H, uniform_target, n_samples=500, M=3,
                                n_chains=4, burn_in=100, thin=2, seed=3)
        flat = samples.reshape(-1, 3)
        assert np.max(flat @ H.A.T - H.b) <= -1e-12

    def test_m1_reduces_to_metropolis(self):
        H = cube_h(3)

        def target(V):
            V = np.atleast_2d(V)
            return -0.5 * np.sum(V ** 2, axis=1) / 0.2

        ours, _ = run_chains(H, target, n_samples=400, M=1, n_chains=2,
                             burn_in=50, thin=2, seed=11)
        ref = mh_reference(H, target, n_samples=400, burn_in=50, thin=2, seed=11)
        np.testing.assert_array_equal(ours[0], ref)

    def test_seed_determinism(self):
        H = cube_h(2)
        a, _ = run_chains(H, uniform_target, 200, M=2, n_chains=2,
                          burn_in=50, thin=1, seed=5)
        b, _ = run_chains(H, uniform_target, 200, M=2, n_chains=2,
                          burn_in=50, thin=1, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_extra_chain_leaves_others_alone(self):
        H = cube_h(2)
        two, _ = run_chains(H, uniform_target, 150, n_chains=2,
                            burn_in=50, thin=1, seed=9)
        three, _ = run_chains(H, uniform_target, 150, n_chains=3,
                              burn_in=50, thin=1, seed=9)
        np.testing.assert_array_equal(two, three[:2])

    def test_two_state_occupancy_matches_target(self):
        # segment [-1,1]; right half twice as dense: occupancy 1/3 vs 2/3
        H = cube_h(1)

        def target(V):
            V = np.atleast_2d(V)
            return np.where(V[:, 0] > 0, np.log(2.0), 0.0)

        samples, _ = run_chains(H, target, n_samples=20_000, M=1, n_chains=4,
                                burn_in=500, thin=1, seed=13)
        frac_right = np.mean(samples.reshape(-1) > 0)
        se = np.sqrt((2 / 3) * (1 / 3) / (4 * 20_000 / 10))
        assert abs(frac_right - 2 / 3) < 3 * se + 0.005

    def test_truncnorm_barker_runs(self):
        H = cube_h(2)
        dist = ProposalDist("truncnorm", Sigma=0.25 * np.eye(2))
        samples, _ = run_chains(H, uniform_target, n_samples=400, M=2,
                                n_chains=4, burn_in=200, thin=2,
                                dist=dist, kernel="barker", seed=21)
        flat = samples.reshape(-1, 2)
        assert np.max(np.abs(flat)) < 1.0
        assert np.abs(flat.mean(axis=0)).max() < 0.06

    def test_uniform_chi2_equal_volume_bins(self):
        H = cube_h(2)
        samples, _ = run_chains(H, uniform_target, n_samples=4000, M=1,
                                n_chains=8, burn_in=500, thin=8, seed=29)
        flat = samples.reshape(-1, 2)
        idx = np.clip(((flat + 1) * 2).astype(int), 0, 3)
        counts = np.bincount(idx[:, 0] * 4 + idx[:, 1], minlength=16)
        p = stats.chisquare(counts).pvalue
        assert p > 0.01

    def test_nonfinite_target_rejected(self):
        H = cube_h(2)
        with pytest.raises(ValueError):
            run_chains(H, lambda V: np.full(len(V), np.nan), 100,
                       burn_in=10, thin=1)


class TestDiagnostics:
    def test_iid_chains(self, rng):
        chains = rng.standard_normal((4, 5000, 3))
        r = rhat(chains)
        assert np.all((r > 0.999) & (r < 1.005))
        assert np.all(ess_autocorr(chains) >= 80)

    def test_diverged_chains(self, rng):
        chains = rng.standard_normal((2, 1000, 1)) * 0.1
        chains[1] += 5.0
        assert rhat(chains)[0] > 1.1

    def test_constant_chain_errors(self):
        chains = np.ones((2, 500, 1))
        with pytest.raises(ValueError):
            rhat(chains)
        with pytest.raises(ValueError):
            ess_autocorr(chains)

    def test_ar1_ess(self, rng):
        rho = 0.5
        L, N = 4, 20_000
        x = np.empty((L, N))
        x[:, 0] = rng.standard_normal(L)
        eps = rng.standard_normal((L, N)) * np.sqrt(1 - rho ** 2)
        for t in range(1, N):
            x[:, t] = rho * x[:, t - 1] + eps[:, t]
        ess = ess_autocorr(x)
        assert abs(ess[0] - 100 * (1 - rho) / (1 + rho)) < 5

    def test_short_chains_rejected(self, rng):
        with pytest.raises(ValueError):
            rhat(rng.standard_normal((1, 500, 2)))
        with pytest.raises(ValueError):
            ess_autocorr(rng.standard_normal((2, 50, 2)))

    def test_diag_validation(self):
        with pytest.raises(ValueError):
            ChainDiagnostics(np.ones(2), np.array([50.0, 120.0]))


class TestWriters:
    def test_csv_roundtrip(self, tmp_path, rng):
        samples = rng.normal(size=(3, 7, 2))
        path = tmp_path / "samples.csv"
        write_samples_csv(path, samples, ["a", "b"])
        back = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(back, samples.reshape(-1, 2), rtol=1e-12)
        assert path.read_text().splitlines()[0] == "a,b"

    def test_diagnostics_json(self, tmp_path):
        diag = ChainDiagnostics(np.array([1.001, 1.002]), np.array([45.0, 60.0]))
        path = tmp_path / "diag.json"
        write_diagnostics_json(path, diag, ["v1", "v2"])
        data = json.loads(path.read_text())
        assert data["v1"]["rhat"] == pytest.approx(1.001)
        assert data["v2"]["ess_pct"] == pytest.approx(60.0)
