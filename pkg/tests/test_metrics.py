import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyflow.metrics import (
    MetricsReport,
    circumscribed_radius,
    density_grid_rows,
    estimate_volume,
    estimate_Z,
    flow_metrics,
    log_ball_volume,
    write_density_grid_csv,
    write_metrics_json,
)
from polyflow.polytope import HPolytope
from polyflow.targets import box_mixture_2d, cube_polytope


def cross_polytope(dim):
    """{v : ||v||_1 <= 1} as 2^dim halfspaces."""
    A = np.array(list(itertools.product([1.0, -1.0], repeat=dim)))
    return HPolytope(A, np.ones(len(A)))


class TestGeometryHelpers:
    def test_radius_of_cube(self):
        assert circumscribed_radius(cube_polytope(2)) == pytest.approx(
            math.sqrt(2.0), rel=1e-9)

    def test_radius_of_shifted_box(self):
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        b = np.array([3.0, 0.0, 2.0, 1.0])  # [0,3] x [-1,2]
        assert circumscribed_radius(HPolytope(A, b)) == pytest.approx(
            math.sqrt(13.0), rel=1e-9)

    def test_ball_volumes(self):
        assert np.exp(log_ball_volume(2)) == pytest.approx(np.pi, rel=1e-12)
        assert np.exp(log_ball_volume(3, 2.0)) == pytest.approx(
            4.0 / 3.0 * np.pi * 8.0, rel=1e-12)


class TestEstimateVolume:
    def test_cube_volume(self, rng):
        vol, stderr = estimate_volume(cube_polytope(2), 100_000, rng)
        assert abs(vol - 4.0) < 3.0 * stderr
        assert stderr < 0.05

    def test_cross_polytope_volume(self, rng):
        # analytic: 2^K / K! = 2/3 for K=4
        H = cross_polytope(4)
        vol, stderr = estimate_volume(H, 200_000, rng, phi=1.0)
        assert abs(vol - 2.0 / 3.0) < 3.0 * stderr
        assert stderr < 0.01

    def test_ball_inside_support_accepts_everything(self, rng):
        # phi=1 ball sits inside the cube, so the estimate is the ball volume
        vol, stderr = estimate_volume(cube_polytope(2), 5_000, rng, phi=1.0)
        assert vol == pytest.approx(np.pi, rel=1e-12)
        assert stderr == 0.0

    def test_returned_samples_are_uniform_in_polytope(self, rng):
        H = cube_polytope(2)
        vol, _, pts = estimate_volume(H, 20_000, rng, return_samples=True)
        assert np.all(H.contains(pts))
        # symmetric box: mean near zero, per-axis variance near 1/3
        assert np.allclose(pts.mean(axis=0), 0.0, atol=0.02)
        assert np.allclose(pts.var(axis=0), 1.0 / 3.0, atol=0.02)

    def test_zero_acceptance_raises(self, rng):
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        sliver = HPolytope(A, np.array([0.9001, -0.9, 0.9001, -0.9]))
        with pytest.raises(ValueError, match="zero acceptances"):
            estimate_volume(sliver, 200, rng)

    def test_needs_draws(self, rng):
        with pytest.raises(ValueError):
            estimate_volume(cube_polytope(2), 0, rng)


class TestEstimateZ:
    def test_uniform_target_is_exactly_one(self, rng):
        H = cube_polytope(3)
        vol = 8.0
        pts = rng.uniform(-1.0, 1.0, size=(500, 3))
        z = estimate_Z(lambda v: np.full(len(v), -np.log(vol)), H, vol, pts)
        assert z == pytest.approx(1.0, rel=1e-12)

    def test_mixture_mass_matches_quadrature(self, rng):
        mog = box_mixture_2d()
        xs = np.linspace(-1.0, 1.0, 801)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        dens = np.exp(mog.logpdf(np.column_stack([gx.ravel(), gy.ravel()])))
        z_grid = np.trapezoid(np.trapezoid(dens.reshape(801, 801), xs, axis=1), xs)

        H = cube_polytope(2)
        vol, _, pts = estimate_volume(H, 300_000, rng, return_samples=True)
        z_mc = estimate_Z(mog.logpdf, H, 4.0, pts)
        assert z_mc == pytest.approx(z_grid, rel=0.02)

    def test_rejects_outside_samples(self):
        H = cube_polytope(2)
        with pytest.raises(ValueError, match="inside"):
            estimate_Z(lambda v: np.zeros(len(v)), H, 4.0, np.array([[2.0, 0.0]]))


class TestFlowMetrics:
    def test_perfect_fit(self):
        logq = np.full(100, -1.3)
        rep = flow_metrics(np.zeros((100, 2)), logq, logq.copy(), seed=7)
        assert rep.kl_nats == pytest.approx(0.0, abs=1e-14)
        assert rep.ess_pct == pytest.approx(100.0)
        assert rep.z_estimate == pytest.approx(1.0)
        assert rep.n_samples == 100
        assert rep.seed == 7
        assert rep.outside_pct is None

    def test_half_support_toy(self, rng):
        # q uniform on [0,1], unnormalized p = 1 on [0,2]: every drawn sample
        # sees weight 1, so ESS is perfect, yet against the true normalizer
        # Z=2 the divergence is log 2
        pts = rng.uniform(0.0, 1.0, size=(2_000, 1))
        logq = np.zeros(len(pts))
        logp = np.zeros(len(pts))
        rep = flow_metrics(pts, logq, logp, Z=2.0)
        assert rep.kl_nats == pytest.approx(math.log(2.0), rel=1e-12)
        assert rep.ess_pct == pytest.approx(100.0)
        assert rep.z_estimate == pytest.approx(2.0)
        self_norm = flow_metrics(pts, logq, logp)
        assert self_norm.kl_nats == pytest.approx(0.0, abs=1e-14)
        assert self_norm.z_estimate == pytest.approx(1.0)

    def test_known_weight_pattern(self):
        # two weight values, hand-computed ESS and normalizer
        logq = np.zeros(4)
        logp = np.log(np.array([1.0, 1.0, 1.0, 3.0]))
        rep = flow_metrics(np.zeros((4, 1)), logq, logp)
        assert rep.z_estimate == pytest.approx(1.5, rel=1e-12)
        assert rep.ess_pct == pytest.approx(100.0 * 36.0 / (4.0 * 12.0), rel=1e-12)
        expected_kl = -np.log(3.0) / 4.0 + np.log(1.5)
        assert rep.kl_nats == pytest.approx(expected_kl, rel=1e-12)

    def test_outside_fraction(self):
        H = cube_polytope(2)
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, -3.0]])
        rep = flow_metrics(pts, np.zeros(4), np.zeros(4), H=H)
        assert rep.outside_pct == pytest.approx(50.0)

    def test_zero_weights_raise(self):
        with pytest.raises(ValueError, match="weights"):
            flow_metrics(np.zeros((3, 1)), np.zeros(3), np.full(3, -np.inf))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            flow_metrics(np.zeros((3, 1)), np.zeros(3), np.zeros(4))

    @given(st.lists(st.tuples(
        st.floats(min_value=-40.0, max_value=40.0),
        st.floats(min_value=-40.0, max_value=40.0)),
        min_size=1, max_size=64))
    @settings(max_examples=200, deadline=None)
    def test_coherence_invariants(self, pairs):
        logq = np.array([a for a, _ in pairs])
        logp = np.array([b for _, b in pairs])
        rep = flow_metrics(np.zeros((len(pairs), 1)), logq, logp)
        # self-normalized KL is nonnegative by Jensen; ESS is a percentage
        assert rep.kl_nats >= -1e-9
        assert math.exp(-rep.kl_nats) <= 1.0 + 1e-9
        assert 0.0 < rep.ess_pct <= 100.0 + 1e-9


class TestReportAndOutputs:
    def test_report_validation(self):
        with pytest.raises(ValueError, match="ess_pct"):
            MetricsReport(0.1, 0.0, 1.0, 10)
        with pytest.raises(ValueError, match="outside_pct"):
            MetricsReport(0.1, 50.0, 1.0, 10, outside_pct=120.0)

    def test_report_to_dict(self):
        rep = MetricsReport(0.25, 60.0, 1.1, 1000, seed=3, outside_pct=0.0)
        d = rep.to_dict()
        assert d == {"kl_nats": 0.25, "ess_pct": 60.0, "z_estimate": 1.1,
                     "n_samples": 1000, "seed": 3, "outside_pct": 0.0}

    def test_metrics_json(self, tmp_path):
        rep = MetricsReport(0.25, 60.0, 1.1, 1000)
        path = tmp_path / "metrics.json"
        write_metrics_json(path, rep, extra={"manifold": "ball"})
        data = json.loads(path.read_text())
        assert data["kl_nats"] == 0.25
        assert data["manifold"] == "ball"

    def test_grid_shape_and_mass(self, rng):
        pts = rng.normal(size=(3_000, 2), scale=0.5)
        rows = list(density_grid_rows(pts, ["a", "b"], gridsize=60))
        assert len(rows) == 60 * 60
        assert all(r[0] == "a" and r[1] == "b" for r in rows)
        dens = np.array([r[4] for r in rows]).reshape(60, 60)
        assert np.all(dens >= 0.0)
        xs = np.array([r[2] for r in rows]).reshape(60, 60)[:, 0]
        ys = np.array([r[3] for r in rows]).reshape(60, 60)[0]
        mass = np.trapezoid(np.trapezoid(dens, ys, axis=1), xs)
        assert mass == pytest.approx(1.0, abs=0.1)

    def test_grid_covers_all_pairs(self, rng):
        pts = rng.normal(size=(200, 3))
        rows = list(density_grid_rows(pts, ["x", "y", "z"], gridsize=10))
        pairs = {(r[0], r[1]) for r in rows}
        assert pairs == {("x", "y"), ("x", "z"), ("y", "z")}
        assert len(rows) == 3 * 100

    def test_grid_csv_deterministic(self, rng, tmp_path):
        pts = rng.normal(size=(500, 2))
        p1, p2 = tmp_path / "g1.csv", tmp_path / "g2.csv"
        write_density_grid_csv(p1, pts, ["u", "v"], gridsize=20)
        write_density_grid_csv(p2, pts, ["u", "v"], gridsize=20)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == "dim_x,dim_y,x,y,density"
