import numpy as np
import pytest
from scipy.stats import multivariate_normal

from polyflow.polytope import canonicalize
from polyflow.targets import (
    DEFAULT_VAR,
    MEAN_RADIUS,
    REACTIONS,
    SPECIES,
    MixtureOfGaussians,
    box_mixture_2d,
    build_example_model,
    cube_mixture,
    cube_polytope,
    rounded_mixture,
)


def col(name):
    return REACTIONS.index(name)


class TestExampleModel:
    def test_shapes(self):
        model = build_example_model()
        assert model.S.shape == (len(SPECIES), len(REACTIONS))
        assert np.array_equal(model.h, np.zeros(len(SPECIES)))
        assert model.A_c.shape == (2 * len(REACTIONS), len(REACTIONS))
        assert tuple(model.variable_names) == REACTIONS

    def test_species_a_balance_row(self):
        # consumed by v1, produced by uptake, touches nothing else
        S = build_example_model().S
        row = S[SPECIES.index("A")]
        expected = np.zeros(len(REACTIONS))
        expected[col("v1")] = -1.0
        expected[col("a_in")] = 1.0
        assert np.array_equal(row, expected)

    def test_species_h_balance_row(self):
        S = build_example_model().S
        row = S[SPECIES.index("H")]
        expected = np.zeros(len(REACTIONS))
        expected[col("v7")] = 1.0
        expected[col("biomass")] = -0.3
        expected[col("h_out")] = -1.0
        assert np.array_equal(row, expected)

    def test_cofactor_row(self):
        S = build_example_model().S
        row = S[SPECIES.index("cof")]
        expected = np.zeros(len(REACTIONS))
        expected[col("c_out")] = -1.0
        expected[col("v3")] = 1.0
        assert np.array_equal(row, expected)

    def _bound_of(self, model, name):
        """Recover (lo, hi) for one variable from the inequality rows."""
        e = np.zeros(model.nvars)
        e[col(name)] = 1.0
        hi = lo = None
        for row, rhs in zip(model.A_c, model.b_c):
            if np.array_equal(row, e):
                hi = rhs
            elif np.array_equal(row, -e):
                lo = -rhs
        return lo, hi

    def test_bounds(self):
        model = build_example_model()
        assert self._bound_of(model, "biomass") == (0.05, 1.5)
        assert self._bound_of(model, "a_in") == (10.0, 10.0)
        assert self._bound_of(model, "v4") == (0.0, 100.0)

    def test_canonical_form_stacks_equalities(self):
        H = canonicalize(build_example_model())
        assert H.dim == len(REACTIONS)
        assert H.nrows == 2 * len(SPECIES) + 2 * len(REACTIONS)

    def test_steady_state_flux_is_feasible(self):
        # hand-balanced flux: fix biomass=1, v1=10, v3=5, v6=1.6, v7=3;
        # the balances then force v2=4.4, v5=4.9, v4=6.4, d_out=9.8,
        # f_out=7, h_out=2.7, c_out=5
        v = np.zeros(len(REACTIONS))
        for name, val in [("a_in", 10.0), ("v1", 10.0), ("v2", 4.4),
                          ("v3", 5.0), ("biomass", 1.0), ("v4", 6.4),
                          ("v5", 4.9), ("v6", 1.6), ("d_out", 9.8),
                          ("v7", 3.0), ("f_out", 7.0), ("h_out", 2.7),
                          ("c_out", 5.0)]:
            v[col(name)] = val
        model = build_example_model()
        assert np.allclose(model.S @ v, 0.0, atol=1e-12)
        assert canonicalize(model).contains(v)


class TestMixtureOfGaussians:
    def test_single_component_at_mean(self):
        # closed form: -K/2 * log(2*pi*var)
        mu = np.array([0.5, -0.3, 1.0])
        mog = MixtureOfGaussians.isotropic(mu, var=0.05)
        expected = -1.5 * np.log(2.0 * np.pi * 0.05)
        assert mog.logpdf(mu) == pytest.approx(expected, rel=1e-13)

    def test_matches_scipy_mixture(self, rng):
        k, m = 3, 4
        means = rng.normal(size=(m, k))
        covs = np.empty((m, k, k))
        for i in range(m):
            a = rng.normal(size=(k, k))
            covs[i] = a @ a.T + 0.1 * np.eye(k)
        w = rng.uniform(0.5, 1.5, size=m)
        w /= w.sum()
        mog = MixtureOfGaussians(w, means, covs)
        pts = rng.normal(size=(50, k), scale=2.0)
        dens = np.zeros(50)
        for i in range(m):
            dens += w[i] * multivariate_normal(means[i], covs[i]).pdf(pts)
        assert np.allclose(mog.logpdf(pts), np.log(dens), rtol=1e-10)

    def test_symmetric_pair_midpoint(self):
        a = np.array([0.7, -0.2])
        mog = MixtureOfGaussians.isotropic([a, -a], var=0.05)
        lone = MixtureOfGaussians.isotropic([a], var=0.05)
        # both components contribute the same value at the origin
        assert mog.logpdf(np.zeros(2)) == pytest.approx(
            lone.logpdf(np.zeros(2)), rel=1e-13)

    def test_single_point_returns_float(self):
        mog = box_mixture_2d()
        out = mog.logpdf(np.zeros(2))
        assert isinstance(out, float)
        batch = mog.logpdf(np.zeros((4, 2)))
        assert batch.shape == (4,)
        assert np.allclose(batch, out)

    def test_shared_covariance_broadcast(self):
        cov = np.array([[0.3, 0.1], [0.1, 0.2]])
        mog = MixtureOfGaussians([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]], cov)
        assert mog.covs.shape == (2, 2, 2)
        assert np.array_equal(mog.covs[0], cov)
        assert np.array_equal(mog.covs[1], cov)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="weights"):
            MixtureOfGaussians([0.5, 0.4], np.zeros((2, 2)), np.eye(2))
        with pytest.raises(ValueError, match="weights"):
            MixtureOfGaussians([1.5, -0.5], np.zeros((2, 2)), np.eye(2))

    def test_spd_validation(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ValueError, match="positive definite"):
            MixtureOfGaussians([1.0], np.zeros((1, 2)), bad)

    def test_component_count_mismatch(self):
        with pytest.raises(ValueError, match="component count"):
            MixtureOfGaussians([0.5, 0.5], np.zeros((3, 2)), np.eye(2))

    def test_dimension_mismatch(self):
        mog = box_mixture_2d()
        with pytest.raises(ValueError, match="dimension"):
            mog.logpdf(np.zeros(3))

    def test_normalization_by_quadrature(self):
        # grid oracle: density mass over a box capturing ~all of it
        mog = box_mixture_2d()
        xs = np.linspace(-6.0, 6.0, 801)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        dens = np.exp(mog.logpdf(pts)).reshape(801, 801)
        mass = np.trapezoid(np.trapezoid(dens, xs, axis=1), xs)
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestNamedTargets:
    def test_rounded_mixture_placement(self):
        names = ["R_v7", "R_f_out", "R_biomass", "R_h_out"]
        mog = rounded_mixture(names)
        assert mog.means.shape == (3, 4)
        expected = np.zeros((3, 4))
        expected[0, 0] = -MEAN_RADIUS
        expected[1, 2] = MEAN_RADIUS
        expected[2, 3] = MEAN_RADIUS
        assert np.array_equal(mog.means, expected)
        assert np.allclose(mog.weights, 1.0 / 3.0)
        assert np.allclose(mog.covs, DEFAULT_VAR * np.eye(4)[None])

    def test_rounded_mixture_follows_name_order(self):
        scrambled = ["R_h_out", "R_v7", "R_f_out", "R_biomass"]
        mog = rounded_mixture(scrambled)
        assert mog.means[0, 1] == -MEAN_RADIUS
        assert mog.means[1, 3] == MEAN_RADIUS
        assert mog.means[2, 0] == MEAN_RADIUS

    def test_rounded_mixture_missing_name(self):
        with pytest.raises(ValueError):
            rounded_mixture(["R_v7", "R_biomass", "R_x"])

    def test_rounded_mixture_axes_override(self):
        names = ["R_d_out", "R_f_out", "R_biomass", "R_h_out"]
        mog = rounded_mixture(names, axes=("R_d_out", "R_biomass", "R_h_out"),
                              signs=(-1.0, 1.0, 1.0))
        assert mog.means[0, 0] == -MEAN_RADIUS
        assert mog.means[1, 2] == MEAN_RADIUS
        assert mog.means[2, 3] == MEAN_RADIUS
        with pytest.raises(ValueError, match="pair"):
            rounded_mixture(names, axes=("R_d_out",), signs=(1.0, -1.0))

    def test_cube_polytope_john_position(self):
        H = cube_polytope(5)
        assert H.dim == 5
        assert H.nrows == 10
        assert H.names == tuple(f"x{i}" for i in range(1, 6))
        norms = np.linalg.norm(H.A, axis=1)
        assert np.allclose(H.b / norms, 1.0)

    def test_cube_mixture_axes(self):
        mog = cube_mixture(6)
        assert mog.means.shape == (3, 6)
        for i in range(3):
            e = np.zeros(6)
            e[i] = MEAN_RADIUS
            assert np.array_equal(mog.means[i], e)
        with pytest.raises(ValueError):
            cube_mixture(2)

    def test_box_mixture_defaults(self):
        mog = box_mixture_2d()
        assert np.array_equal(mog.means, [[0.5, 0.5], [-0.5, -0.5]])
        assert np.allclose(mog.weights, 0.5)
