import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from simplexcode.errors import MethodDimMismatch, TooFewAcceptedSamples
from simplexcode.gaussian import (
    EstimatorConfig,
    GaussianChannel,
    cone_conditional_cov,
    cone_conditional_mean,
    cone_measure,
    cone_moments,
    crn_compare,
    derive_seed,
    moments_from_samples,
    normal_stream,
    splitmix64,
)
from simplexcode.geometry import SimplicialCone, optimal_vertices, random_cone, random_interior_point, random_rotation, regular_simplex

RAY = SimplicialCone(np.array([[1.0]]))
PHI1 = stats.norm.cdf(1.0)
MC = ["plain_mc", "crn_mc", "conditional_mc"]


def wedge(a_deg, b_deg):
    t = np.deg2rad([a_deg, b_deg])
    return SimplicialCone(np.column_stack([np.cos(t), np.sin(t)]))


def polar_oracle(a_deg, b_deg, c, sigma):
    """P{N(c, sigma^2 I) in wedge} by direct polar dblquad."""
    c = np.asarray(c, float)

    def f(r, t):
        x = r * np.cos(t) - c[0]
        y = r * np.sin(t) - c[1]
        return r * np.exp(-(x * x + y * y) / (2 * sigma ** 2)) / (2 * np.pi * sigma ** 2)

    val, _ = integrate.dblquad(f, np.deg2rad(a_deg), np.deg2rad(b_deg), 0, np.inf, epsabs=1e-11)
    return val


class TestSeeds:
    def test_splitmix_known_value(self):
        # first output of the reference splitmix64 generator seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    def test_derive_seed_is_xor(self):
        assert derive_seed(12345, 3) == 12345 ^ splitmix64(3)

    def test_stream_prefix_and_workers(self):
        a = normal_stream(7, 200_000, 3, workers=1)
        b = normal_stream(7, 200_000, 3, workers=4)
        c = normal_stream(7, 70_000, 3)
        assert np.array_equal(a, b)
        assert np.array_equal(a[:70_000], c)

    def test_stream_read_only(self):
        Z = normal_stream(1, 10, 2)
        with pytest.raises(ValueError):
            Z[0, 0] = 1.0


class TestConfig:
    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            EstimatorConfig(samples=0)

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            EstimatorConfig(method="quasi")

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            GaussianChannel(0.0, 2)


class TestRay:
    @pytest.mark.parametrize("method", MC + ["exact_1d"])
    def test_measure_phi1(self, method):
        cfg = EstimatorConfig(samples=400_000, seed=3, method=method)
        m = cone_measure(RAY, [1.0], GaussianChannel(1.0, 1), cfg)
        tol = 1e-10 if method in ("exact_1d", "conditional_mc") else 4 * m.std_error
        assert m.measure == pytest.approx(PHI1, abs=tol)

    @pytest.mark.parametrize("method", ["exact_1d", "conditional_mc"])
    def test_mean_and_variance(self, method):
        tn = stats.truncnorm(-1.0, np.inf, loc=1.0, scale=1.0)
        cfg = EstimatorConfig(samples=1000, seed=1, method=method)
        m = cone_conditional_cov(RAY, [1.0], GaussianChannel(1.0, 1), cfg)
        assert m.mean[0] == pytest.approx(tn.mean(), abs=1e-10)
        assert m.covariance[0, 0] == pytest.approx(tn.var(), abs=1e-10)

    def test_frozen_values(self):
        assert stats.truncnorm(-1.0, np.inf, loc=1.0).mean() == pytest.approx(1.287600, abs=1e-6)
        assert stats.truncnorm(-1.0, np.inf, loc=1.0).var() == pytest.approx(0.629686, abs=1e-6)

    def test_plain_mean_within_error(self):
        cfg = EstimatorConfig(samples=400_000, seed=2, method="plain_mc")
        m = cone_conditional_mean(RAY, [1.0], GaussianChannel(1.0, 1), cfg)
        assert abs(m.mean[0] - 1.287600) < 4 * m.mean_stderr[0]

    def test_negative_ray(self):
        cfg = EstimatorConfig(method="exact_1d")
        m = cone_conditional_mean(SimplicialCone(np.array([[-1.0]])), [-1.0], GaussianChannel(1.0, 1), cfg)
        assert m.measure == pytest.approx(PHI1, abs=1e-14)
        assert m.mean[0] == pytest.approx(-1.287600, abs=1e-6)

    def test_half_space_boundary(self):
        # n=1: c on the boundary of the ray
        m = cone_measure(RAY, [0.0], GaussianChannel(2.0, 1), EstimatorConfig(method="exact_1d"))
        assert m.measure == 0.5


class TestHalfSpace:
    @pytest.mark.parametrize("method", MC)
    def test_boundary_centre_gives_half(self, method):
        normals = np.array([[0.0, 0.0, 1.0]])
        cfg = EstimatorConfig(samples=200_000, seed=5, method=method)
        m = cone_moments(normals, [0.4, -0.2, 0.0], GaussianChannel(1.3, 3), cfg, need_moments=False)
        assert abs(m.measure - 0.5) < 4 * max(m.std_error, 1e-12)

    def test_full_space_covariance(self):
        cfg = EstimatorConfig(samples=400_000, seed=9, method="plain_mc")
        m = cone_moments(np.zeros((0, 3)), np.zeros(3), GaussianChannel(0.7, 3), cfg)
        assert m.measure == 1.0
        assert np.max(np.abs(m.covariance - 0.49 * np.eye(3))) < 0.01


class TestWedge:
    def test_wedge_2d_matches_polar_oracle(self):
        cone = wedge(30.0, 150.0)
        c = np.array([0.0, 1.0])
        ref = polar_oracle(30.0, 150.0, c, 1.0)
        got = cone_measure(cone, c, GaussianChannel(1.0, 2), EstimatorConfig(method="wedge_2d")).measure
        assert got == pytest.approx(ref, abs=1e-9)

    @pytest.mark.parametrize("method", MC)
    def test_mc_within_three_se(self, method):
        cone = wedge(30.0, 150.0)
        c = np.array([0.0, 1.0])
        ref = polar_oracle(30.0, 150.0, c, 1.0)
        m = cone_measure(cone, c, GaussianChannel(1.0, 2), EstimatorConfig(samples=200_000, seed=4, method=method))
        assert abs(m.measure - ref) < 3 * m.std_error + 1e-12

    def test_wedge_moments_against_dblquad(self):
        cone = wedge(20.0, 110.0)
        c = np.array([np.cos(0.9), np.sin(0.9)])
        s = 0.8
        p = polar_oracle(20.0, 110.0, c, s)

        def mom(fx):
            def f(r, t):
                x, y = r * np.cos(t), r * np.sin(t)
                d = ((x - c[0]) ** 2 + (y - c[1]) ** 2) / (2 * s * s)
                return r * fx(x, y) * np.exp(-d) / (2 * np.pi * s * s)

            return integrate.dblquad(f, np.deg2rad(20), np.deg2rad(110), 0, np.inf, epsabs=1e-11)[0] / p

        mx, my = mom(lambda x, y: x), mom(lambda x, y: y)
        cxy = mom(lambda x, y: x * y) - mx * my
        m = cone_conditional_cov(cone, c, GaussianChannel(s, 2), EstimatorConfig(method="wedge_2d"))
        assert m.measure == pytest.approx(p, abs=1e-9)
        assert np.allclose(m.mean, [mx, my], atol=1e-8)
        assert m.covariance[0, 1] == pytest.approx(cxy, abs=1e-8)

    def test_method_dim_mismatch(self):
        cone = wedge(0, 90)
        with pytest.raises(MethodDimMismatch):
            cone_measure(cone, [1.0, 0.0], GaussianChannel(1.0, 2), EstimatorConfig(method="exact_1d"))
        with pytest.raises(MethodDimMismatch):
            cone_measure(RAY, [1.0], GaussianChannel(1.0, 1), EstimatorConfig(method="wedge_2d"))


class TestConditionalMean:
    def test_symmetric_axis(self):
        w = regular_simplex(3)
        cone = optimal_vertices(w).cell(0)
        c = w.words[0]
        m = cone_conditional_mean(cone, c, GaussianChannel(1.0, 3), EstimatorConfig(samples=200_000, seed=8, method="plain_mc"))
        tang = m.mean - (m.mean @ c) * c
        assert np.linalg.norm(tang) < 3 * np.linalg.norm(m.mean_stderr)

    @pytest.mark.parametrize("method", MC)
    def test_mean_norm_exceeds_one(self, method, rng):
        for _ in range(3):
            cone = random_cone(rng, 3)
            c = random_interior_point(rng, cone)
            m = cone_conditional_mean(cone, c, GaussianChannel(1.0, 3), EstimatorConfig(samples=100_000, seed=1, method=method))
            assert m.mean @ c > 1.0

    def test_mean_inside_cone(self, rng):
        for _ in range(5):
            cone = random_cone(rng, 3)
            c = random_interior_point(rng, cone)
            m = cone_conditional_mean(cone, c, GaussianChannel(2.0, 3), EstimatorConfig(samples=50_000, seed=2))
            assert np.all(cone.normals @ m.mean > -1e-12)

    def test_too_few_accepted(self):
        cone = wedge(0, 10)
        far = np.array([-1.0, 0.0])
        cfg = EstimatorConfig(samples=1000, seed=0, method="plain_mc")
        with pytest.raises(TooFewAcceptedSamples):
            cone_conditional_mean(cone, far, GaussianChannel(0.05, 2), cfg)


class TestProperties:
    @pytest.mark.parametrize("method", MC)
    def test_determinism(self, method, rng):
        cone = random_cone(rng, 3)
        c = random_interior_point(rng, cone)
        cfg = EstimatorConfig(samples=30_000, seed=11, method=method)
        a = cone_conditional_cov(cone, c, GaussianChannel(1.0, 3), cfg)
        b = cone_conditional_cov(cone, c, GaussianChannel(1.0, 3), cfg)
        assert a.measure == b.measure
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.covariance, b.covariance)

    def test_additivity(self, rng):
        chan = GaussianChannel(1.0, 3)
        for _ in range(5):
            cone = random_cone(rng, 3)
            G = cone.generators
            mid = G[0] + G[1]
            mid /= np.linalg.norm(mid)
            left = SimplicialCone(np.array([G[0], mid, G[2]]))
            right = SimplicialCone(np.array([mid, G[1], G[2]]))
            c = random_interior_point(rng, cone)
            ms = [cone_measure(k, c, chan, EstimatorConfig(samples=100_000, seed=s, method="plain_mc")) for k, s in ((cone, 1), (left, 2), (right, 3))]
            se = math.sqrt(sum(m.std_error ** 2 for m in ms))
            assert abs(ms[0].measure - ms[1].measure - ms[2].measure) < 3 * se

    @given(st.integers(min_value=2, max_value=4), st.integers(min_value=0, max_value=2**32 - 1))
    def test_rotation_invariance_with_rotated_stream(self, n, seed):
        rng = np.random.default_rng(seed)
        cone = random_cone(rng, n)
        c = random_interior_point(rng, cone)
        R = random_rotation(rng, n)
        Z = normal_stream(seed, 5000, n)
        for method in ("plain_mc", "conditional_mc"):
            a = moments_from_samples(Z, cone, c, 0.9, method, need_moments=False)
            b = moments_from_samples(Z @ R.T, cone.rotated(R), R @ c, 0.9, method, need_moments=False)
            assert b.measure == pytest.approx(a.measure, abs=1e-9)

    def test_rotation_invariance_independent_seeds(self, rng):
        cone = random_cone(rng, 3)
        c = random_interior_point(rng, cone)
        R = random_rotation(rng, 3)
        chan = GaussianChannel(1.0, 3)
        a = cone_measure(cone, c, chan, EstimatorConfig(samples=100_000, seed=1, method="plain_mc"))
        b = cone_measure(cone.rotated(R), R @ c, chan, EstimatorConfig(samples=100_000, seed=2, method="plain_mc"))
        assert abs(a.measure - b.measure) < 3 * math.hypot(a.std_error, b.std_error)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_psd_domination(self, sigma, rng):
        for _ in range(5):
            cone = random_cone(rng, 3)
            c = random_interior_point(rng, cone)
            m = cone_conditional_cov(cone, c, GaussianChannel(sigma, 3), EstimatorConfig(samples=100_000, seed=3))
            lo = np.linalg.eigvalsh(sigma ** 2 * np.eye(3) - m.covariance)[0]
            assert lo >= -0.02 * sigma ** 2
            assert np.linalg.eigvalsh(m.covariance)[0] >= -1e-12

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_measure_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        cone = random_cone(rng, 3)
        c = rng.standard_normal(3)
        for method in MC:
            m = cone_measure(cone, c, GaussianChannel(1.0, 3), EstimatorConfig(samples=2000, seed=seed, method=method))
            assert 0.0 <= m.measure <= 1.0


class TestCRN:
    def test_identical_is_zero(self, rng):
        cone = random_cone(rng, 3)
        c = random_interior_point(rng, cone)
        cfg = EstimatorConfig(samples=10_000, seed=4, method="crn_mc")
        assert crn_compare(cone, c, cone, c, GaussianChannel(1.0, 3), cfg) == 0.0

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_superset_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        outer = random_cone(rng, 2)
        g0, g1 = outer.generators
        mid = (g0 + g1) / np.linalg.norm(g0 + g1)
        inner = SimplicialCone(np.array([g0, mid]))
        c = random_interior_point(rng, inner)
        for method in ("crn_mc", "conditional_mc"):
            cfg = EstimatorConfig(samples=3000, seed=seed, method=method)
            # conditional weights integrate nested intervals, still pointwise dominated
            assert crn_compare(outer, c, inner, c, GaussianChannel(1.0, 2), cfg) >= 0.0

    def test_rotated_cell_sign_matches_oracle(self):
        # regular cell vs the same cell rotated 5 degrees, both evaluated at the regular axis;
        # oracle: the wedge_2d difference (deterministic quadrature stands in for 1e7 plain draws)
        w = regular_simplex(2)
        cone = optimal_vertices(w).cell(0)
        t = np.deg2rad(5.0)
        R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        rot = cone.rotated(R)
        c = w.words[0]
        chan = GaussianChannel(1.0, 2)
        oracle = crn_compare(cone, c, rot, c, chan, EstimatorConfig(method="wedge_2d"))
        est, se = crn_compare(cone, c, rot, c, chan, EstimatorConfig(samples=1_000_000, seed=6, method="crn_mc"), return_stderr=True)
        assert oracle > 0
        assert np.sign(est) == np.sign(oracle)
        assert abs(est - oracle) < 4 * se
