import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mixis.densities import (
    DimensionMismatch,
    DiscreteDensity,
    GaussianDensity,
    ProposalFamily,
    control_features,
    density_at,
    draw,
    draw_mixture,
    mixture_density,
    stratified_allocation,
    stream,
)
from mixis.simplex import MixtureWeights


def two_point_family(defensive=False):
    p = DiscreteDensity([0.5, 0.5])
    q1 = DiscreteDensity([0.5, 0.5]) if defensive else DiscreteDensity([0.5, 0.5], atoms=[0.0, 1.0])
    return ProposalFamily(p, [q1, DiscreteDensity([0.25, 0.75])], defensive_index=0 if defensive else None)


class TestGaussian:
    def test_standard_normal_at_zero(self):
        assert density_at(GaussianDensity([0.0], [[1.0]]), [0.0]) == pytest.approx((2 * math.pi) ** -0.5, rel=1e-14)

    def test_variance_scaling(self):
        g1 = density_at(GaussianDensity.isotropic([0.0], 1.0), [0.0])
        g4 = density_at(GaussianDensity.isotropic([0.0], 4.0), [0.0])
        assert g4 == pytest.approx(g1 / 2, rel=1e-14)

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(4, 4))
        cov = A @ A.T + np.eye(4)
        mean = rng.normal(size=4)
        X = rng.normal(size=(50, 4)) * 2
        ours = GaussianDensity(mean, cov).logpdf(X)
        ref = stats.multivariate_normal(mean, cov).logpdf(X)
        assert np.allclose(ours, ref, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            GaussianDensity(np.zeros(5), np.eye(5)).pdf(np.zeros(3))

    def test_not_positive_definite(self):
        with pytest.raises(ValueError):
            GaussianDensity([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_draw_zero_points(self):
        assert draw(GaussianDensity.isotropic(np.zeros(2), 1.0), 0, stream(0)).shape == (0, 2)

    def test_same_stream_same_points(self):
        g = GaussianDensity.isotropic(np.zeros(3), 2.0)
        assert np.array_equal(draw(g, 10, stream(5, 1, 2)), draw(g, 10, stream(5, 1, 2)))
        assert not np.array_equal(draw(g, 10, stream(5, 1, 2)), draw(g, 10, stream(5, 1, 3)))

    def test_sample_mean_clt(self):
        n = 100_000
        X = draw(GaussianDensity(np.zeros(2), np.eye(2)), n, stream(11))
        assert np.all(np.abs(X.mean(axis=0)) < 4 / math.sqrt(n))

    def test_sample_covariance(self):
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        X = draw(GaussianDensity([1.0, -1.0], cov), 200_000, stream(12))
        assert np.allclose(np.cov(X.T), cov, atol=0.02)


class TestDiscrete:
    def test_lookup(self):
        d = DiscreteDensity([0.2, 0.8], atoms=[3.0, -1.0])
        assert np.allclose(d.pdf(np.array([[-1.0], [3.0], [0.0]])), [0.8, 0.2, 0.0])
        assert d.logpdf(np.array([[0.0]]))[0] == -np.inf

    def test_rejects_bad_pmf(self):
        with pytest.raises(ValueError):
            DiscreteDensity([0.5, 0.6])
        with pytest.raises(ValueError):
            DiscreteDensity([0.5, 0.5], atoms=[1.0, 1.0])


class TestMixtureDensity:
    def test_two_point_example(self):
        fam = ProposalFamily(DiscreteDensity([0.5, 0.5]), [DiscreteDensity([0.5, 0.5]), DiscreteDensity([0.25, 0.75])])
        assert mixture_density(fam, [0.5, 0.5], np.array([1.0])) == pytest.approx(0.625, rel=1e-14)

    def test_degenerate_alpha(self):
        fam = two_point_family()
        X = np.array([[0.0], [1.0]])
        assert np.allclose(mixture_density(fam, [1.0, 0.0], X), fam.proposals[0].pdf(X), rtol=1e-14)

    def test_identical_components(self):
        g = GaussianDensity.isotropic(np.zeros(2), 1.0)
        fam = ProposalFamily(g, [g, g, g])
        X = np.random.default_rng(0).normal(size=(5, 2))
        assert np.allclose(mixture_density(fam, [0.2, 0.3, 0.5], X), g.pdf(X), rtol=1e-13)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
    def test_dominates_each_weighted_component(self, raw, seed):
        a = np.array(raw) / sum(raw)
        fam = ProposalFamily(GaussianDensity.isotropic(np.zeros(2), 1.0),
                             [GaussianDensity.isotropic(c, v) for c, v in (([0, 0], 1.0), ([2, 1], 0.3), ([-1, 3], 4.0))])
        X = np.random.default_rng(seed).normal(size=(20, 2)) * 3
        qa = mixture_density(fam, a, X)
        q = fam.densities(X)
        assert np.all(qa >= (a * q).max(axis=1) * (1 - 1e-12))

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mixture_density(two_point_family(), [1.0], np.array([[0.0]]))


class TestControlFeatures:
    def test_two_point_example(self):
        fam = ProposalFamily(DiscreteDensity([0.5, 0.5]), [DiscreteDensity([0.25, 0.75])])
        h = control_features(fam, fam.nominal, np.array([[0.0], [1.0]]))
        assert np.allclose(h[:, 0], [0.5, 1.5])
        assert np.dot(h[:, 0], [0.5, 0.5]) == pytest.approx(1.0)

    def test_defensive_column_is_one(self):
        fam = two_point_family(defensive=True)
        h = control_features(fam, fam.nominal, np.array([[0.0], [1.0]]))
        assert np.allclose(h[:, 0], 1.0)

    def test_zero_where_nominal_vanishes(self):
        p = DiscreteDensity([1.0, 0.0])
        fam = ProposalFamily(p, [DiscreteDensity([0.5, 0.5])])
        assert np.array_equal(control_features(fam, p, np.array([[1.0]])), [[0.0]])


class TestFamily:
    def test_defensive_must_equal_nominal(self):
        with pytest.raises(ValueError):
            ProposalFamily(GaussianDensity.isotropic([0.0], 1.0), [GaussianDensity.isotropic([0.0], 2.0)],
                           defensive_index=0)

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            ProposalFamily(GaussianDensity.isotropic([0.0], 1.0), [GaussianDensity.isotropic([0.0, 0.0], 1.0)])


class TestAllocation:
    def test_exact(self):
        assert np.array_equal(stratified_allocation([0.5, 0.3, 0.2], 10), [5, 3, 2])

    def test_thirds(self):
        c = stratified_allocation(np.full(3, 1 / 3), 10)
        assert c.sum() == 10 and set(c) <= {3, 4}

    def test_tiny_weight_rounds_to_zero(self):
        assert np.array_equal(stratified_allocation([0.999, 0.001], 10), [10, 0])

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12), st.integers(0, 10_000))
    def test_largest_remainder_contract(self, raw, n):
        a = np.array(raw)
        if a.sum() == 0:
            a[0] = 1.0
        a /= a.sum()
        c = stratified_allocation(a, n)
        assert c.sum() == n
        assert np.all(np.abs(c - n * a) < 1 + 1e-9)


class TestDrawMixture:
    def test_degenerate_stratified(self):
        fam = two_point_family()
        s = draw_mixture(fam, [1.0, 0.0], 50, 3)
        assert np.all(s.stratum == 0) and np.array_equal(s.counts, [50, 0])

    def test_counts_and_effective_alpha(self):
        fam = two_point_family()
        s = draw_mixture(fam, MixtureWeights(np.array([0.37, 0.63])), 11, (1, 2))
        assert np.array_equal(s.counts, stratified_allocation([0.37, 0.63], 11))
        assert np.allclose(s.alpha, s.counts / 11)
        assert np.array_equal(np.bincount(s.stratum, minlength=2), s.counts)

    def test_strata_use_independent_streams(self):
        fam = ProposalFamily(GaussianDensity.isotropic([0.0], 1.0),
                             [GaussianDensity.isotropic([0.0], 1.0), GaussianDensity.isotropic([3.0], 1.0)])
        a = draw_mixture(fam, [0.5, 0.5], 20, (9,))
        b = draw_mixture(fam, [0.25, 0.75], 40, (9,))
        # stratum 1 draws ten then thirty points from the same child stream
        assert np.array_equal(a.points[a.stratum == 1], b.points[b.stratum == 1][:10])

    def test_unstratified_fraction(self):
        n = 100_000
        s = draw_mixture(two_point_family(), [0.5, 0.5], n, (4,), stratified=False)
        frac = np.mean(s.stratum == 0)
        assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / n)
        assert np.array_equal(s.alpha, [0.5, 0.5])

    def test_defensive_ratio_bound(self):
        g = GaussianDensity.isotropic(np.zeros(2), 1.0)
        fam = ProposalFamily(g, [g, GaussianDensity.isotropic([3, 3], 0.1)], defensive_index=0)
        s = draw_mixture(fam, [0.2, 0.8], 2000, (2,))
        assert np.all(s.p / s.q_alpha() <= 1 / s.alpha[0] * (1 + 1e-12))
        hp = control_features(fam, g, s.points)[:, 0]
        assert np.all((hp - 1) * s.p / s.q_alpha() == 0)

    def test_same_seed_identical(self):
        fam = two_point_family()
        a = draw_mixture(fam, [0.3, 0.7], 100, (1, 2, 3))
        b = draw_mixture(fam, [0.3, 0.7], 100, (1, 2, 3))
        assert np.array_equal(a.points, b.points)
