import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixis.oracle import (
    DiscreteSpace,
    SupportViolation,
    component_variances,
    exact_mean_square,
    exact_mu,
    exact_optimal_beta,
    exact_theta,
    exact_variance,
    random_interior_alpha,
    random_space,
)

seeds = st.integers(0, 2**32 - 1)


def two_point(f=(0.0, 2.0)):
    return DiscreteSpace([0.5, 0.5], [[0.25, 0.75], [0.5, 0.5]], list(f))


class TestMoments:
    def test_mu_examples(self):
        assert exact_mu(two_point((1.0, 1.0))) == 1.0
        assert exact_mu(two_point()) == 1.0
        assert exact_mu(two_point((0.0, 0.0))) == 0.0

    def test_is_variance_examples(self):
        s = two_point()
        assert exact_variance(s, "is", q=s.q[0]) == pytest.approx(1 / 3, abs=1e-15)
        assert exact_variance(s, "is", q=s.p) == pytest.approx(1.0, abs=1e-15)
        assert exact_variance(s, "plain") == pytest.approx(1.0, abs=1e-15)

    def test_zero_variance_proposal(self):
        p = np.array([0.2, 0.3, 0.5])
        f = np.array([1.0, 4.0, 2.0])
        q = f * p / (f * p).sum()
        assert exact_variance(DiscreteSpace(p, [q], f), "is", q=q) == pytest.approx(0.0, abs=1e-15)

    def test_theta_is_one_under_support_conditions(self):
        s = random_space(np.random.default_rng(3), 10, 4, zero_frac=0.3, nominal_zero_frac=0.3)
        assert np.allclose(exact_theta(s), 1.0, atol=1e-14)

    def test_support_violation(self):
        s = DiscreteSpace([0.5, 0.5], [[1.0, 0.0]], [1.0, 1.0])
        with pytest.raises(SupportViolation):
            exact_variance(s, "mixture", alpha=[1.0])
        assert component_variances(s)[0] == np.inf

    def test_not_a_pmf(self):
        with pytest.raises(ValueError):
            DiscreteSpace([0.5, 0.6], [[0.5, 0.5]], [0.0, 0.0])


class TestIdentities:
    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_degenerate_mixture_is_single_proposal(self, seed):
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(2, 15)), 3)
        if not np.all(s.q[1][s.p > 0] > 0):
            return
        assert exact_variance(s, "mixture", alpha=[0, 1, 0]) == pytest.approx(
            exact_variance(s, "is", q=s.q[1]), rel=1e-12, abs=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_stratification_removes_between_component_variance(self, seed):
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(2, 20)), int(rng.integers(1, 6)), zero_frac=0.3)
        a = random_interior_alpha(rng, s.J)
        mu = exact_mu(s)
        qa = a @ s.q
        g = np.where(qa > 0, s.f * s.p / np.where(qa > 0, qa, 1.0), 0.0)
        mu_j = s.q @ g
        iid = exact_variance(s, "mixture", alpha=a)
        strat = exact_variance(s, "stratified", alpha=a)
        assert strat == pytest.approx(iid - np.dot(a, (mu_j - mu) ** 2), rel=1e-12, abs=1e-10)
        assert strat <= iid * (1 + 1e-12) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_balance_heuristic_matches_stratified(self, seed):
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(2, 20)), int(rng.integers(1, 6)), zero_frac=0.3)
        counts = rng.integers(1, 20, size=s.J)
        n = counts.sum()
        a = counts / n
        nq = s.q * counts[:, None]
        tot = nq.sum(axis=0)
        omega = np.where(tot > 0, nq / np.where(tot > 0, tot, 1.0), 0.0)
        mis = exact_variance(s, "multiple_is", omega=omega, counts=counts)
        assert mis == pytest.approx(exact_variance(s, "stratified", alpha=a), rel=1e-10, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_mean_square_form(self, seed):
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(2, 20)), int(rng.integers(1, 6)), zero_frac=0.3,
                         nominal_zero_frac=0.2)
        a = random_interior_alpha(rng, s.J)
        b = rng.normal(size=s.J)
        mu = exact_mu(s)
        ms = exact_mean_square(s, a, b, "hat")
        assert ms == pytest.approx(exact_variance(s, "mixture_cv", alpha=a, beta=b) + mu * mu, rel=1e-11)


class TestOptimalBeta:
    def test_linear_integrand_has_zero_variance(self):
        rng = np.random.default_rng(5)
        s = random_space(rng, 8, 3)
        a = random_interior_alpha(rng, 3)
        # f = c + b.(h - 1) is an exact fit for the hat regression
        h = s.q / s.p
        f = 2.0 + np.array([0.5, -1.0, 3.0]) @ (h - 1)
        assert exact_optimal_beta(s.with_f(f), a, "hat")[1] == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seeds)
    def test_is_a_minimum(self, seed):
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(3, 20)), int(rng.integers(1, 5)), zero_frac=0.2)
        a = random_interior_alpha(rng, s.J)
        for kind in ("hat", "tilde"):
            beta, v = exact_optimal_beta(s, a, kind)
            for _ in range(5):
                bumped = beta + rng.normal(size=s.J) * 0.1
                assert v <= exact_variance(s, "mixture_cv", alpha=a, beta=bumped, kind=kind) * (1 + 1e-12) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_mixing_in_other_weights(self, seed):
        # min_beta var under lambda alpha + (1 - lambda) omega is at most sigma^2_alpha / lambda
        rng = np.random.default_rng(seed)
        s = random_space(rng, int(rng.integers(2, 20)), int(rng.integers(1, 6)), zero_frac=0.3)
        a, w = random_interior_alpha(rng, s.J), random_interior_alpha(rng, s.J)
        lam = float(rng.uniform(0.05, 1.0))
        g = lam * a + (1 - lam) * w
        for kind in ("hat", "tilde"):
            bound = exact_variance(s, "mixture", alpha=a) / lam
            assert exact_optimal_beta(s, g, kind)[1] <= bound * (1 + 1e-12) + 1e-10
