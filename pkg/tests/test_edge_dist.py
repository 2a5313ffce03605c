"""Tests for the product-Bernoulli edge distribution."""

import itertools

import numpy as np
import pytest

from lgc.edge_dist import EdgeDistribution
from lgc.errors import ImpossibleSample, ShapeMismatch


def frozen_dist(theta):
    theta = np.asarray(theta, dtype=float)
    return EdgeDistribution(theta, mask=np.zeros(theta.shape, dtype=bool))


class TestSample:
    def test_zero_probability_edges_never_fire(self):
        dist = frozen_dist(np.zeros((3, 3)))
        adjs = dist.sample_many(np.random.default_rng(0), 500)
        assert not adjs.any()

    def test_near_one_probability_frequency(self):
        # one edge at 1 - eps; binomial CI over 1e6 draws
        eps = 1e-4
        dist = frozen_dist([[0.0, 1.0 - eps], [0.0, 0.0]])
        adjs = dist.sample_many(np.random.default_rng(1), 1_000_000)
        frac = adjs[:, 0, 1].mean()
        assert 0.9996 <= frac <= 1.0

    def test_template_edge_frequency(self):
        theta = np.zeros((4, 4))
        theta[0, 1] = theta[2, 3] = theta[1, 2] = 0.75
        dist = frozen_dist(theta)
        adjs = dist.sample_many(np.random.default_rng(2), 100_000)
        for i, j in [(0, 1), (2, 3), (1, 2)]:
            assert abs(adjs[:, i, j].mean() - 0.75) < 0.01

    def test_entries_binary_and_reproducible(self):
        dist = EdgeDistribution(np.full((5, 5), 0.4))
        a1 = dist.sample_many(np.random.default_rng(7), 10)
        a2 = dist.sample_many(np.random.default_rng(7), 10)
        assert np.array_equal(a1, a2)
        assert set(np.unique(a1)) <= {0.0, 1.0}


class TestLogLikelihood:
    def test_uniform_two_node_graph(self):
        dist = EdgeDistribution(np.full((2, 2), 0.5))
        a = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert np.isclose(dist.log_likelihood(a), 4 * np.log(0.5))

    def test_single_edge_contribution(self):
        dist = frozen_dist([[0.0, 0.75], [0.0, 0.0]])
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.isclose(dist.log_likelihood(a), np.log(0.75))

    def test_matches_product_of_edge_probabilities(self):
        rng = np.random.default_rng(3)
        theta = rng.uniform(0.05, 0.95, (4, 4))
        dist = EdgeDistribution(theta)
        for _ in range(20):
            a = dist.sample(rng)
            per_edge = np.where(a > 0, theta, 1 - theta)
            assert np.isclose(np.exp(dist.log_likelihood(a)), per_edge.prod())

    def test_impossible_sample_raises(self):
        dist = frozen_dist([[0.0, 0.5], [0.0, 0.0]])
        bad = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ImpossibleSample):
            dist.log_likelihood(bad)


class TestScoreGradient:
    def test_analytic_values(self):
        dist = EdgeDistribution(np.full((1, 1), 0.75))
        g1 = dist.score_gradient(np.array([[1.0]]))
        g0 = dist.score_gradient(np.array([[0.0]]))
        assert np.isclose(g1[0, 0], 1 / 0.75)
        assert np.isclose(g0[0, 0], -4.0)

    def test_matches_finite_differences_of_log_likelihood(self):
        rng = np.random.default_rng(4)
        theta = rng.uniform(0.1, 0.9, (3, 3))
        dist = EdgeDistribution(theta)
        a = dist.sample(rng)
        grad = dist.score_gradient(a)
        h = 1e-6
        for i in range(3):
            for j in range(3):
                tp, tm = theta.copy(), theta.copy()
                tp[i, j] += h
                tm[i, j] -= h
                fd = (
                    EdgeDistribution(tp).log_likelihood(a)
                    - EdgeDistribution(tm).log_likelihood(a)
                ) / (2 * h)
                assert abs(fd - grad[i, j]) <= 1e-5 * max(1.0, abs(grad[i, j]))

    def test_frozen_entries_zero(self):
        mask = np.array([[True, False], [False, True]])
        dist = EdgeDistribution(np.full((2, 2), 0.3), mask=mask)
        g = dist.score_gradient(np.ones((2, 2)))
        assert g[0, 1] == 0.0 and g[1, 0] == 0.0
        assert g[0, 0] != 0.0


class TestKl:
    def test_identical_distributions(self):
        dist = EdgeDistribution(np.full((3, 3), 0.3))
        assert dist.kl_to(dist.copy()) == 0.0

    def test_single_edge_two_point_oracle(self):
        # direct summation over the {0, 1} outcomes of one edge
        t, p = 0.75, 0.5
        oracle = t * np.log(t / p) + (1 - t) * np.log((1 - t) / (1 - p))
        dist = EdgeDistribution(np.array([[t]]))
        prior = EdgeDistribution(np.array([[p]]))
        assert np.isclose(dist.kl_to(prior), oracle)
        assert np.isclose(oracle, 0.130812, atol=1e-6)

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            d = EdgeDistribution(rng.uniform(0.01, 0.99, (2, 2)))
            p = EdgeDistribution(rng.uniform(0.01, 0.99, (2, 2)))
            assert d.kl_to(p) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            EdgeDistribution(np.full((2, 2), 0.5)).kl_to(
                EdgeDistribution(np.full((3, 3), 0.5))
            )


class TestProject:
    def test_clamps_out_of_range(self):
        d = EdgeDistribution(np.array([[1.2, -0.1], [0.5, 0.3]]))
        eps = d.epsilon
        assert d.theta[0, 0] == 1 - eps
        assert d.theta[0, 1] == eps
        assert d.theta[1, 0] == 0.5

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        d = EdgeDistribution(rng.uniform(-0.5, 1.5, (4, 4)))
        once = d.project().theta.copy()
        twice = d.project().theta.copy()
        assert np.array_equal(once, twice)

    def test_frozen_entries_untouched(self):
        theta = np.array([[0.0, 0.25], [2.0, 0.5]])
        mask = np.array([[False, False], [True, True]])
        d = EdgeDistribution(theta, mask=mask)
        assert d.theta[0, 0] == 0.0 and d.theta[0, 1] == 0.25
        assert d.theta[1, 0] == 1 - d.epsilon


class TestDistributionConsistency:
    def test_sampling_matches_likelihood_over_support(self):
        # empirical frequency of each of the 16 two-node adjacencies vs
        # exp(log_likelihood), within 3 binomial standard errors
        rng = np.random.default_rng(8)
        theta = np.array([[0.3, 0.7], [0.55, 0.45]])
        dist = EdgeDistribution(theta)
        n = 1_000_000
        adjs = dist.sample_many(rng, n)
        codes = (
            adjs.reshape(n, 4) @ np.array([1.0, 2.0, 4.0, 8.0])
        ).astype(int)
        counts = np.bincount(codes, minlength=16)
        for code in range(16):
            bits = [(code >> k) & 1 for k in range(4)]
            a = np.array(bits, dtype=float).reshape(2, 2)
            p = np.exp(dist.log_likelihood(a))
            se = np.sqrt(p * (1 - p) / n)
            assert abs(counts[code] / n - p) <= 3 * se + 1e-12

    def test_score_expectation_is_zero_by_enumeration(self):
        theta = np.array([[0.2, 0.8], [0.6, 0.35]])
        dist = EdgeDistribution(theta)
        total = np.zeros((2, 2))
        for bits in itertools.product([0.0, 1.0], repeat=4):
            a = np.array(bits).reshape(2, 2)
            total += np.exp(dist.log_likelihood(a)) * dist.score_gradient(a)
        assert np.allclose(total, 0.0, atol=1e-12)


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        mask = rng.random((3, 3)) > 0.4
        theta = np.where(mask, rng.uniform(0.1, 0.9, (3, 3)), 0.0)
        d = EdgeDistribution(theta, mask=mask, epsilon=1e-3)
        d2 = EdgeDistribution.from_json_dict(d.to_json_dict())
        assert np.array_equal(d.theta, d2.theta)
        assert np.array_equal(d.mask, d2.mask)
        assert d.epsilon == d2.epsilon
