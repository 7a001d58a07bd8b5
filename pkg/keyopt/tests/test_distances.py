import math

import numpy as np
import torch
from django.test import SimpleTestCase
from scipy.optimize import linprog
from scipy.stats import entropy, spearmanr

from keyopt.distances import (
    CriticModel,
    critic_distance,
    critic_wasserstein,
    divergence,
    make_critic,
    train_critic,
    wasserstein1_exact,
    wasserstein1_hist,
    wasserstein1_with_gradient,
)
from keyopt.exceptions import BinMismatchError, InvalidShapeError
from keyopt.votes import Histogram, build_histogram


def transport_lp(a, b):
    """Optimal transport cost between two uniform empirical measures, by linear programming."""
    m, n = len(a), len(b)
    cost = np.abs(np.subtract.outer(a, b)).reshape(-1)
    rows = np.kron(np.eye(m), np.ones(n))
    cols = np.kron(np.ones(m), np.eye(n))
    result = linprog(
        cost,
        A_eq=np.vstack([rows, cols]),
        b_eq=np.concatenate([np.full(m, 1.0 / m), np.full(n, 1.0 / n)]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    return result.fun


def one_hot(mass):
    mass = np.asarray(mass, dtype=float)
    return Histogram(np.arange(len(mass) + 1, dtype=float) * 0.5, mass, mass * 4)


class ExactWassersteinTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(wasserstein1_exact([0.2, 1.7, -3.0], [1.7, -3.0, 0.2]), 0.0)
        self.assertEqual(wasserstein1_exact([0, 1], [1, 2]), 1.0)
        self.assertEqual(wasserstein1_exact([0, 0], [0, 1]), 0.5)
        self.assertAlmostEqual(transport_lp(np.array([0.0, 0.0]), np.array([0.0, 1.0])), 0.5, delta=1e-9)

    def test_matches_linear_program(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = rng.normal(size=rng.integers(1, 9))
            b = rng.normal(size=rng.integers(1, 9)) + rng.normal()
            self.assertAlmostEqual(wasserstein1_exact(a, b), transport_lp(a, b), delta=1e-9)

    def test_metric_axioms(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, b, c = (rng.normal(size=rng.integers(1, 9)) * rng.uniform(0.5, 2) for _ in range(3))
            ab = wasserstein1_exact(a, b)
            self.assertAlmostEqual(ab, wasserstein1_exact(b, a), delta=1e-9)
            self.assertEqual(wasserstein1_exact(a, a), 0.0)
            self.assertLessEqual(wasserstein1_exact(a, c), ab + wasserstein1_exact(b, c) + 1e-9)

    def test_empty_input(self):
        with self.assertRaises(InvalidShapeError):
            wasserstein1_exact([], [1.0])

    def test_sorted_pairing_gradient(self):
        value, grad_a, grad_b = wasserstein1_with_gradient([0.0, 3.0], [1.0, 1.0])
        self.assertEqual(value, 1.5)
        np.testing.assert_array_equal(grad_a, [-0.5, 0.5])
        np.testing.assert_array_equal(grad_b, [0.5, -0.5])


class HistogramWassersteinTests(SimpleTestCase):
    def test_mass_moved_two_bins(self):
        self.assertEqual(wasserstein1_hist(one_hot([1, 0, 0]), one_hot([0, 0, 1])), 1.0)

    def test_self_distance(self):
        hist = one_hot([0.25, 0.5, 0.25])
        self.assertEqual(wasserstein1_hist(hist, hist), 0.0)

    def test_matches_bin_center_samples(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            a = rng.normal(size=rng.integers(5, 40))
            b = rng.normal(size=rng.integers(5, 40)) + 0.5
            lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
            hist_a = build_histogram(a, 8, (lo, hi))
            hist_b = build_histogram(b, 8, (lo, hi))
            expanded_a = np.repeat(hist_a.centers, hist_a.raw_counts)
            expanded_b = np.repeat(hist_b.centers, hist_b.raw_counts)
            self.assertAlmostEqual(wasserstein1_hist(hist_a, hist_b), wasserstein1_exact(expanded_a, expanded_b), delta=1e-9)

    def test_mismatched_edges(self):
        other = Histogram([0.0, 1.0, 2.0, 3.0], [1, 0, 0], [1, 0, 0])
        with self.assertRaises(BinMismatchError):
            wasserstein1_hist(one_hot([1, 0, 0]), other)


class DivergenceTests(SimpleTestCase):
    def test_kl_of_identical_histograms(self):
        hist = one_hot([0.1, 0.2, 0.7])
        self.assertAlmostEqual(divergence("kl", hist, hist), 0.0, delta=1e-12)

    def test_js_of_disjoint_masses(self):
        self.assertAlmostEqual(divergence("js", one_hot([1, 0]), one_hot([0, 1]), epsilon=1e-12), math.log(2), delta=1e-6)

    def test_cross_entropy_is_entropy_on_the_diagonal(self):
        uniform = one_hot([0.25] * 4)
        self.assertAlmostEqual(divergence("ce", uniform, uniform), math.log(4), delta=1e-9)
        skewed = one_hot([0.5, 0.3, 0.2, 0.0])
        self.assertAlmostEqual(divergence("ce", skewed, skewed), entropy(skewed.mass), delta=1e-9)

    def test_ranges(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            p, q = (one_hot(rng.dirichlet(np.ones(6))) for _ in range(2))
            self.assertGreaterEqual(divergence("kl", p, q), 0.0)
            self.assertTrue(0.0 <= divergence("js", p, q) <= math.log(2) + 1e-12)


class CriticTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.a = rng.normal(0.0, 1.0, 64)
        self.b = rng.normal(1.5, 0.7, 48)

    def test_identity_critic(self):
        loss, gp = critic_wasserstein(self.a, self.b, CriticModel.identity(), lam=10.0, rng_seed=0)
        self.assertEqual(gp, 0.0)
        self.assertAlmostEqual(loss, self.a.mean() - self.b.mean(), delta=1e-12)

    def test_zero_lambda_drops_the_penalty(self):
        critic = make_critic(3)
        loss, _ = critic_wasserstein(self.a, self.b, critic, lam=0.0)
        self.assertAlmostEqual(loss, critic_distance(self.a, self.b, critic), delta=1e-12)

    def test_training_raises_the_critic_gap(self):
        before = critic_distance(self.a, self.b, make_critic(7))
        after = critic_distance(self.a, self.b, train_critic(self.a, self.b, steps=200, rng_seed=7))
        self.assertGreaterEqual(after, before)

    def test_identical_samples_give_no_signal(self):
        critic = train_critic(self.a, self.a.copy(), steps=100, rng_seed=1)
        self.assertAlmostEqual(critic_distance(self.a, self.a, critic), 0.0, delta=0.05)

    def test_same_seed_same_model(self):
        first = train_critic(self.a, self.b, steps=50, rng_seed=2).state_dict()
        second = train_critic(self.a, self.b, steps=50, rng_seed=2).state_dict()
        for name, tensor in first.items():
            self.assertTrue(torch.equal(tensor, second[name]), name)

    def test_critic_ranks_like_exact_wasserstein(self):
        rng = np.random.default_rng(5)
        exact, learned = [], []
        for task in range(20):
            a = rng.normal(0.0, 1.0, 100)
            b = rng.normal(rng.uniform(-3.0, 3.0), rng.uniform(0.5, 1.5), 100)
            exact.append(wasserstein1_exact(a, b))
            critic = train_critic(a, b, steps=500, rng_seed=task)
            learned.append(abs(critic_distance(a, b, critic)))
        self.assertGreaterEqual(spearmanr(exact, learned)[0], 0.9)
