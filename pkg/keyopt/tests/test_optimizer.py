from itertools import combinations

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.distance import cdist
from scipy.stats import wasserstein_distance

from keyopt.exceptions import InvalidConfigError, InvalidKeypointsError
from keyopt.geometry import ObjectModel, PointCloud, make_synthetic_object
from keyopt.loss import LossConfig, combined_loss, pairwise_w1_sum
from keyopt.optimizer import (
    OptimizeConfig,
    exhaustive_corner_search,
    optimize_keypoints_direct,
    ransac_keypoint_search,
    search_region,
)
from keyopt.sampling import fps_sample, random_keypoints
from keyopt.votes import compute_votes, vote_mean_spread


def brute_force_corner_scores(model, n):
    """Independent enumeration: corner subset -> summed W1 of the radial vote distributions."""
    lo, hi = model.cloud.positions.min(axis=0), model.cloud.positions.max(axis=0)
    corners = np.array([[hi[a] if (c >> a) & 1 else lo[a] for a in range(3)] for c in range(8)])
    corners = (corners - model.centroid) * (1.0 / model.diameter)
    positions = (model.cloud.positions - model.centroid) * (1.0 / model.diameter)
    distances = cdist(corners, positions)
    return {
        subset: sum(wasserstein_distance(distances[i], distances[j]) for i, j in combinations(subset, 2))
        for subset in combinations(range(8), n)
    }


def monotone(values):
    return all(b <= a for a, b in zip(values, values[1:]))


class DirectOptimizerTests(SimpleTestCase):
    def setUp(self):
        self.box = make_synthetic_object("box", (2, 1, 0.5), 200, rng_seed=0)

    def test_zero_steps_returns_the_initial_set(self):
        init = fps_sample(self.box, 3)
        result = optimize_keypoints_direct(init, [self.box], OptimizeConfig(steps=0))
        np.testing.assert_array_equal(result.keypoints.coords, init.coords)
        self.assertEqual(result.score, combined_loss(init, [self.box], LossConfig()).total)
        self.assertEqual(result.trace, (result.score,))

    def test_trace_is_monotone(self):
        cfg = OptimizeConfig(steps=200, schedule=False)
        result = optimize_keypoints_direct(fps_sample(self.box, 3), [self.box], cfg)
        self.assertTrue(monotone(result.trace))
        self.assertAlmostEqual(result.score, result.trace[-1], delta=1e-12)

    def test_trace_is_monotone_across_the_weight_swap(self):
        cfg = OptimizeConfig(steps=80, swap_epoch=30)
        result = optimize_keypoints_direct(fps_sample(self.box, 3), [self.box], cfg)
        self.assertTrue(monotone(result.trace))
        self.assertLessEqual(result.trace[-1], result.trace[0])

    def test_box_trace_is_monotone_under_the_default_schedule(self):
        result = optimize_keypoints_direct(fps_sample(self.box, 3), [self.box], OptimizeConfig(min_separation=0.2))
        self.assertTrue(monotone(result.trace))

    def test_keypoints_stay_in_the_search_region(self):
        lo, hi = search_region([self.box])
        result = optimize_keypoints_direct(fps_sample(self.box, 4), [self.box], OptimizeConfig(steps=50, lr=0.5))
        self.assertTrue(np.all(result.keypoints.coords >= lo) and np.all(result.keypoints.coords <= hi))

    def test_l_bracket_efficacy(self):
        bracket = make_synthetic_object("l-bracket", (1, 1, 0.3), 300, rng_seed=0)
        init = fps_sample(bracket, 3)
        result = optimize_keypoints_direct(init, [bracket], OptimizeConfig(steps=200, min_separation=0.2))
        self.assertTrue(result.trace and monotone(result.trace))
        self.assertLessEqual(pairwise_w1_sum(result.keypoints, [bracket]), 0.7 * pairwise_w1_sum(init, [bracket]))
        self.assertGreaterEqual(result.min_distance, 0.2)
        self.assertTrue(result.valid)

    def test_invalid_config(self):
        with self.assertRaises(InvalidConfigError):
            OptimizeConfig(lr=0.0)
        with self.assertRaises(InvalidConfigError):
            OptimizeConfig(steps=-1)


class CornerSearchTests(SimpleTestCase):
    def setUp(self):
        self.box = make_synthetic_object("box", (2, 1, 0.5), 300, rng_seed=5)

    def test_counts_and_bracketing(self):
        for n, expected in ((3, 56), (4, 70), (8, 1)):
            best, worst = exhaustive_corner_search(self.box, n)
            self.assertEqual(best.evaluated, expected)
            self.assertLessEqual(best.score, worst.score)

    def test_matches_independent_enumeration(self):
        scores = brute_force_corner_scores(self.box, 3)
        best, worst = exhaustive_corner_search(self.box, 3)
        self.assertEqual(best.subset, min(scores, key=scores.get))
        self.assertEqual(worst.subset, max(scores, key=scores.get))
        self.assertAlmostEqual(best.score, scores[best.subset], delta=1e-9)
        self.assertLess(best.score, worst.score)

    def assert_best_triple_has_tighter_vote_means(self, model):
        best, worst = exhaustive_corner_search(model, 3)
        positions = model.normalize_points(model.cloud.positions)
        spread_best = vote_mean_spread(compute_votes(positions, best.keypoints, "radial"))
        spread_worst = vote_mean_spread(compute_votes(positions, worst.keypoints, "radial"))
        self.assertLess(spread_best, spread_worst, model.id)

    def test_best_triple_has_tighter_vote_means(self):
        for seed, n_points in ((0, 200), (5, 300)):
            self.assert_best_triple_has_tighter_vote_means(
                make_synthetic_object("box", (2, 1, 0.5), n_points, rng_seed=seed)
            )

    def test_best_triple_has_tighter_vote_means_on_an_l_bracket(self):
        self.assert_best_triple_has_tighter_vote_means(
            make_synthetic_object("l-bracket", (1.0, 0.8, 0.4), 600, rng_seed=3)
        )

    def test_flat_object_is_rejected(self):
        rng = np.random.default_rng(2)
        plate = ObjectModel.from_cloud("plate", PointCloud(np.column_stack([rng.random((40, 2)), np.zeros(40)])))
        with self.assertRaisesMessage(InvalidKeypointsError, "flat along z"):
            exhaustive_corner_search(plate, 3)
        with self.assertRaisesMessage(InvalidKeypointsError, "flat along z"):
            ransac_keypoint_search(plate, 3, 5, sampler="corners")

    def test_out_of_range(self):
        with self.assertRaises(InvalidKeypointsError):
            exhaustive_corner_search(self.box, 2)
        with self.assertRaises(InvalidKeypointsError):
            exhaustive_corner_search(self.box, 9)


class RansacSearchTests(SimpleTestCase):
    def setUp(self):
        self.bracket = make_synthetic_object("l-bracket", (1, 1, 0.3), 200, rng_seed=1)

    def test_corner_pool_finds_the_exhaustive_best(self):
        best, _ = exhaustive_corner_search(self.bracket, 3)
        result = ransac_keypoint_search(self.bracket, 3, 56, sampler="corners", w_disp=0.0)
        self.assertEqual(result.subset, best.subset)
        self.assertEqual(result.score, best.score)

    def test_same_seed_same_result(self):
        a = ransac_keypoint_search(self.bracket, 3, 20, rng_seed=9)
        b = ransac_keypoint_search(self.bracket, 3, 20, rng_seed=9)
        self.assertTrue(np.array_equal(a.keypoints.coords, b.keypoints.coords))
        self.assertEqual(a.trace, b.trace)

    def test_single_iteration_keeps_the_only_candidate(self):
        result = ransac_keypoint_search(self.bracket, 4, 1, sampler="sphere", rng_seed=4)
        candidate = random_keypoints(self.bracket, "sphere", 4, rng_seed=[4, 0])
        np.testing.assert_array_equal(result.keypoints.coords, candidate.coords)

    def test_best_score_never_increases(self):
        result = ransac_keypoint_search(self.bracket, 3, 40, rng_seed=2)
        self.assertTrue(monotone(result.trace))
        self.assertEqual(result.score, result.trace[-1])

    def test_unknown_sampler(self):
        with self.assertRaises(InvalidConfigError):
            ransac_keypoint_search(self.bracket, 3, 5, sampler="grid")
