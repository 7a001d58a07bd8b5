import math

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.distance import pdist

from keyopt.exceptions import InvalidKeypointsError
from keyopt.geometry import ObjectModel, PointCloud, corner_grid, make_synthetic_object
from keyopt.sampling import (
    KeypointSet,
    bbox_corner_keypoints,
    bbox_heuristic_keypoints,
    dispersion_score,
    fps_indices,
    fps_sample,
    normalized_corners,
    random_keypoints,
)

SQUARE = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]


class FarthestPointTests(SimpleTestCase):
    def test_unit_square_tie_break(self):
        self.assertEqual(fps_indices(np.array(SQUARE, dtype=float), 3, 0), [0, 3, 1])
        keypoints = fps_sample(PointCloud(SQUARE), 3)
        self.assertEqual(keypoints.source_indices, (0, 3, 1))

    def test_whole_cloud(self):
        self.assertEqual(sorted(fps_indices(np.array(SQUARE, dtype=float), 4, 2)), [0, 1, 2, 3])

    def test_too_many_points(self):
        with self.assertRaises(InvalidKeypointsError):
            fps_sample(PointCloud(SQUARE), 5)

    def test_beats_random_subsets(self):
        rng = np.random.default_rng(0)
        points = rng.random((200, 3))
        fps = pdist(points[fps_indices(points, 8)]).min()
        best_random = max(pdist(points[rng.choice(200, 8, replace=False)]).min() for _ in range(100))
        self.assertGreaterEqual(fps, best_random)

    def test_appending_selected_duplicates_keeps_the_selection(self):
        points = np.random.default_rng(4).random((50, 3))
        selected = fps_indices(points, 5)
        padded = np.vstack([points, points[selected]])
        self.assertEqual(fps_indices(padded, 5), selected)

        # A bare cloud is renormalized by its own centroid, so only the indices are stable.
        self.assertEqual(fps_sample(PointCloud(padded), 5).source_indices, tuple(selected))
        self.assertEqual(fps_sample(PointCloud(points), 5).source_indices, tuple(selected))

    def test_returns_normalized_coordinates(self):
        model = make_synthetic_object("box", (2, 1, 0.5), 300, rng_seed=0)
        keypoints = fps_sample(model, 8)
        np.testing.assert_allclose(keypoints.coords, model.normalize_points(model.cloud.positions[list(keypoints.source_indices)]))


class CornerTests(SimpleTestCase):
    def setUp(self):
        self.cube = ObjectModel.from_cloud("cube", PointCloud(corner_grid([0, 0, 0], [1, 1, 1])))

    def test_all_corners_in_binary_order(self):
        keypoints = bbox_corner_keypoints(self.cube, range(8))
        expected = (corner_grid([0, 0, 0], [1, 1, 1]) - 0.5) / math.sqrt(3)
        np.testing.assert_allclose(keypoints.coords, expected, atol=1e-12)
        np.testing.assert_array_equal(corner_grid([0, 0, 0], [1, 1, 1])[5], [1, 0, 1])

    def test_subset_order_is_kept(self):
        keypoints = bbox_corner_keypoints(self.cube, [0, 3, 5])
        np.testing.assert_array_equal(keypoints.coords, normalized_corners(self.cube)[[0, 3, 5]])
        self.assertEqual(keypoints.source_indices, (0, 3, 5))

    def test_invalid_subsets(self):
        with self.assertRaisesMessage(InvalidKeypointsError, "fewer than 3 keypoints"):
            bbox_corner_keypoints(self.cube, [0, 1])
        with self.assertRaises(InvalidKeypointsError):
            bbox_corner_keypoints(self.cube, [0, 1, 1])
        with self.assertRaises(InvalidKeypointsError):
            bbox_corner_keypoints(self.cube, [0, 1, 8])

    def test_heuristic_starts_at_corner_zero(self):
        keypoints = bbox_heuristic_keypoints(self.cube, 3)
        self.assertEqual(keypoints.source_indices[:2], (0, 7))

    def test_flat_cloud_names_the_flat_axis(self):
        square = ObjectModel.from_cloud("square", PointCloud(SQUARE))
        with self.assertRaisesMessage(InvalidKeypointsError, "'square' is flat along z"):
            bbox_heuristic_keypoints(square, 4)
        with self.assertRaisesMessage(InvalidKeypointsError, "flat along z"):
            bbox_corner_keypoints(square, [0, 1, 2])


class RandomKeypointTests(SimpleTestCase):
    def setUp(self):
        self.model = make_synthetic_object("l-bracket", (1, 1, 0.3), 400, rng_seed=2)

    def test_sphere_mode_stays_inside_bounding_sphere(self):
        radius = np.linalg.norm(self.model.normalize_points(self.model.cloud.positions), axis=1).max()
        for seed in range(5):
            keypoints = random_keypoints(self.model, "sphere", 8, rng_seed=seed)
            self.assertTrue(np.all(np.linalg.norm(keypoints.coords, axis=1) <= radius + 1e-12))

    def test_bbox_region_mode_stays_near_corners(self):
        keypoints = random_keypoints(self.model, "bbox_region", 8, region_radius=0.05, rng_seed=3)
        corners = normalized_corners(self.model)[list(keypoints.source_indices)]
        self.assertTrue(np.all(np.linalg.norm(keypoints.coords - corners, axis=1) <= 0.05))
        self.assertEqual(sorted(keypoints.source_indices), list(range(8)))

    def test_same_seed_same_set(self):
        a = random_keypoints(self.model, "bbox-region", 5, rng_seed=[4, 1])
        b = random_keypoints(self.model, "bbox_region", 5, rng_seed=[4, 1])
        self.assertTrue(np.array_equal(a.coords, b.coords))

    def test_invalid_mode(self):
        with self.assertRaises(InvalidKeypointsError):
            random_keypoints(self.model, "cube", 4)
        with self.assertRaises(InvalidKeypointsError):
            random_keypoints(self.model, "bbox_region", 4, region_radius=0.0)


class DispersionScoreTests(SimpleTestCase):
    def test_cube_corner_triple(self):
        self.assertAlmostEqual(dispersion_score(KeypointSet([[0, 0, 0], [1, 0, 0], [0, 1, 0]])), 2 + math.sqrt(2))

    def test_coincident_candidates_score_zero_for_that_pair(self):
        self.assertEqual(dispersion_score(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0.0]])), 2.0)

    def test_degree_one_homogeneity(self):
        coords = np.random.default_rng(1).normal(size=(6, 3))
        self.assertAlmostEqual(dispersion_score(2 * coords), 2 * dispersion_score(coords))


class KeypointSetTests(SimpleTestCase):
    def test_invariants(self):
        with self.assertRaises(InvalidKeypointsError):
            KeypointSet([[0, 0, 0], [1, 0, 0]])
        with self.assertRaises(InvalidKeypointsError):
            KeypointSet([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
        with self.assertRaises(InvalidKeypointsError):
            KeypointSet([[0, 0, 0], [np.nan, 0, 0], [1, 0, 0]])
        self.assertEqual(KeypointSet(SQUARE).n_k, 4)
