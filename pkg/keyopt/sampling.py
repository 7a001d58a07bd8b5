"""
Heuristic and random keypoint generators: baselines for comparison and
initializations for the optimizers. All samplers return coordinates in the
normalized object frame (centroid at the origin, diameter 1).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .exceptions import InvalidKeypointsError, ZeroDiameterError
from .geometry import ObjectModel, object_stats

logger = logging.getLogger(__name__)

MIN_KEYPOINTS = 3
COINCIDENT_TOLERANCE = 1e-9
DEFAULT_REGION_RADIUS = 0.1
RANDOM_MODES = ("sphere", "bbox_region")


def min_pairwise_distance(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) < 2:
        return np.inf
    return float(pdist(coords).min())


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """
    N_K keypoints, ordered. source_indices records where a sampler took them
    from (cloud point indices for FPS, corner indices for bounding-box sets).
    """

    coords: np.ndarray
    source_indices: tuple = None

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvalidKeypointsError(f"keypoints must have shape (N, 3), got {coords.shape}")
        if len(coords) < MIN_KEYPOINTS:
            raise InvalidKeypointsError(f"fewer than {MIN_KEYPOINTS} keypoints")
        if not np.all(np.isfinite(coords)):
            raise InvalidKeypointsError("keypoints contain non-finite coordinates")
        if min_pairwise_distance(coords) <= COINCIDENT_TOLERANCE:
            raise InvalidKeypointsError("two keypoints coincide")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.source_indices is not None:
            indices = tuple(int(i) for i in self.source_indices)
            if len(indices) != len(coords):
                raise InvalidKeypointsError("source_indices must match the keypoint count")
            object.__setattr__(self, "source_indices", indices)

    @property
    def n_k(self):
        return len(self.coords)

    def __len__(self):
        return len(self.coords)


def _normalized_positions(cloud):
    if isinstance(cloud, ObjectModel):
        return cloud.normalize_points(cloud.cloud.positions)
    _, centroid, diameter = object_stats(cloud)
    if diameter <= 0.0:
        raise ZeroDiameterError()
    return (cloud.positions - centroid) / diameter


def fps_indices(positions, n, seed_index=0):
    """
    Greedy max-min selection starting from seed_index. Ties go to the lowest
    point index (np.argmax returns the first maximum).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n_points = len(positions)
    if not 1 <= n <= n_points:
        raise InvalidKeypointsError(f"cannot select {n} points from a cloud of {n_points}")
    if not 0 <= seed_index < n_points:
        raise InvalidKeypointsError(f"seed_index {seed_index} is out of range")

    selected = [int(seed_index)]
    min_dist = np.linalg.norm(positions - positions[seed_index], axis=1)
    while len(selected) < n:
        idx = int(np.argmax(min_dist))
        selected.append(idx)
        min_dist = np.minimum(min_dist, np.linalg.norm(positions - positions[idx], axis=1))
    return selected


def fps_sample(cloud, n, seed_index=0):
    """Farthest point sampling on a PointCloud (or ObjectModel)."""
    positions = _normalized_positions(cloud)
    indices = fps_indices(positions, n, seed_index)
    return KeypointSet(positions[indices], source_indices=indices)


def normalized_corners(model):
    return model.normalize_points(model.aabb.corners())


def check_box_corners(model):
    """Corner keypoints need a box with extent on every axis."""
    flat = [axis for axis, extent in zip("xyz", model.aabb.extents) if extent * model.norm_scale <= COINCIDENT_TOLERANCE]
    if flat:
        raise InvalidKeypointsError(
            f"object {model.id!r} is flat along {', '.join(flat)}; its bounding-box corners coincide"
        )


def bbox_corner_keypoints(model, subset):
    """Chosen corners of the normalized bounding box, in subset order."""
    check_box_corners(model)
    subset = [int(i) for i in subset]
    if len(subset) < MIN_KEYPOINTS:
        raise InvalidKeypointsError(f"fewer than {MIN_KEYPOINTS} keypoints")
    if any(not 0 <= i <= 7 for i in subset):
        raise InvalidKeypointsError(f"corner indices must lie in 0..7, got {subset}")
    if len(set(subset)) != len(subset):
        raise InvalidKeypointsError(f"duplicate corner index in {subset}")
    return KeypointSet(normalized_corners(model)[subset], source_indices=subset)


def bbox_heuristic_keypoints(model, n):
    """
    The usual bounding-box baseline: n mutually far corners, taken by FPS
    over the 8 corners from corner 0.
    """
    if not MIN_KEYPOINTS <= n <= 8:
        raise InvalidKeypointsError(f"bounding-box keypoints need 3..8 corners, got {n}")
    return bbox_corner_keypoints(model, fps_indices(normalized_corners(model), n, 0))


def random_keypoints(model, mode, n, region_radius=DEFAULT_REGION_RADIUS, rng_seed=0):
    """
    sphere: uniform inside the bounding sphere of the normalized model.
    bbox_region: keypoint j uniform in a ball of region_radius around corner
    order[j % 8], where order is a seeded permutation of the corners.
    """
    mode = str(mode).replace("-", "_")
    if mode not in RANDOM_MODES:
        raise InvalidKeypointsError(f"unknown random mode {mode!r}; expected one of {', '.join(RANDOM_MODES)}")
    if n < MIN_KEYPOINTS:
        raise InvalidKeypointsError(f"fewer than {MIN_KEYPOINTS} keypoints")
    rng = np.random.default_rng(rng_seed)

    if mode == "sphere":
        radius = float(np.linalg.norm(_normalized_positions(model), axis=1).max())
        return KeypointSet(_uniform_ball(rng, n, radius))

    if not region_radius > 0.0:
        raise InvalidKeypointsError("region_radius must be positive")
    order = rng.permutation(8)
    assigned = order[np.arange(n) % 8]
    coords = normalized_corners(model)[assigned] + _uniform_ball(rng, n, region_radius)
    return KeypointSet(coords, source_indices=assigned)


def _uniform_ball(rng, n, radius):
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.random(n) ** (1.0 / 3.0))[:, None]


def dispersion_score(keypoints):
    """Sum of pairwise keypoint distances; accepts any (N, 3) candidate."""
    coords = getattr(keypoints, "coords", keypoints)
    coords = np.asarray(coords, dtype=np.float64)
    if len(coords) < 2:
        return 0.0
    return float(pdist(coords).sum())
