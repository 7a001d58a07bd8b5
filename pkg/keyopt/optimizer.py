"""
Keypoint searches that work on coordinates directly: projected gradient
descent with backtracking, exhaustive bounding-box corner subsets, and a
RANSAC-style sampler that keeps the best candidate.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .exceptions import InvalidConfigError, InvalidKeypointsError
from .geometry import Aabb
from .loss import DEFAULT_SWAP_EPOCH, LossConfig, combined_loss, loss_and_gradient, object_similarity, weight_schedule
from .sampling import (
    DEFAULT_REGION_RADIUS,
    KeypointSet,
    bbox_corner_keypoints,
    check_box_corners,
    dispersion_score,
    min_pairwise_distance,
    random_keypoints,
)
from .votes import VoteScheme

logger = logging.getLogger(__name__)

MAX_HALVINGS = 20
STEP_TOLERANCE = 1e-8
REGION_SCALE = 1.5
SEARCH_SAMPLERS = ("sphere", "bbox_region", "corners")
DEFAULT_W_SIM = 1.0
DEFAULT_W_DISP = 0.1


@dataclass(frozen=True)
class OptimizeConfig:
    steps: int = 200
    lr: float = 0.05
    min_separation: float = 0.0
    schedule: bool = True
    swap_epoch: int = DEFAULT_SWAP_EPOCH
    loss: LossConfig = field(default_factory=LossConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidConfigError("steps must be non-negative")
        if not self.lr > 0.0:
            raise InvalidConfigError("lr must be positive")
        if self.min_separation < 0.0:
            raise InvalidConfigError("min_separation must be non-negative")

    def loss_at(self, step):
        if not self.schedule:
            return self.loss
        return self.loss.with_weights(*weight_schedule(step, self.swap_epoch))


@dataclass(frozen=True, eq=False)
class SearchResult:
    keypoints: KeypointSet
    score: float
    evaluated: int
    trace: tuple = ()
    valid: bool = True
    subset: tuple = None

    @property
    def min_distance(self):
        return min_pairwise_distance(self.keypoints.coords)

    def as_dict(self):
        return {
            "keypoints": self.keypoints.coords.tolist(),
            "score": self.score,
            "evaluated": self.evaluated,
            "trace": [float(v) for v in self.trace],
            "valid": self.valid,
            "subset": list(self.subset) if self.subset is not None else None,
            "min_distance": self.min_distance,
        }


def search_region(objects):
    """Union of the normalized bounding boxes, grown 1.5x about its center."""
    lows, highs = [], []
    for model in objects:
        box = model.aabb
        lows.append(model.normalize_points(box.min_corner))
        highs.append(model.normalize_points(box.max_corner))
    region = Aabb(np.min(lows, axis=0), np.max(highs, axis=0)).scaled(REGION_SCALE)
    return region.min_corner, region.max_corner


# ------------------- Direct descent -------------------

def optimize_keypoints_direct(init, objects, cfg=None):
    """
    Gradient descent on the combined loss with backtracking: the step is
    halved until the loss does not increase (at most 20 halvings, after that
    the step is skipped). Keypoints are clipped into the search region.

    trace[0] is the initial loss and trace[t] the best loss seen up to step
    t, each value taken under the weights of the step that produced it, so
    the trace never increases, across a weight swap included. The returned
    score is the final keypoints' loss under the final step's weights.
    """
    cfg = cfg or OptimizeConfig()
    if not objects:
        raise InvalidConfigError("at least one object is required")
    lo, hi = search_region(objects)
    coords = np.clip(np.array(init.coords, dtype=np.float64), lo, hi)
    trace = [combined_loss(coords, objects, cfg.loss_at(0)).total]
    evaluated = 1
    final_step = 0

    for step in range(cfg.steps):
        final_step = step
        config = cfg.loss_at(step)
        report, grad = loss_and_gradient(coords, objects, config)
        current = report.total
        evaluated += 1
        size = cfg.lr
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            candidate = np.clip(coords - size * grad, lo, hi)
            value = combined_loss(candidate, objects, config).total
            evaluated += 1
            if value <= current:
                accepted = (candidate, value)
                break
            size /= 2.0

        if accepted is None:
            logger.debug("step %d: line search exhausted, keeping keypoints", step)
            trace.append(min(trace[-1], current))
            continue
        candidate, value = accepted
        moved = float(np.linalg.norm(candidate - coords))
        coords = candidate
        trace.append(min(trace[-1], value))
        if moved < STEP_TOLERANCE:
            logger.debug("step %d: converged (step norm %.3g)", step, moved)
            break

    score = combined_loss(coords, objects, cfg.loss_at(final_step)).total
    keypoints = KeypointSet(coords)
    valid = min_pairwise_distance(coords) >= cfg.min_separation
    if not valid:
        logger.warning("Optimized keypoints are closer than min_separation %.3f", cfg.min_separation)
    logger.info("Direct optimization: loss %.6f -> %.6f over %d steps", trace[0], score, len(trace) - 1)
    return SearchResult(keypoints, score, evaluated, tuple(trace), valid)


# ------------------- Corner search -------------------

def _corner_subsets(n):
    if not 3 <= n <= 8:
        raise InvalidKeypointsError(f"corner search needs 3 <= n <= 8, got {n}")
    return list(combinations(range(8), n))


def _w1_sum(keypoints, positions, config):
    values, _ = object_similarity(keypoints.coords, positions, config)
    return float(values.sum())


def exhaustive_corner_search(model, n, scheme=VoteScheme.RADIAL, projections=None):
    """
    Score every n-subset of the 8 normalized box corners by the pairwise
    exact-W1 sum; return (best, worst). Ties keep the lexicographically
    first subset.
    """
    subsets = _corner_subsets(n)
    check_box_corners(model)
    config = LossConfig(alpha=1.0, beta=0.0, scheme=scheme, projections=projections)
    positions = model.normalize_points(model.cloud.positions)

    best = worst = None
    best_trace, worst_trace = [], []
    for subset in subsets:
        keypoints = bbox_corner_keypoints(model, subset)
        score = _w1_sum(keypoints, positions, config)
        if best is None or score < best[1]:
            best = (keypoints, score, subset)
        if worst is None or score > worst[1]:
            worst = (keypoints, score, subset)
        best_trace.append(best[1])
        worst_trace.append(worst[1])

    logger.info(
        "Corner search n=%d over %d subsets: best %s (%.6f), worst %s (%.6f)",
        n, len(subsets), best[2], best[1], worst[2], worst[1],
    )
    evaluated = comb(8, n)
    return (
        SearchResult(best[0], best[1], evaluated, tuple(best_trace), subset=best[2]),
        SearchResult(worst[0], worst[1], evaluated, tuple(worst_trace), subset=worst[2]),
    )


# ------------------- RANSAC-style search -------------------

def ransac_keypoint_search(
    model,
    n,
    iterations,
    sampler="bbox_region",
    w_sim=DEFAULT_W_SIM,
    w_disp=DEFAULT_W_DISP,
    scheme=VoteScheme.RADIAL,
    region_radius=DEFAULT_REGION_RADIUS,
    rng_seed=0,
    projections=None,
):
    """
    Draw `iterations` candidates and keep the one minimizing
    w_sim * (pairwise W1 sum) - w_disp * dispersion. Candidate i depends only
    on (rng_seed, i); the corners sampler walks the corner subsets in
    lexicographic order, wrapping around.
    """
    if iterations < 1:
        raise InvalidConfigError("iterations must be at least 1")
    sampler = str(sampler).replace("-", "_")
    if sampler not in SEARCH_SAMPLERS:
        raise InvalidConfigError(f"unknown sampler {sampler!r}; expected one of {', '.join(SEARCH_SAMPLERS)}")
    subsets = _corner_subsets(n) if sampler == "corners" else None
    config = LossConfig(alpha=1.0, beta=0.0, scheme=scheme, projections=projections)
    positions = model.normalize_points(model.cloud.positions)

    best = None
    trace = []
    for i in range(iterations):
        if subsets is not None:
            subset = subsets[i % len(subsets)]
            candidate = bbox_corner_keypoints(model, subset)
        else:
            subset = None
            candidate = random_keypoints(model, sampler, n, region_radius, [int(rng_seed), i])
        score = w_sim * _w1_sum(candidate, positions, config) - w_disp * dispersion_score(candidate)
        if best is None or score < best[1]:
            best = (candidate, score, subset)
        trace.append(best[1])

    logger.info("RANSAC search (%s, %d iterations): best score %.6f", sampler, iterations, best[1])
    return SearchResult(best[0], best[1], iterations, tuple(trace), subset=best[2])
