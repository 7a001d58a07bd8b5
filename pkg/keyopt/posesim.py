"""
Keypoint-voting pose simulator.

A trial poses an object at random, computes exact votes toward its keypoints,
corrupts them, recovers the scene keypoints by least squares, aligns model to
scene keypoints in closed form and scores the pose with ADD / ADD-S.
"""

import csv
import io
import logging
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .exceptions import DegenerateSystemError, InvalidConfigError, InvalidShapeError, KeyoptError
from .geometry import PointCloud, RigidTransform, denormalize_keypoints
from .sampling import KeypointSet
from .votes import VoteField, VoteScheme, compute_votes, voting_mask

logger = logging.getLogger(__name__)

ACCURACY_FRACTION = 0.1
DEFAULT_OUTLIER_SPREAD = 0.1
DEFAULT_TRANSLATION_EXTENT = 0.5
_RANK_TOLERANCE = 1e-10
CSV_HEADER = ("method", "object", "trial", "add", "rot_err_deg", "trans_err")


@dataclass(frozen=True)
class VoteNoiseModel:
    """Gaussian noise per vote component plus uniform outliers, in normalized units."""

    gaussian_std: float = 0.0
    outlier_rate: float = 0.0
    outlier_spread: float = DEFAULT_OUTLIER_SPREAD
    rng_seed: object = 0

    def __post_init__(self):
        if self.gaussian_std < 0.0:
            raise InvalidConfigError("gaussian_std must be non-negative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise InvalidConfigError("outlier_rate must lie in [0, 1]")
        if self.outlier_spread < 0.0:
            raise InvalidConfigError("outlier_spread must be non-negative")

    @property
    def is_noiseless(self):
        return self.gaussian_std == 0.0 and self.outlier_rate == 0.0


@dataclass(frozen=True)
class PoseEstimate:
    transform: RigidTransform
    residual: float


def perturb_votes(field, noise, scale=1.0):
    """
    Noisy copy of a vote field. Radial and offset noise is multiplied by
    `scale` (the object diameter when votes are in object units); direction
    votes are unitless and renormalized afterwards. Radial votes are clipped
    at zero.
    """
    if noise.is_noiseless:
        return field
    rng = np.random.default_rng(noise.rng_seed)
    unit = 1.0 if field.scheme is VoteScheme.VECTOR else scale
    values = np.array(field.values)

    values = values + rng.normal(0.0, noise.gaussian_std * unit, values.shape)
    outlier = rng.random(values.shape[:2]) < noise.outlier_rate
    spread = noise.outlier_spread * unit
    if field.scheme is VoteScheme.RADIAL:
        values = np.where(outlier, rng.uniform(0.0, spread, values.shape), values)
        values = np.maximum(values, 0.0)
    else:
        draws = rng.uniform(-spread, spread, values.shape)
        values = np.where(outlier[..., None], draws, values)

    if field.scheme is VoteScheme.VECTOR:
        norms = np.linalg.norm(values, axis=2, keepdims=True)
        values = np.where(norms > 0.0, values / np.where(norms > 0.0, norms, 1.0), field.values)
    return VoteField(field.scheme, values)


# ------------------- Keypoint recovery -------------------

def _trilaterate(positions, distances):
    # |x - p_i|^2 = r_i^2 minus the first equation is linear in x.
    a = 2.0 * (positions[1:] - positions[0])
    b = (
        np.sum(positions[1:] ** 2, axis=1)
        - np.sum(positions[0] ** 2)
        - distances[1:] ** 2
        + distances[0] ** 2
    )
    if len(a) < 3 or np.linalg.matrix_rank(a) < 3:
        raise DegenerateSystemError("radial recovery needs 4 non-coplanar surface points")
    solution, *_ = np.linalg.lstsq(a, b, rcond=None)
    return solution


def _intersect_rays(positions, directions):
    projectors = np.eye(3)[None, :, :] - directions[:, :, None] * directions[:, None, :]
    a = projectors.sum(axis=0)
    b = np.einsum("nij,nj->i", projectors, positions)
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= _RANK_TOLERANCE * max(s[0], 1.0):
        raise DegenerateSystemError("vector recovery needs at least 2 non-parallel rays")
    return np.linalg.solve(a, b)


def recover_keypoints(cloud, field):
    """Scene keypoints (N_K, 3) from the cloud the votes were cast from."""
    positions = np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)
    if len(positions) != field.n_points:
        raise InvalidShapeError("vote field and cloud disagree on the point count")
    if len(positions) == 0:
        raise DegenerateSystemError("no surface points to vote from")

    if field.scheme is VoteScheme.OFFSET:
        return (positions[None, :, :] + field.values).mean(axis=1)
    if field.scheme is VoteScheme.RADIAL:
        return np.array([_trilaterate(positions, row) for row in field.values])
    return np.array([_intersect_rays(positions, row) for row in field.values])


def horn_align(model_kps, scene_kps):
    """
    Least-squares rigid transform taking model keypoints onto scene keypoints,
    from the SVD of their cross-covariance with the reflection case folded
    back to a proper rotation.
    """
    model = np.asarray(getattr(model_kps, "coords", model_kps), dtype=np.float64)
    scene = np.asarray(getattr(scene_kps, "coords", scene_kps), dtype=np.float64)
    if model.shape != scene.shape or model.ndim != 2 or model.shape[1] != 3:
        raise InvalidShapeError("model and scene keypoints must both be (N, 3)")
    if len(model) < 3:
        raise InvalidShapeError("alignment needs at least 3 keypoints")

    model_mean = model.mean(axis=0)
    scene_mean = scene.mean(axis=0)
    mc = model - model_mean
    sc = scene - scene_mean
    spread = np.linalg.svd(mc, compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1e-300):
        raise DegenerateSystemError("model keypoints are collinear; rotation is undetermined")

    u, _, vt = np.linalg.svd(mc.T @ sc)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = scene_mean - rotation @ model_mean
    transform = RigidTransform(rotation, translation)
    residual = float(np.linalg.norm(transform.apply(model) - scene, axis=1).mean())
    return PoseEstimate(transform, residual)


# ------------------- Metrics -------------------

def add_metrics(model, t_est, t_gt, symmetric=False):
    """ADD, or ADD-S (nearest neighbor matching) when symmetric."""
    points = model.cloud.positions
    est = t_est.apply(points)
    gt = t_gt.apply(points)
    if not symmetric:
        return float(np.linalg.norm(est - gt, axis=1).mean())
    distances, _ = cKDTree(gt).query(est, k=1)
    return float(distances.mean())


def rotation_error_deg(rotation_est, rotation_gt):
    cos = (np.trace(rotation_est @ rotation_gt.T) - 1.0) / 2.0
    return float(np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0))))


def adds_auc(distances, diameter, max_frac=ACCURACY_FRACTION):
    """
    Area under accuracy(tau) for tau in [0, max_frac * diameter], normalized
    by the threshold range. Each distance d contributes max(0, T - d) / T.
    """
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    if distances.size == 0:
        raise InvalidShapeError("no distances to score")
    if not diameter > 0.0 or not max_frac > 0.0:
        raise InvalidShapeError("diameter and max_frac must be positive")
    threshold = max_frac * diameter
    return float(np.mean(np.maximum(0.0, threshold - np.maximum(distances, 0.0)) / threshold))


# ------------------- Experiments -------------------

@dataclass(frozen=True)
class TrialResult:
    noise_std: float
    method: str
    object_id: str
    trial: int
    diameter: float
    add: float = float("nan")
    rot_err_deg: float = float("nan")
    trans_err: float = float("nan")
    kp_err: float = float("nan")
    failure: str = ""

    @property
    def failed(self):
        return bool(self.failure)

    def csv_row(self):
        return [self.method, self.object_id, self.trial, repr(self.add), repr(self.rot_err_deg), repr(self.trans_err)]


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    scheme: VoteScheme
    noise_levels: tuple
    rows: tuple = ()
    summary: tuple = ()

    def rows_for(self, noise_std=None, method=None):
        return [
            row for row in self.rows
            if (noise_std is None or row.noise_std == noise_std) and (method is None or row.method == method)
        ]

    def failures(self, noise_std=None, method=None):
        return [row for row in self.rows_for(noise_std, method) if row.failed]

    def to_csv(self, noise_std):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows_for(noise_std):
            if not row.failed:
                writer.writerow(row.csv_row())
        return buffer.getvalue()

    def as_dict(self):
        return {
            "scheme": self.scheme.value,
            "noise_levels": list(self.noise_levels),
            "summary": [dict(entry) for entry in self.summary],
            "failures": [
                {"noise_std": r.noise_std, "method": r.method, "object": r.object_id, "trial": r.trial, "reason": r.failure}
                for r in self.rows if r.failed
            ],
        }


def _summarize(rows, noise_std, method):
    done = [r for r in rows if not r.failed]
    normalized = [r.add / r.diameter for r in done] + [np.inf] * (len(rows) - len(done))

    def mean(values):
        return float(np.mean(values)) if values else None

    return {
        "noise_std": noise_std,
        "method": method,
        "trials": len(rows),
        "failures": len(rows) - len(done),
        "mean_add": mean([r.add for r in done]),
        "accuracy": float(np.mean([d <= ACCURACY_FRACTION for d in normalized])),
        "auc": adds_auc(normalized, 1.0),
        "mean_rot_err_deg": mean([r.rot_err_deg for r in done]),
        "mean_trans_err": mean([r.trans_err for r in done]),
        "mean_kp_err": mean([r.kp_err for r in done]),
    }


def random_pose(rng, extent):
    rotation = Rotation.random(None, rng).as_matrix()
    return RigidTransform(rotation, rng.uniform(-extent, extent, 3))


def _voting_cloud(scene, keypoints, scheme):
    if scheme is not VoteScheme.VECTOR:
        return scene
    keep = voting_mask(scene, keypoints, scheme)
    return PointCloud(scene.positions[keep], scene.colors[keep])


def _keypoints_for(provider, model):
    if isinstance(provider, KeypointSet):
        return provider
    return provider(model)


def _run_trial(task):
    noise_index, noise_std, method, keypoints, object_index, model, trial, settings = task
    scheme = settings["scheme"]
    rng = np.random.default_rng([settings["seed"], trial, object_index])
    t_gt = random_pose(rng, settings["translation_extent"] * model.diameter)
    try:
        model_kps = denormalize_keypoints(keypoints, model).coords
        scene_kps = t_gt.apply(model_kps)
        scene = _voting_cloud(PointCloud(t_gt.apply(model.cloud.positions), model.cloud.colors), scene_kps, scheme)
        noise = VoteNoiseModel(
            noise_std,
            settings["outlier_rate"],
            settings["outlier_spread"],
            [settings["seed"], trial, object_index, noise_index],
        )
        votes = perturb_votes(compute_votes(scene, scene_kps, scheme), noise, scale=model.diameter)
        recovered = recover_keypoints(scene, votes)
        pose = horn_align(model_kps, recovered)
    except KeyoptError as exc:
        logger.warning("Trial %d of %s on %s failed: %s", trial, method, model.id, exc)
        return TrialResult(noise_std, method, model.id, trial, model.diameter, failure=str(exc))

    return TrialResult(
        noise_std,
        method,
        model.id,
        trial,
        model.diameter,
        add=add_metrics(model, pose.transform, t_gt, symmetric=model.symmetric),
        rot_err_deg=rotation_error_deg(pose.transform.rotation, t_gt.rotation),
        trans_err=float(np.linalg.norm(pose.transform.translation - t_gt.translation)),
        kp_err=float(np.linalg.norm(recovered - scene_kps, axis=1).mean()),
    )


def run_experiment(
    objects,
    methods,
    scheme=VoteScheme.RADIAL,
    noise_levels=(0.0,),
    trials=10,
    rng_seed=0,
    outlier_rate=0.0,
    outlier_spread=DEFAULT_OUTLIER_SPREAD,
    translation_extent=DEFAULT_TRANSLATION_EXTENT,
    workers=1,
):
    """
    Compare keypoint methods under vote noise.

    `methods` maps a name to either one normalized KeypointSet shared by every
    object, or a callable returning a normalized KeypointSet per object. Trial
    t on object o draws its pose and noise from (rng_seed, t, o), so every
    method sees the same poses and noise streams.
    """
    if not objects:
        raise InvalidConfigError("at least one object is required")
    if not isinstance(methods, Mapping) or not methods:
        raise InvalidConfigError("at least one keypoint method is required")
    if trials < 1:
        raise InvalidConfigError("trials must be at least 1")
    scheme = VoteScheme.parse(scheme)
    noise_levels = tuple(float(s) for s in noise_levels)
    settings = {
        "scheme": scheme,
        "seed": int(rng_seed),
        "outlier_rate": outlier_rate,
        "outlier_spread": outlier_spread,
        "translation_extent": translation_extent,
    }
    keypoints = {
        (method, object_index): _keypoints_for(provider, model)
        for method, provider in methods.items()
        for object_index, model in enumerate(objects)
    }
    tasks = [
        (noise_index, noise_std, method, keypoints[method, object_index], object_index, model, trial, settings)
        for noise_index, noise_std in enumerate(noise_levels)
        for method in methods
        for object_index, model in enumerate(objects)
        for trial in range(trials)
    ]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_trial, tasks))
    else:
        rows = [_run_trial(task) for task in tasks]

    summary = []
    for noise_std in noise_levels:
        for method in methods:
            group = [r for r in rows if r.noise_std == noise_std and r.method == method]
            summary.append(_summarize(group, noise_std, method))
            logger.info(
                "%s @ noise %.4f: accuracy %.3f, AUC %.3f, %d failed",
                method, noise_std, summary[-1]["accuracy"], summary[-1]["auc"], summary[-1]["failures"],
            )
    return ExperimentReport(scheme, noise_levels, tuple(rows), tuple(summary))


def run_keypoint_sweep(objects, method_factory, keypoint_counts, **kwargs):
    """run_experiment once per keypoint count; method_factory(n) builds the method mapping."""
    return {int(n): run_experiment(objects, method_factory(int(n)), **kwargs) for n in keypoint_counts}
