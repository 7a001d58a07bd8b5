"""
The keypoint objective: pairwise similarity of vote distributions plus an
exponential dispersion term, weighted by (alpha, beta), and its gradient with
respect to the keypoint coordinates.

The numpy path (combined_loss, loss_gradient) serves the direct optimizer;
combined_loss_torch is the same objective built from torch operations so the
graph encoder can backpropagate through it.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations

import numpy as np
import torch

from .distances import (
    DEFAULT_CRITIC_LR,
    DEFAULT_EPSILON,
    DEFAULT_LAMBDA,
    DivergenceKind,
    critic_distance,
    divergence,
    train_critic,
    wasserstein1_with_gradient,
)
from .exceptions import InvalidConfigError, UnsupportedGradientError
from .votes import (
    DEFAULT_BINS,
    VoteScheme,
    build_histogram,
    check_projections,
    compute_votes,
    joint_range,
    scalar_channels,
    voting_mask,
)

logger = logging.getLogger(__name__)

# A pair one diameter apart contributes 0.1.
DEFAULT_GAMMA = math.log(10.0)
DEFAULT_SWAP_EPOCH = 50
EARLY_WEIGHTS = (0.7, 0.3)
LATE_WEIGHTS = (0.3, 0.7)
DEFAULT_LOSS_CRITIC_STEPS = 100


class Similarity(str, Enum):
    EXACT_W1 = "exact_w1"
    CRITIC = "critic"
    KL = "kl"
    JS = "js"
    CE = "ce"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise InvalidConfigError(
                f"unknown similarity {value!r}; expected one of {', '.join(s.value for s in cls)}"
            )

    @property
    def has_gradient(self):
        return self in (Similarity.EXACT_W1, Similarity.CRITIC)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = EARLY_WEIGHTS[0]
    beta: float = EARLY_WEIGHTS[1]
    gamma: float = DEFAULT_GAMMA
    similarity: Similarity = Similarity.EXACT_W1
    scheme: VoteScheme = VoteScheme.RADIAL
    projections: tuple = None
    bins: int = DEFAULT_BINS
    epsilon: float = DEFAULT_EPSILON
    critic_steps: int = DEFAULT_LOSS_CRITIC_STEPS
    critic_lr: float = DEFAULT_CRITIC_LR
    critic_lambda: float = DEFAULT_LAMBDA
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1], got {value}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise InvalidConfigError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")
        if not self.gamma > 0.0:
            raise InvalidConfigError("gamma must be positive")
        if int(self.bins) < 1:
            raise InvalidConfigError("bins must be at least 1")
        if not self.epsilon > 0.0:
            raise InvalidConfigError("epsilon must be positive")
        object.__setattr__(self, "similarity", Similarity.parse(self.similarity))
        object.__setattr__(self, "scheme", VoteScheme.parse(self.scheme))
        if self.projections is not None:
            directions = check_projections(self.projections)
            object.__setattr__(self, "projections", tuple(tuple(float(x) for x in d) for d in directions))

    def with_weights(self, alpha, beta):
        return replace(self, alpha=alpha, beta=beta)

    @property
    def directions(self):
        return check_projections(self.projections)


@dataclass(frozen=True, eq=False)
class LossReport:
    total: float
    wass_pairs: np.ndarray
    dis_pairs: np.ndarray
    per_object: dict = field(default_factory=dict)
    alpha: float = EARLY_WEIGHTS[0]
    beta: float = EARLY_WEIGHTS[1]
    pairs: tuple = ()

    @property
    def similarity_sum(self):
        return float(np.sum(self.wass_pairs))

    @property
    def dispersion_sum(self):
        return float(np.sum(self.dis_pairs))

    def as_dict(self):
        return {
            "total": self.total,
            "alpha": self.alpha,
            "beta": self.beta,
            "pairs": [list(p) for p in self.pairs],
            "wass_pairs": [float(v) for v in self.wass_pairs],
            "dis_pairs": [float(v) for v in self.dis_pairs],
            "per_object": {k: float(v) for k, v in self.per_object.items()},
        }


def weight_schedule(epoch, swap_epoch=DEFAULT_SWAP_EPOCH):
    """(alpha, beta): similarity-heavy before swap_epoch, dispersion-heavy from it."""
    if epoch < 0:
        raise InvalidConfigError("epoch must be non-negative")
    return EARLY_WEIGHTS if epoch < swap_epoch else LATE_WEIGHTS


def _coords(keypoints):
    return np.asarray(getattr(keypoints, "coords", keypoints), dtype=np.float64)


# ------------------- Dispersion -------------------

def dispersion_loss(keypoints, gamma=DEFAULT_GAMMA):
    """(sum, per-pair values) of exp(-gamma * ||k_i - k_j||) over pairs i < j."""
    if not gamma > 0.0:
        raise InvalidConfigError("gamma must be positive")
    coords = _coords(keypoints)
    pairs = list(combinations(range(len(coords)), 2))
    values = np.array([math.exp(-gamma * np.linalg.norm(coords[i] - coords[j])) for i, j in pairs])
    return float(values.sum()), values


def dispersion_gradient(keypoints, gamma=DEFAULT_GAMMA):
    coords = _coords(keypoints)
    grad = np.zeros_like(coords)
    for i, j in combinations(range(len(coords)), 2):
        diff = coords[i] - coords[j]
        dist = float(np.linalg.norm(diff))
        if dist == 0.0:
            continue
        g = -gamma * math.exp(-gamma * dist) * diff / dist
        grad[i] += g
        grad[j] -= g
    return grad


# ------------------- Similarity -------------------

def _critic_seed(base_seed, *key):
    return int(np.random.SeedSequence([int(base_seed), *key]).generate_state(1)[0])


def _pair_similarity(a, b, config, seed, with_gradient):
    """Similarity of two 1-D sample sets and, on request, its gradient per sample."""
    kind = config.similarity
    if kind is Similarity.EXACT_W1:
        value, grad_a, grad_b = wasserstein1_with_gradient(a, b)
        return value, grad_a, grad_b

    if kind is Similarity.CRITIC:
        critic = train_critic(a, b, config.critic_steps, config.critic_lr, config.critic_lambda, seed)
        value = critic_distance(a, b, critic)
        if not with_gradient:
            return value, None, None
        return value, critic.input_gradient(a) / a.size, -critic.input_gradient(b) / b.size

    if with_gradient:
        raise UnsupportedGradientError(f"{kind.value} similarity has no analytic keypoint gradient")
    value_range = joint_range(a, b)
    hist_a = build_histogram(a, config.bins, value_range)
    hist_b = build_histogram(b, config.bins, value_range)
    return divergence(DivergenceKind(kind.value), hist_a, hist_b, config.epsilon), None, None


def _vote_jacobian(coords, positions, config):
    """d channel[j, c, s] / d k_j, shape (N_K, C, N_S, 3)."""
    diff = coords[:, None, :] - positions[None, :, :]
    n_k, n_s = diff.shape[:2]
    if config.scheme is VoteScheme.OFFSET:
        directions = config.directions
        return np.broadcast_to(directions[None, :, None, :], (n_k, len(directions), n_s, 3))

    dist = np.linalg.norm(diff, axis=2)
    safe = np.where(dist > 0.0, dist, 1.0)
    unit = np.where(dist[:, :, None] > 0.0, diff / safe[:, :, None], 0.0)
    if config.scheme is VoteScheme.RADIAL:
        return unit[:, None, :, :]

    directions = config.directions
    along = np.einsum("jsd,cd->jcs", unit, directions)
    return (directions[None, :, None, :] - along[..., None] * unit[:, None, :, :]) / safe[:, None, :, None]


def object_similarity(coords, positions, config, object_index=0, with_gradient=False):
    """
    Pairwise similarity of one object's vote channels, averaged over channels.

    Returns (per-pair values, keypoint gradient or None). Everything is in the
    frame the positions are given in. Under the vector scheme, points lying on
    a keypoint are left out for every keypoint.
    """
    coords = _coords(coords)
    positions = np.asarray(positions, dtype=np.float64)
    positions = positions[voting_mask(positions, coords, config.scheme)]
    votes = compute_votes(positions, coords, config.scheme)
    channels = scalar_channels(votes, config.directions)
    n_k, n_c, n_s = channels.shape
    pairs = list(combinations(range(n_k), 2))
    values = np.zeros(len(pairs))
    sample_grad = np.zeros_like(channels) if with_gradient else None

    for p, (i, j) in enumerate(pairs):
        for c in range(n_c):
            seed = _critic_seed(config.rng_seed, object_index, i, j, c)
            value, grad_a, grad_b = _pair_similarity(channels[i, c], channels[j, c], config, seed, with_gradient)
            values[p] += value / n_c
            if with_gradient:
                sample_grad[i, c] += grad_a / n_c
                sample_grad[j, c] += grad_b / n_c

    if not with_gradient:
        return values, None
    jacobian = _vote_jacobian(coords, positions, config)
    return values, np.einsum("jcs,jcsd->jd", sample_grad, jacobian)


def _normalized_positions(models):
    return [(model.id, model.normalize_points(model.cloud.positions)) for model in models]


def _evaluate(keypoints, objects, config, with_gradient):
    if not objects:
        raise InvalidConfigError("at least one object is required")
    coords = _coords(keypoints)
    per_object = {}
    wass = None
    grad = np.zeros_like(coords)
    for index, (object_id, positions) in enumerate(_normalized_positions(objects)):
        values, object_grad = object_similarity(coords, positions, config, index, with_gradient)
        per_object[object_id] = float(values.sum())
        wass = values if wass is None else wass + values
        if with_gradient:
            grad += object_grad
    n_objects = len(objects)
    wass = wass / n_objects

    dis_total, dis_pairs = dispersion_loss(coords, config.gamma)
    report = LossReport(
        total=config.alpha * float(wass.sum()) + config.beta * dis_total,
        wass_pairs=wass,
        dis_pairs=dis_pairs,
        per_object=per_object,
        alpha=config.alpha,
        beta=config.beta,
        pairs=tuple(combinations(range(len(coords)), 2)),
    )
    if not with_gradient:
        return report, None
    grad = config.alpha * grad / n_objects + config.beta * dispersion_gradient(coords, config.gamma)
    return report, grad


def combined_loss(keypoints, objects, config):
    """alpha * (mean over objects of the pairwise similarity sum) + beta * dispersion sum."""
    return _evaluate(keypoints, objects, config, with_gradient=False)[0]


def loss_gradient(keypoints, objects, config):
    """Analytic d(total)/dk, shape (N_K, 3). Exact-W1 and critic similarities only."""
    if not config.similarity.has_gradient:
        raise UnsupportedGradientError(f"{config.similarity.value} similarity has no analytic keypoint gradient")
    return _evaluate(keypoints, objects, config, with_gradient=True)[1]


def loss_and_gradient(keypoints, objects, config):
    if not config.similarity.has_gradient:
        raise UnsupportedGradientError(f"{config.similarity.value} similarity has no analytic keypoint gradient")
    return _evaluate(keypoints, objects, config, with_gradient=True)


def pairwise_w1_sum(keypoints, objects, scheme=VoteScheme.RADIAL, projections=None):
    """Mean over objects of the pairwise exact-W1 sum; the quantity searches rank by."""
    config = LossConfig(alpha=1.0, beta=0.0, scheme=scheme, projections=projections)
    return combined_loss(keypoints, objects, config).similarity_sum


# ------------------- Torch objective -------------------

def _torch_channels(coords, positions, config):
    if config.scheme is VoteScheme.VECTOR:
        keep = voting_mask(positions.detach().numpy(), coords.detach().numpy(), config.scheme)
        positions = positions[torch.from_numpy(keep)]
    diff = coords[:, None, :] - positions[None, :, :]
    if config.scheme is VoteScheme.RADIAL:
        return torch.linalg.vector_norm(diff, dim=2)[:, None, :]
    if config.scheme is VoteScheme.VECTOR:
        diff = diff / torch.linalg.vector_norm(diff, dim=2, keepdim=True)
    directions = torch.as_tensor(config.directions)
    return torch.einsum("jsd,cd->jcs", diff, directions)


def soft_histogram(samples, lo, hi, bins):
    """Gaussian-kernel histogram mass over [lo, hi], differentiable in the samples."""
    width = (hi - lo) / bins
    centers = lo + width * (torch.arange(bins, dtype=samples.dtype) + 0.5)
    weights = torch.exp(-0.5 * ((samples[:, None] - centers[None, :]) / width) ** 2)
    weights = weights / weights.sum(dim=1, keepdim=True).clamp_min(1e-300)
    return weights.mean(dim=0)


def _torch_divergence(kind, p, q, epsilon):
    p = (p + epsilon) / (p + epsilon).sum()
    q = (q + epsilon) / (q + epsilon).sum()
    if kind is Similarity.KL:
        return (p * torch.log(p / q)).sum()
    if kind is Similarity.JS:
        m = (p + q) / 2.0
        return 0.5 * (p * torch.log(p / m)).sum() + 0.5 * (q * torch.log(q / m)).sum()
    return -(p * torch.log(q)).sum()


def _torch_pair_similarity(a, b, config, seed):
    kind = config.similarity
    if kind is Similarity.EXACT_W1:
        sorted_a = torch.sort(a, stable=True).values
        sorted_b = torch.sort(b, stable=True).values
        return (sorted_a - sorted_b).abs().mean()

    if kind is Similarity.CRITIC:
        critic = train_critic(
            a.detach().numpy(), b.detach().numpy(), config.critic_steps, config.critic_lr, config.critic_lambda, seed
        )
        critic.requires_grad_(False)
        return critic(a).mean() - critic(b).mean()

    lo, hi = joint_range(a.detach().numpy(), b.detach().numpy())
    p = soft_histogram(a, lo, hi, config.bins)
    q = soft_histogram(b, lo, hi, config.bins)
    return _torch_divergence(kind, p, q, config.epsilon)


def combined_loss_torch(coords, positions_list, config):
    """
    Scalar tensor of the combined objective for keypoints `coords` (N_K, 3)
    against normalized object positions, one tensor per object.
    """
    n_k = coords.shape[0]
    pairs = list(combinations(range(n_k), 2))
    similarity = coords.new_zeros(())
    for index, positions in enumerate(positions_list):
        channels = _torch_channels(coords, positions, config)
        n_c = channels.shape[1]
        for i, j in pairs:
            for c in range(n_c):
                seed = _critic_seed(config.rng_seed, index, i, j, c)
                similarity = similarity + _torch_pair_similarity(channels[i, c], channels[j, c], config, seed) / n_c
    similarity = similarity / len(positions_list)

    dispersion = coords.new_zeros(())
    for i, j in pairs:
        dispersion = dispersion + torch.exp(-config.gamma * torch.linalg.vector_norm(coords[i] - coords[j]))
    return config.alpha * similarity + config.beta * dispersion
