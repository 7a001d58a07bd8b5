"""
Toy-scale graph encoder that emits N_K keypoints from a point cloud.

Two edge-convolution layers over k-NN graphs (the second graph recomputed in
feature space), layer normalization after each, a global max-pool and a
linear head squashed into [-0.75, 0.75]. Trained with SGD on the combined
objective; gradients come from torch autograd.
"""

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.spatial.distance import cdist
from torch import nn

from .exceptions import CheckpointError, InvalidConfigError, InvalidShapeError, NonFiniteLossError
from .geometry import ObjectModel, normalize_object
from .loss import DEFAULT_SWAP_EPOCH, LossConfig, combined_loss_torch, weight_schedule
from .sampling import KeypointSet, fps_indices

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_HIDDEN = 32
DEFAULT_K = 8
LEAKY_SLOPE = 0.01
LAYER_NORM_EPS = 1e-12
OUTPUT_SCALE = 0.75


@dataclass(frozen=True, eq=False)
class KnnGraph:
    """neighbors[i] lists node i's k nearest other nodes, nearest first."""

    neighbors: np.ndarray

    @property
    def k(self):
        return self.neighbors.shape[1]

    def __len__(self):
        return len(self.neighbors)


def knn_indices(features, k):
    """Brute-force k-NN excluding self; equal distances go to the lower index."""
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if not 1 <= k < n:
        raise InvalidShapeError(f"k must lie in 1..{n - 1} for {n} nodes, got {k}")
    dist = cdist(features, features)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def build_knn_graph(cloud, k):
    positions = getattr(cloud, "positions", cloud)
    return KnnGraph(knn_indices(positions, k))


class GraphEncoder(nn.Module):
    def __init__(self, n_k, in_features=3, hidden=DEFAULT_HIDDEN, k=DEFAULT_K):
        super().__init__()
        if n_k < 1 or hidden < 1 or k < 1:
            raise InvalidConfigError("n_k, hidden and k must be positive")
        self.n_k = n_k
        self.in_features = in_features
        self.hidden = hidden
        self.k = k
        self.conv1 = nn.Linear(2 * in_features, hidden)
        self.norm1 = nn.LayerNorm(hidden, eps=LAYER_NORM_EPS)
        self.conv2 = nn.Linear(2 * hidden, hidden)
        self.norm2 = nn.LayerNorm(hidden, eps=LAYER_NORM_EPS)
        self.head = nn.Linear(hidden, 3 * n_k)
        self.double()

    @property
    def architecture(self):
        return {"n_k": self.n_k, "in_features": self.in_features, "hidden": self.hidden, "k": self.k}

    def edge_conv(self, x, neighbors, linear, norm):
        # Ascending neighbor order so max ties resolve to the lowest index.
        index = torch.as_tensor(np.sort(neighbors, axis=1))
        x_j = x[index]
        x_i = x[:, None, :].expand_as(x_j)
        h = F.leaky_relu(linear(torch.cat([x_i, x_j - x_i], dim=2)), LEAKY_SLOPE)
        return norm(h.max(dim=1).values)

    def forward(self, features):
        k = min(self.k, features.shape[0] - 1)
        h = self.edge_conv(features, knn_indices(features.detach().numpy(), k), self.conv1, self.norm1)
        h = self.edge_conv(h, knn_indices(h.detach().numpy(), k), self.conv2, self.norm2)
        pooled = h.max(dim=0).values
        return (torch.tanh(self.head(pooled)) * OUTPUT_SCALE).reshape(self.n_k, 3)


def make_encoder(n_k, in_features=3, hidden=DEFAULT_HIDDEN, k=DEFAULT_K, rng_seed=0):
    with torch.random.fork_rng():
        torch.manual_seed(rng_seed)
        return GraphEncoder(n_k, in_features, hidden, k)


def _features(cloud, use_color):
    if isinstance(cloud, ObjectModel):
        cloud = normalize_object(cloud).cloud
    return torch.from_numpy(cloud.features(use_color))


def encoder_forward(encoder, cloud, use_color=False):
    """Keypoints for one cloud (normalized frame); an ObjectModel is normalized first."""
    features = _features(cloud, use_color)
    if features.shape[1] != encoder.in_features:
        raise InvalidShapeError(
            f"encoder expects {encoder.in_features} input features, cloud gives {features.shape[1]}"
        )
    with torch.no_grad():
        coords = encoder(features)
    return KeypointSet(coords.numpy())


# ------------------- Training -------------------

@dataclass(frozen=True)
class EncoderConfig:
    n_keypoints: int = 3
    epochs: int = 100
    lr0: float = 1e-3
    decay: float = 0.1
    decay_every: int = 50
    hidden: int = DEFAULT_HIDDEN
    k: int = DEFAULT_K
    use_color: bool = False
    input_points: int = None
    schedule: bool = True
    swap_epoch: int = DEFAULT_SWAP_EPOCH
    loss: LossConfig = field(default_factory=LossConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be non-negative")
        if not self.lr0 > 0.0 or not 0.0 < self.decay <= 1.0 or self.decay_every < 1:
            raise InvalidConfigError("learning rate needs lr0 > 0, decay in (0, 1] and decay_every >= 1")
        if self.input_points is not None and self.input_points < 2:
            raise InvalidConfigError("input_points must be at least 2")


def learning_rate(epoch, lr0=1e-3, decay=0.1, decay_every=50):
    """Step decay, computed in decimal so 1e-3 -> 1e-4 -> 1e-5 land exactly."""
    return float(Decimal(repr(lr0)) * Decimal(repr(decay)) ** (epoch // decay_every))


def _training_inputs(objects, config):
    inputs = []
    for model in objects:
        normalized = normalize_object(model)
        positions = normalized.cloud.positions
        features = normalized.cloud.features(config.use_color)
        if config.input_points is not None:
            features = features[fps_indices(positions, min(config.input_points, len(positions)))]
        inputs.append((torch.from_numpy(np.array(features)), torch.from_numpy(np.array(positions))))
    return inputs


def train_encoder(objects, config=None):
    """
    One SGD step per epoch on the combined loss averaged over objects,
    gradients accumulated in object order. Returns (encoder, per-epoch loss).
    """
    config = config or EncoderConfig()
    if not objects:
        raise InvalidConfigError("at least one object is required")
    inputs = _training_inputs(objects, config)
    encoder = make_encoder(
        config.n_keypoints, 6 if config.use_color else 3, config.hidden, config.k, config.rng_seed
    )
    optimizer = torch.optim.SGD(encoder.parameters(), lr=config.lr0)
    trace = []

    for epoch in range(config.epochs):
        lr = learning_rate(epoch, config.lr0, config.decay, config.decay_every)
        for group in optimizer.param_groups:
            group["lr"] = lr
        if config.schedule:
            epoch_loss = config.loss.with_weights(*weight_schedule(epoch, config.swap_epoch))
        else:
            epoch_loss = config.loss

        optimizer.zero_grad()
        total = 0.0
        for features, positions in inputs:
            value = combined_loss_torch(encoder(features), [positions], epoch_loss) / len(inputs)
            if not torch.isfinite(value):
                raise NonFiniteLossError(epoch, where="epoch")
            value.backward()
            total += float(value.detach())
        optimizer.step()
        trace.append(total)
        logger.debug("epoch %d lr %g loss %.6f", epoch, lr, total)

    if trace:
        logger.info("Encoder trained for %d epochs: loss %.6f -> %.6f", config.epochs, trace[0], trace[-1])
    return encoder, trace


# ------------------- Checkpoints -------------------

def save_checkpoint(path, encoder, metadata=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "architecture": encoder.architecture,
        "parameters": {
            name: {"shape": list(param.shape), "values": param.detach().reshape(-1).tolist()}
            for name, param in encoder.state_dict().items()
        },
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path):
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    encoder = GraphEncoder(**payload["architecture"])
    state = {
        name: torch.tensor(entry["values"], dtype=torch.float64).reshape(entry["shape"])
        for name, entry in payload["parameters"].items()
    }
    encoder.load_state_dict(state)
    for param in encoder.parameters():
        if not bool(torch.isfinite(param).all()):
            raise CheckpointError("checkpoint contains non-finite parameters")
    return encoder
