"""
Per-point regression quantities ("votes") toward each keypoint, their
scalarization into 1-D channels, and histogram binning.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import CoincidentVoteError, InvalidProjectionError, InvalidShapeError

logger = logging.getLogger(__name__)

AXIS_PROJECTIONS = np.eye(3)
DEFAULT_BINS = 256
_UNIT_TOLERANCE = 1e-9


class VoteScheme(str, Enum):
    RADIAL = "radial"
    OFFSET = "offset"
    VECTOR = "vector"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidShapeError(
                f"unknown vote scheme {value!r}; expected one of {', '.join(s.value for s in cls)}"
            )

    @property
    def is_scalar(self):
        return self is VoteScheme.RADIAL


@dataclass(frozen=True, eq=False)
class VoteField:
    """values[j, i] is the vote of surface point i for keypoint j."""

    scheme: VoteScheme
    values: np.ndarray

    def __post_init__(self):
        scheme = VoteScheme.parse(self.scheme)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if scheme.is_scalar:
            if values.ndim != 2:
                raise InvalidShapeError("radial votes must have shape (N_K, N_S)")
            if np.any(values < 0.0):
                raise InvalidShapeError("radial votes must be non-negative")
        else:
            if values.ndim != 3 or values.shape[2] != 3:
                raise InvalidShapeError(f"{scheme.value} votes must have shape (N_K, N_S, 3)")
            if scheme is VoteScheme.VECTOR:
                norms = np.linalg.norm(values, axis=2)
                if np.any(np.abs(norms - 1.0) > _UNIT_TOLERANCE):
                    raise InvalidShapeError("vector votes must be unit length")
        values.setflags(write=False)
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "values", values)

    @property
    def n_keypoints(self):
        return self.values.shape[0]

    @property
    def n_points(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_edges: np.ndarray
    mass: np.ndarray
    raw_counts: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64, copy=True)
        mass = np.array(self.mass, dtype=np.float64, copy=True)
        counts = np.array(self.raw_counts, dtype=np.int64, copy=True)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0.0):
            raise InvalidShapeError("bin edges must be strictly increasing")
        if mass.shape != (len(edges) - 1,) or counts.shape != mass.shape:
            raise InvalidShapeError("mass and counts need one entry per bin")
        if np.any(mass < 0.0) or abs(mass.sum() - 1.0) > 1e-12:
            raise InvalidShapeError("histogram mass must be non-negative and sum to 1")
        for arr in (edges, mass, counts):
            arr.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "raw_counts", counts)

    @property
    def bins(self):
        return len(self.mass)

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    @property
    def centers(self):
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0

    def mean(self):
        return float(np.dot(self.mass, self.centers))


def _positions(cloud):
    return np.asarray(getattr(cloud, "positions", cloud), dtype=np.float64)


def _coords(keypoints):
    return np.asarray(getattr(keypoints, "coords", keypoints), dtype=np.float64)


def compute_votes(cloud, keypoints, scheme):
    """
    Radial: ||k - p||. Offset: k - p. Vector: (k - p) / ||k - p||.
    Cloud and keypoints must already be in the same frame.
    """
    scheme = VoteScheme.parse(scheme)
    diff = _coords(keypoints)[:, None, :] - _positions(cloud)[None, :, :]
    if scheme is VoteScheme.OFFSET:
        return VoteField(scheme, diff)

    dist = np.linalg.norm(diff, axis=2)
    if scheme is VoteScheme.RADIAL:
        return VoteField(scheme, dist)

    if np.any(dist <= 0.0):
        keypoint_index, point_index = map(int, np.argwhere(dist <= 0.0)[0])
        raise CoincidentVoteError(point_index, keypoint_index)
    return VoteField(scheme, diff / dist[:, :, None])


def voting_mask(cloud, keypoints, scheme):
    """
    Boolean mask of the surface points that cast a vote. Direction votes are
    undefined at a keypoint, so under the vector scheme a point lying on any
    keypoint abstains; radial and offset votes keep every point.
    """
    positions = _positions(cloud)
    if VoteScheme.parse(scheme) is not VoteScheme.VECTOR:
        return np.ones(len(positions), dtype=bool)
    dist = np.linalg.norm(positions[None, :, :] - _coords(keypoints)[:, None, :], axis=2)
    return np.all(dist > 0.0, axis=0)


def check_projections(projections):
    projections = np.asarray(AXIS_PROJECTIONS if projections is None else projections, dtype=np.float64)
    if projections.ndim == 1:
        projections = projections[None, :]
    if projections.size == 0 or projections.ndim != 2 or projections.shape[1] != 3:
        raise InvalidProjectionError("projections must be a non-empty list of 3-vectors")
    norms = np.linalg.norm(projections, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOLERANCE):
        raise InvalidProjectionError("projection directions must be unit vectors")
    return projections


def scalar_channels(field, projections=None):
    """
    1-D sample sets, shape (N_K, C, N_S). Radial votes give one identity
    channel; offset/direction votes give one channel per projection, v . d.
    """
    if field.scheme.is_scalar:
        return np.array(field.values)[:, None, :]
    directions = check_projections(projections)
    return np.einsum("jsd,cd->jcs", field.values, directions)


def joint_range(*sample_sets):
    lo = min(float(np.min(s)) for s in sample_sets)
    hi = max(float(np.max(s)) for s in sample_sets)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def build_histogram(samples, bins=DEFAULT_BINS, value_range=None):
    """
    Half-open bins [e_b, e_b+1) with the last bin closed; samples outside
    the range are clamped into the end bins.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise InvalidShapeError("empty sample set")
    if int(bins) < 1:
        raise InvalidShapeError("bins must be at least 1")
    lo, hi = value_range if value_range is not None else joint_range(samples)
    if not lo < hi:
        raise InvalidShapeError("histogram range needs lo < hi")
    counts, edges = np.histogram(np.clip(samples, lo, hi), bins=int(bins), range=(lo, hi))
    return Histogram(edges, counts / counts.sum(), counts)


def vote_histograms(field, bins=DEFAULT_BINS, projections=None):
    """
    hists[j][c]: histogram of keypoint j's channel c, every keypoint binned
    over the joint range of that channel so the histograms are comparable.
    """
    channels = scalar_channels(field, projections)
    hists = [[None] * channels.shape[1] for _ in range(channels.shape[0])]
    for c in range(channels.shape[1]):
        value_range = joint_range(*channels[:, c, :])
        for j in range(channels.shape[0]):
            hists[j][c] = build_histogram(channels[j, c], bins, value_range)
    return hists


def vote_mean_spread(field, projections=None):
    """Variance across keypoints of the mean scalar vote, averaged over channels."""
    means = scalar_channels(field, projections).mean(axis=2)
    return float(means.var(axis=0).mean())
