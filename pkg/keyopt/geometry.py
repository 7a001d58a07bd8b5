"""
Point clouds, rigid transforms, synthetic objects and model statistics.

Everything here is a pure function over immutable inputs: arrays held by the
dataclasses are copied on construction and flagged read-only.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist

from .exceptions import (
    CloudReadError,
    EmptyCloudError,
    InvalidShapeError,
    InvalidTransformError,
    MalformedHeaderError,
    ZeroDiameterError,
)

logger = logging.getLogger(__name__)

DEFAULT_COLOR = (0.5, 0.5, 0.5)

# Above this many points the diameter is taken over convex hull vertices.
EXACT_DIAMETER_LIMIT = 5000
_DIAMETER_BLOCK = 1024

SHAPE_KINDS = ("box", "ellipsoid", "l-bracket")
L_BRACKET_THICKNESS = 0.2


def _readonly(values, shape_tail=None, name="array"):
    arr = np.array(values, dtype=np.float64, copy=True)
    if shape_tail is not None:
        if arr.size == 0:
            arr = arr.reshape((0,) + shape_tail)
        if arr.shape[1:] != shape_tail:
            raise InvalidShapeError(f"{name} must have shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidShapeError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered surface points with per-point color in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        positions = _readonly(self.positions, (3,), "positions")
        if self.colors is None:
            colors = np.tile(np.asarray(DEFAULT_COLOR), (len(positions), 1))
        else:
            colors = self.colors
        colors = _readonly(colors, (3,), "colors")
        if colors.shape != positions.shape:
            raise InvalidShapeError("colors must match positions one-to-one")
        if np.any(colors < 0.0) or np.any(colors > 1.0):
            raise InvalidShapeError("color components must lie in [0, 1]")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.positions)

    def features(self, use_color=False):
        """Per-point node features: xyz, or xyz+rgb."""
        if use_color:
            return np.hstack([self.positions, self.colors])
        return np.array(self.positions)


@dataclass(frozen=True, eq=False)
class Aabb:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = _readonly(self.min_corner, name="min_corner").reshape(3)
        hi = _readonly(self.max_corner, name="max_corner").reshape(3)
        if np.any(lo > hi):
            raise InvalidShapeError("min_corner must not exceed max_corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @classmethod
    def of(cls, positions):
        return cls(positions.min(axis=0), positions.max(axis=0))

    @property
    def extents(self):
        return self.max_corner - self.min_corner

    def corners(self):
        """
        The 8 corners; index bit 0 selects x-max, bit 1 y-max, bit 2 z-max.
        """
        return corner_grid(self.min_corner, self.max_corner)

    def scaled(self, factor):
        """Box scaled about its own center."""
        center = (self.min_corner + self.max_corner) / 2.0
        half = self.extents / 2.0 * factor
        return Aabb(center - half, center + half)


def corner_grid(lo, hi):
    bits = np.arange(8)[:, None] >> np.arange(3)[None, :] & 1
    return np.where(bits == 1, np.asarray(hi, dtype=np.float64), np.asarray(lo, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """
    A surface cloud plus the metadata that maps it into the normalized
    object frame: p_normalized = (p - norm_offset) * norm_scale.
    """

    id: str
    cloud: PointCloud
    centroid: np.ndarray
    diameter: float
    norm_scale: float
    norm_offset: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        if not self.diameter > 0.0:
            raise ZeroDiameterError(f"object {self.id!r}: zero diameter")
        centroid = _readonly(self.centroid, name="centroid").reshape(3)
        offset = _readonly(self.norm_offset, name="norm_offset").reshape(3)
        if abs(self.norm_scale * self.diameter - 1.0) > 1e-12:
            raise InvalidShapeError("norm_scale must equal 1 / diameter")
        if len(self.cloud) and np.max(np.abs(self.cloud.positions.mean(axis=0) - centroid)) > 1e-9:
            raise InvalidShapeError("centroid must equal the mean of the cloud positions")
        object.__setattr__(self, "centroid", centroid)
        object.__setattr__(self, "norm_offset", offset)
        object.__setattr__(self, "diameter", float(self.diameter))
        object.__setattr__(self, "norm_scale", float(self.norm_scale))

    @classmethod
    def from_cloud(cls, object_id, cloud, symmetric=False):
        _, centroid, diameter = object_stats(cloud)
        if diameter <= 0.0:
            raise ZeroDiameterError(f"object {object_id!r}: zero diameter")
        return cls(
            id=str(object_id),
            cloud=cloud,
            centroid=centroid,
            diameter=diameter,
            norm_scale=1.0 / diameter,
            norm_offset=centroid,
            symmetric=symmetric,
        )

    @property
    def aabb(self):
        return Aabb.of(self.cloud.positions)

    def normalize_points(self, points):
        return (np.asarray(points, dtype=np.float64) - self.norm_offset) * self.norm_scale


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64, copy=True)
        translation = np.array(self.translation, dtype=np.float64, copy=True).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InvalidTransformError("rotation must be 3x3 and translation a 3-vector")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidTransformError("transform contains non-finite values")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 1e-9:
            raise InvalidTransformError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise InvalidTransformError("rotation determinant is not +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other):
        """self after other."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


# ------------------- File formats -------------------

def load_point_cloud(path, fmt=None):
    """
    Read an ascii PLY ("element vertex N", properties x y z [red green blue])
    or the "v" lines of an OBJ file. Points come back in file order.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("ply", "obj"):
        raise MalformedHeaderError(f"unsupported point cloud format {fmt!r}")

    try:
        with path.open("r", encoding="latin-1") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CloudReadError(f"cannot read {path}: {exc}") from exc

    if fmt == "ply":
        cloud = _parse_ply(lines, path)
    else:
        cloud = _parse_obj(lines, path)
    logger.debug("Loaded %d points from %s", len(cloud), path)
    return cloud


def _parse_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise MalformedHeaderError(f"{path}: missing 'ply' magic line")

    elements = []
    ascii_format = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        head = tokens[0]
        if head == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise MalformedHeaderError(f"{path}: only ascii PLY is supported")
            ascii_format = True
        elif head == "element":
            if len(tokens) != 3:
                raise MalformedHeaderError(f"{path}: bad element line {line!r}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise MalformedHeaderError(f"{path}: bad element count {tokens[2]!r}")
            elements.append({"name": tokens[1], "count": count, "props": []})
        elif head == "property":
            if not elements or len(tokens) < 3:
                raise MalformedHeaderError(f"{path}: bad property line {line!r}")
            kind = "list" if tokens[1] == "list" else tokens[1]
            elements[-1]["props"].append((kind, tokens[-1]))
        elif head == "end_header":
            body_start = lineno + 1
            break
        else:
            raise MalformedHeaderError(f"{path}: unexpected header line {line!r}")

    if body_start is None:
        raise MalformedHeaderError(f"{path}: missing end_header")
    if not ascii_format:
        raise MalformedHeaderError(f"{path}: missing format line")

    skip = 0
    vertex = None
    for element in elements:
        if element["name"] == "vertex":
            vertex = element
            break
        skip += element["count"]
    if vertex is None:
        raise MalformedHeaderError(f"{path}: no vertex element")

    names = [name for _, name in vertex["props"]]
    if any(kind == "list" for kind, _ in vertex["props"]):
        raise MalformedHeaderError(f"{path}: list properties on vertices are not supported")
    if not {"x", "y", "z"} <= set(names):
        raise MalformedHeaderError(f"{path}: vertex element lacks x/y/z properties")
    if vertex["count"] == 0:
        raise EmptyCloudError()

    body = [ln for ln in lines[body_start:] if ln.strip()]
    rows = body[skip:skip + vertex["count"]]
    if len(rows) < vertex["count"]:
        raise MalformedHeaderError(f"{path}: file ends before all {vertex['count']} vertices are read")

    try:
        values = np.array([row.split()[:len(names)] for row in rows], dtype=np.float64)
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-numeric or short vertex row")
    if values.ndim != 2 or values.shape[1] != len(names):
        raise MalformedHeaderError(f"{path}: vertex rows do not match the declared properties")

    positions = values[:, [names.index(axis) for axis in ("x", "y", "z")]]
    colors = None
    if {"red", "green", "blue"} <= set(names):
        idx = [names.index(channel) for channel in ("red", "green", "blue")]
        colors = values[:, idx]
        kinds = {vertex["props"][i][0] for i in idx}
        if kinds & {"uchar", "uint8", "char", "int8", "ushort", "uint16"}:
            colors = colors / 255.0
    return PointCloud(positions, colors)


def _parse_obj(lines, path):
    positions = []
    colors = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens or tokens[0] != "v":
            continue
        try:
            values = [float(tok) for tok in tokens[1:]]
        except ValueError:
            raise MalformedHeaderError(f"{path}:{lineno}: non-numeric vertex {line!r}")
        if len(values) < 3:
            raise MalformedHeaderError(f"{path}:{lineno}: vertex needs three coordinates")
        positions.append(values[:3])
        colors.append(values[3:6] if len(values) >= 6 else list(DEFAULT_COLOR))
    if not positions:
        raise EmptyCloudError()
    return PointCloud(np.array(positions), np.array(colors))


def save_point_cloud(path, cloud):
    """Write an ascii PLY that load_point_cloud reads back (colors as uchar)."""
    path = Path(path)
    rgb = np.rint(cloud.colors * 255.0).astype(int)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    rows = [
        f"{x!r} {y!r} {z!r} {r} {g} {b}"
        for (x, y, z), (r, g, b) in zip(cloud.positions.tolist(), rgb.tolist())
    ]
    path.write_text("\n".join(header + rows) + "\n", encoding="ascii")
    return path


# ------------------- Synthetic objects -------------------

def make_synthetic_object(kind, extents, n_points, rng_seed=0, object_id=None, symmetric=False):
    """
    Sample n_points on the surface of a box (full side lengths), an
    ellipsoid (semi-axes) or an L-bracket prism, uniformly by area.

    Box and L-bracket clouds start with the polyhedron vertices, so their
    bounding box and diameter are exact.
    """
    kind = str(kind).lower().replace("_", "-")
    if kind == "lbracket":
        kind = "l-bracket"
    sampler = _SHAPE_SAMPLERS.get(kind)
    if sampler is None:
        raise InvalidShapeError(f"unknown shape kind {kind!r}; expected one of {', '.join(SHAPE_KINDS)}")

    ext = np.asarray(extents, dtype=np.float64).reshape(-1)
    if ext.shape != (3,) or not np.all(np.isfinite(ext)) or np.any(ext <= 0.0):
        raise InvalidShapeError("extents must be three positive reals")
    if int(n_points) < 4:
        raise InvalidShapeError("n_points must be at least 4")

    rng = np.random.default_rng(rng_seed)
    positions = sampler(ext, int(n_points), rng)
    return ObjectModel.from_cloud(
        object_id or f"{kind}-{rng_seed}",
        PointCloud(positions),
        symmetric=symmetric,
    )


def _sample_parallelograms(parts, n, rng):
    """parts: list of (origin, edge1, edge2); uniform by area over their union."""
    origins = np.array([p[0] for p in parts], dtype=np.float64)
    e1 = np.array([p[1] for p in parts], dtype=np.float64)
    e2 = np.array([p[2] for p in parts], dtype=np.float64)
    areas = np.linalg.norm(np.cross(e1, e2), axis=1)
    choice = rng.choice(len(parts), size=n, p=areas / areas.sum())
    st = rng.random((n, 2))
    return origins[choice] + st[:, :1] * e1[choice] + st[:, 1:] * e2[choice]


def _sample_box(ext, n, rng):
    half = ext / 2.0
    parts = []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        e1 = np.zeros(3)
        e2 = np.zeros(3)
        e1[u] = ext[u]
        e2[v] = ext[v]
        for sign in (-1.0, 1.0):
            origin = -half.copy()
            origin[axis] = sign * half[axis]
            parts.append((origin, e1, e2))
    vertices = corner_grid(-half, half)
    n_vertices = min(len(vertices), n)
    return np.vstack([vertices[:n_vertices], _sample_parallelograms(parts, n - n_vertices, rng)])


def _sample_ellipsoid(ext, n, rng):
    # Rejection on the unit sphere: the area element of x = diag(ext) u is
    # proportional to ||u / ext||.
    g_max = 1.0 / ext.min()
    chunks = []
    have = 0
    while have < n:
        batch = max(2 * (n - have), 64)
        u = rng.standard_normal((batch, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = np.sqrt(((u / ext) ** 2).sum(axis=1))
        keep = rng.random(batch) < g / g_max
        chunks.append(u[keep] * ext)
        have += int(keep.sum())
    return np.vstack(chunks)[:n]


def _sample_l_bracket(ext, n, rng):
    length, height, depth = ext
    t = L_BRACKET_THICKNESS * min(length, height)
    outline = np.array([(0, 0), (length, 0), (length, t), (t, t), (t, height), (0, height)], dtype=np.float64)

    parts = []
    for z in (0.0, depth):
        parts.append(((0.0, 0.0, z), (length, 0.0, 0.0), (0.0, t, 0.0)))
        parts.append(((0.0, t, z), (t, 0.0, 0.0), (0.0, height - t, 0.0)))
    for start, end in zip(outline, np.roll(outline, -1, axis=0)):
        edge = end - start
        parts.append(((start[0], start[1], 0.0), (edge[0], edge[1], 0.0), (0.0, 0.0, depth)))

    vertices = np.vstack([np.column_stack([outline, np.full(len(outline), z)]) for z in (0.0, depth)])
    n_vertices = min(len(vertices), n)
    points = np.vstack([vertices[:n_vertices], _sample_parallelograms(parts, n - n_vertices, rng)])
    return points - ext / 2.0


_SHAPE_SAMPLERS = {
    "box": _sample_box,
    "ellipsoid": _sample_ellipsoid,
    "l-bracket": _sample_l_bracket,
}


# ------------------- Statistics and frames -------------------

def max_pairwise_distance(positions):
    """
    Exact diameter. Past EXACT_DIAMETER_LIMIT points only convex hull
    vertices are compared (still exact); if qhull rejects a flat cloud the
    two-pass farthest-point estimate is returned instead.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if len(positions) < 2:
        return 0.0
    if len(positions) > EXACT_DIAMETER_LIMIT:
        try:
            positions = positions[ConvexHull(positions).vertices]
        except QhullError:
            logger.warning("Convex hull failed on %d points; using two-pass diameter estimate", len(positions))
            return _two_pass_diameter(positions)

    best = 0.0
    for start in range(0, len(positions), _DIAMETER_BLOCK):
        block = cdist(positions[start:start + _DIAMETER_BLOCK], positions[start:])
        best = max(best, float(block.max()))
    return best


def _two_pass_diameter(positions):
    far = positions[np.argmax(np.linalg.norm(positions - positions[0], axis=1))]
    return float(np.linalg.norm(positions - far, axis=1).max())


def object_stats(cloud):
    """(tight Aabb, centroid, diameter) of a non-empty cloud."""
    if len(cloud) == 0:
        raise EmptyCloudError()
    positions = cloud.positions
    return Aabb.of(positions), positions.mean(axis=0), max_pairwise_distance(positions)


def apply_transform(cloud, transform):
    if not isinstance(transform, RigidTransform):
        transform = RigidTransform(*transform)
    return PointCloud(transform.apply(cloud.positions), cloud.colors)


def normalize_object(model):
    """Same object with centroid at the origin and diameter 1."""
    positions = model.normalize_points(model.cloud.positions)
    return ObjectModel.from_cloud(model.id, PointCloud(positions, model.cloud.colors), model.symmetric)


def denormalize_keypoints(keypoints, model):
    """Map normalized-frame keypoints back to the model's frame and scale."""
    coords = np.asarray(keypoints.coords) / model.norm_scale + model.norm_offset
    return replace(keypoints, coords=coords)


def merge_objects(models, object_id="union"):
    """
    One object made of every model's normalized cloud, used where a single
    keypoint set is shared by all objects.
    """
    if not models:
        raise EmptyCloudError("no objects to merge")
    normalized = [normalize_object(model) for model in models]
    cloud = PointCloud(
        np.vstack([m.cloud.positions for m in normalized]),
        np.vstack([m.cloud.colors for m in normalized]),
    )
    return ObjectModel.from_cloud(object_id, cloud)
