"""
Run configuration: a TOML or JSON document validated before any work starts.

Every section has a fixed set of keys with types, defaults and range
validators; unknown keys anywhere raise ValidationError.
"""

import hashlib
import json
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator

from .geometry import SHAPE_KINDS

SCHEMES = ("radial", "offset", "vector")
SIMILARITIES = ("exact_w1", "critic", "kl", "js", "ce")
SAMPLE_METHODS = ("fps", "bbox", "random")
RANDOM_MODES = ("sphere", "bbox_region")
SEARCH_KINDS = ("exhaustive", "ransac")
SEARCH_SAMPLERS = ("sphere", "bbox_region", "corners")
EVAL_METHODS = ("fps", "bbox", "random", "corner-min", "corner-max", "ransac", "direct", "encoder")
EVAL_MODES = ("siso", "mimo")
CLOUD_FORMATS = ("ply", "obj")

# Keypoint count used when the config does not set one.
DEFAULT_KEYPOINTS = {"radial": 3, "offset": 8, "vector": 8}


@dataclass(frozen=True)
class Option:
    kind: str
    default: object = None
    validators: tuple = ()
    choices: tuple = None
    length: int = None


def _positive(name):
    def check(value):
        if not value > 0:
            raise ValidationError(f"{name} must be positive", code="min_value")
    return check


def _minimum(limit):
    return MinValueValidator(limit)


def _maximum(limit):
    return MaxValueValidator(limit)


TOP_LEVEL = {
    "seed": Option("int", 0, (_minimum(0),)),
    "scheme": Option("str", "radial", choices=SCHEMES),
    "n_keypoints": Option("int", None, (_minimum(3),)),
    "output_dir": Option("str", None),
}

OBJECT = {
    "kind": Option("str", None, choices=SHAPE_KINDS),
    "extents": Option("floats", None, (_positive("extents"),), length=3),
    "n_points": Option("int", 1000, (_minimum(4),)),
    "seed": Option("int", 0, (_minimum(0),)),
    "id": Option("str", None),
    "symmetric": Option("bool", False),
    "path": Option("str", None),
    "format": Option("str", None, choices=CLOUD_FORMATS),
}

SECTIONS = {
    "sample": {
        "method": Option("str", "fps", choices=SAMPLE_METHODS),
        "mode": Option("str", "sphere", choices=RANDOM_MODES),
        "region_radius": Option("float", 0.1, (_positive("region_radius"),)),
        "seed_index": Option("int", 0, (_minimum(0),)),
        "corners": Option("ints", None, (_minimum(0), _maximum(7))),
    },
    "loss": {
        "alpha": Option("float", 0.7, (_minimum(0.0), _maximum(1.0))),
        "beta": Option("float", 0.3, (_minimum(0.0), _maximum(1.0))),
        "gamma": Option("float", math.log(10.0), (_positive("gamma"),)),
        "similarity": Option("str", "exact_w1", choices=SIMILARITIES),
        "projections": Option("vectors", None),
        "bins": Option("int", 256, (_minimum(1),)),
        "epsilon": Option("float", 1e-12, (_positive("epsilon"),)),
        "critic_steps": Option("int", 100, (_minimum(1),)),
        "critic_lr": Option("float", 5e-3, (_positive("critic_lr"),)),
        "critic_lambda": Option("float", 10.0, (_minimum(0.0),)),
    },
    "optimize": {
        "steps": Option("int", 200, (_minimum(0),)),
        "lr": Option("float", 0.05, (_positive("lr"),)),
        "min_separation": Option("float", 0.2, (_minimum(0.0),)),
        "schedule": Option("bool", True),
        "swap_epoch": Option("int", 50, (_minimum(0),)),
        "init": Option("str", "fps", choices=SAMPLE_METHODS),
    },
    "search": {
        "kind": Option("str", "exhaustive", choices=SEARCH_KINDS),
        "iterations": Option("int", 100, (_minimum(1),)),
        "sampler": Option("str", "bbox_region", choices=SEARCH_SAMPLERS),
        "w_sim": Option("float", 1.0, (_minimum(0.0),)),
        "w_disp": Option("float", 0.1, (_minimum(0.0),)),
        "region_radius": Option("float", 0.1, (_positive("region_radius"),)),
    },
    "encoder": {
        "epochs": Option("int", 100, (_minimum(0),)),
        "lr0": Option("float", 1e-3, (_positive("lr0"),)),
        "decay": Option("float", 0.1, (_positive("decay"), _maximum(1.0))),
        "decay_every": Option("int", 50, (_minimum(1),)),
        "hidden": Option("int", 32, (_minimum(1),)),
        "k": Option("int", 8, (_minimum(1),)),
        "use_color": Option("bool", False),
        "input_points": Option("int", None, (_minimum(2),)),
        "schedule": Option("bool", True),
        "swap_epoch": Option("int", 50, (_minimum(0),)),
        "checkpoint": Option("str", None),
    },
    "eval": {
        "methods": Option("strs", ["fps", "bbox"], choices=EVAL_METHODS),
        "noise_std": Option("floats", [0.0], (_minimum(0.0),)),
        "outlier_rate": Option("float", 0.0, (_minimum(0.0), _maximum(1.0))),
        "outlier_spread": Option("float", 0.1, (_minimum(0.0),)),
        "trials": Option("int", 10, (_minimum(1),)),
        "mode": Option("str", "siso", choices=EVAL_MODES),
        "keypoint_counts": Option("ints", None, (_minimum(3),)),
        "translation_extent": Option("float", 0.5, (_minimum(0.0),)),
    },
    "histogram": {
        "bins": Option("int", 256, (_minimum(1),)),
    },
}


# ---- Value coercion ----

def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return (_is_int(value) or isinstance(value, float)) and math.isfinite(value)


def _coerce(where, option, value):
    """Typed value or ValidationError naming the key."""
    kind = option.kind
    if value is None:
        return None
    if kind == "int":
        if not _is_int(value):
            raise ValidationError(f"{where}: expected an integer, got {value!r}", code="invalid")
        items = [value]
    elif kind == "float":
        if not _is_number(value):
            raise ValidationError(f"{where}: expected a number, got {value!r}", code="invalid")
        value = float(value)
        items = [value]
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ValidationError(f"{where}: expected true or false, got {value!r}", code="invalid")
        return value
    elif kind == "str":
        if not isinstance(value, str):
            raise ValidationError(f"{where}: expected a string, got {value!r}", code="invalid")
        if option.choices is not None and value not in option.choices:
            for alternative in (value.replace("-", "_"), value.replace("_", "-")):
                if alternative in option.choices:
                    value = alternative
                    break
        items = [value]
    elif kind in ("ints", "floats", "strs"):
        if not isinstance(value, list) or not value:
            raise ValidationError(f"{where}: expected a non-empty list", code="invalid")
        item_option = Option(kind[:-1], validators=option.validators, choices=option.choices)
        value = [_coerce(f"{where}[{i}]", item_option, item) for i, item in enumerate(value)]
        if option.length is not None and len(value) != option.length:
            raise ValidationError(f"{where}: expected {option.length} entries", code="invalid")
        return value
    elif kind == "vectors":
        if not isinstance(value, list) or not value:
            raise ValidationError(f"{where}: expected a non-empty list of 3-vectors", code="invalid")
        vector = Option("floats", length=3)
        return [_coerce(f"{where}[{i}]", vector, item) for i, item in enumerate(value)]
    else:
        raise ValueError(f"unknown option kind {kind}")

    for item in items:
        if option.choices is not None and item not in option.choices:
            raise ValidationError(
                f"{where}: {item!r} is not one of {', '.join(option.choices)}", code="invalid_choice"
            )
        for validator in option.validators:
            try:
                validator(item)
            except ValidationError as exc:
                raise ValidationError(f"{where}: {' '.join(exc.messages)}", code=exc.code)
    return value


def _validate_table(where, schema, table):
    if not isinstance(table, dict):
        raise ValidationError(f"{where}: expected a table", code="invalid")
    errors = []
    unknown = sorted(set(table) - set(schema))
    for key in unknown:
        errors.append(ValidationError(f"{where}.{key}: unknown key" if where else f"{key}: unknown key", code="unknown"))
    values = {}
    for key, option in schema.items():
        name = f"{where}.{key}" if where else key
        try:
            values[key] = _coerce(name, option, table.get(key, option.default))
        except ValidationError as exc:
            errors.append(exc)
    if errors:
        raise ValidationError(errors)
    return values


# ---- Run configuration ----

@dataclass(frozen=True)
class RunConfig:
    seed: int
    scheme: str
    n_keypoints: int
    output_dir: str
    objects: tuple
    sections: dict
    base_dir: Path

    def section(self, name):
        return self.sections[name]

    def as_dict(self):
        data = {
            "seed": self.seed,
            "scheme": self.scheme,
            "n_keypoints": self.n_keypoints,
            "objects": [dict(obj) for obj in self.objects],
        }
        data.update({name: dict(values) for name, values in self.sections.items()})
        return data

    @property
    def config_hash(self):
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _validate_object(index, table):
    where = f"objects[{index}]"
    values = _validate_table(where, OBJECT, table)
    if (values["kind"] is None) == (values["path"] is None):
        raise ValidationError(f"{where}: give exactly one of kind or path", code="invalid")
    if values["kind"] is not None and values["extents"] is None:
        raise ValidationError(f"{where}: synthetic objects need extents", code="required")
    if values["id"] is None:
        values["id"] = f"{values['kind']}-{index}" if values["kind"] else Path(values["path"]).stem
    return values


def parse_run_config(data, base_dir=None):
    """Validate a raw config mapping; returns RunConfig or raises ValidationError."""
    if not isinstance(data, dict):
        raise ValidationError("config must be a table", code="invalid")
    errors = []
    known = set(TOP_LEVEL) | set(SECTIONS) | {"objects"}
    for key in sorted(set(data) - known):
        errors.append(ValidationError(f"{key}: unknown key", code="unknown"))

    top = {}
    try:
        top = _validate_table("", TOP_LEVEL, {k: v for k, v in data.items() if k in TOP_LEVEL})
    except ValidationError as exc:
        errors.append(exc)

    sections = {}
    for name, schema in SECTIONS.items():
        try:
            sections[name] = _validate_table(name, schema, data.get(name, {}))
        except ValidationError as exc:
            errors.append(exc)

    objects = []
    raw_objects = data.get("objects", [])
    if not isinstance(raw_objects, list) or not raw_objects:
        errors.append(ValidationError("objects: at least one object is required", code="required"))
    else:
        for index, table in enumerate(raw_objects):
            try:
                objects.append(_validate_object(index, table))
            except ValidationError as exc:
                errors.append(exc)
        ids = [obj["id"] for obj in objects]
        if len(set(ids)) != len(ids):
            errors.append(ValidationError("objects: ids must be unique", code="invalid"))

    if "loss" in sections:
        loss = sections["loss"]
        if abs(loss["alpha"] + loss["beta"] - 1.0) > 1e-12:
            errors.append(ValidationError("loss: alpha + beta must equal 1", code="invalid"))
    if errors:
        raise ValidationError(errors)

    scheme = top["scheme"]
    return RunConfig(
        seed=top["seed"],
        scheme=scheme,
        n_keypoints=top["n_keypoints"] or DEFAULT_KEYPOINTS[scheme],
        output_dir=top["output_dir"],
        objects=tuple(objects),
        sections=sections,
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )


def apply_overrides(data, overrides):
    """Set dotted keys ("sample.method") on a raw config mapping; None values are skipped."""
    data = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        if value is None:
            continue
        *parents, key = dotted.split(".")
        table = data
        for parent in parents:
            table = table.setdefault(parent, {})
        table[key] = value
    return data


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror or exc}", code="missing")
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        if path.suffix.lower() == ".json":
            return json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}", code="invalid")
    raise ValidationError(f"config {path} must be .toml or .json", code="invalid")


def load_run_config(path, overrides=None):
    data = read_config_file(path)
    if overrides:
        data = apply_overrides(data, overrides)
    return parse_run_config(data, base_dir=Path(path).resolve().parent)
