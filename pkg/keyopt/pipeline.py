"""
Glue between a validated RunConfig and the numerical modules: builds the
objects, the loss / optimizer / encoder settings and the keypoint methods
the commands compare.
"""

import logging
from dataclasses import replace
from functools import partial

from .geometry import ObjectModel, denormalize_keypoints, load_point_cloud, make_synthetic_object, merge_objects
from .keygnet_lite import EncoderConfig, encoder_forward, load_checkpoint, train_encoder
from .loss import LossConfig
from .optimizer import OptimizeConfig, exhaustive_corner_search, optimize_keypoints_direct, ransac_keypoint_search
from .sampling import (
    bbox_corner_keypoints,
    bbox_heuristic_keypoints,
    fps_sample,
    random_keypoints,
)

logger = logging.getLogger(__name__)


def build_objects(config):
    objects = []
    for entry in config.objects:
        if entry["kind"] is not None:
            model = make_synthetic_object(
                entry["kind"], entry["extents"], entry["n_points"], entry["seed"], entry["id"], entry["symmetric"]
            )
        else:
            path = config.base_dir / entry["path"]
            model = ObjectModel.from_cloud(entry["id"], load_point_cloud(path, entry["format"]), entry["symmetric"])
        logger.debug("Object %s: %d points, diameter %.6f", model.id, len(model.cloud), model.diameter)
        objects.append(model)
    return objects


def loss_config(config):
    section = config.section("loss")
    return LossConfig(
        alpha=section["alpha"],
        beta=section["beta"],
        gamma=section["gamma"],
        similarity=section["similarity"],
        scheme=config.scheme,
        projections=section["projections"],
        bins=section["bins"],
        epsilon=section["epsilon"],
        critic_steps=section["critic_steps"],
        critic_lr=section["critic_lr"],
        critic_lambda=section["critic_lambda"],
        rng_seed=config.seed,
    )


def optimize_config(config):
    section = config.section("optimize")
    return OptimizeConfig(
        steps=section["steps"],
        lr=section["lr"],
        min_separation=section["min_separation"],
        schedule=section["schedule"],
        swap_epoch=section["swap_epoch"],
        loss=loss_config(config),
        rng_seed=config.seed,
    )


def encoder_config(config):
    section = config.section("encoder")
    return EncoderConfig(
        n_keypoints=config.n_keypoints,
        epochs=section["epochs"],
        lr0=section["lr0"],
        decay=section["decay"],
        decay_every=section["decay_every"],
        hidden=section["hidden"],
        k=section["k"],
        use_color=section["use_color"],
        input_points=section["input_points"],
        schedule=section["schedule"],
        swap_epoch=section["swap_epoch"],
        loss=loss_config(config),
        rng_seed=config.seed,
    )


def sample_keypoints(config, model, method=None, n=None):
    """Heuristic or random keypoints for one object, normalized frame."""
    section = config.section("sample")
    method = method or section["method"]
    n = n or config.n_keypoints
    if method == "fps":
        return fps_sample(model, n, section["seed_index"])
    if method == "bbox":
        if section["corners"] is not None:
            return bbox_corner_keypoints(model, section["corners"])
        return bbox_heuristic_keypoints(model, n)
    return random_keypoints(model, section["mode"], n, section["region_radius"], config.seed)


def ransac_keypoints(config, model, n=None):
    section = config.section("search")
    return ransac_keypoint_search(
        model,
        n or config.n_keypoints,
        section["iterations"],
        sampler=section["sampler"],
        w_sim=section["w_sim"],
        w_disp=section["w_disp"],
        scheme=config.scheme,
        region_radius=section["region_radius"],
        rng_seed=config.seed,
        projections=config.section("loss")["projections"],
    )


def search_keypoints(config, model, n=None):
    """The configured search's result(s) for one object, keyed by role."""
    if config.section("search")["kind"] == "ransac":
        return {"best": ransac_keypoints(config, model, n)}
    projections = config.section("loss")["projections"]
    best, worst = exhaustive_corner_search(model, n or config.n_keypoints, config.scheme, projections)
    return {"best": best, "worst": worst}


def optimize_shared(config, objects, n=None):
    """Direct optimization of one keypoint set for all objects from the configured init."""
    init_method = config.section("optimize")["init"]
    if len(objects) == 1:
        init = sample_keypoints(config, objects[0], init_method, n)
    else:
        union = merge_objects(objects)
        init = denormalize_keypoints(sample_keypoints(config, union, init_method, n), union)
    return init, optimize_keypoints_direct(init, objects, optimize_config(config))


def trained_encoder(config, objects, n=None):
    section = config.section("encoder")
    if section["checkpoint"]:
        return load_checkpoint(config.base_dir / section["checkpoint"]), []
    settings = encoder_config(config)
    if n is not None and n != settings.n_keypoints:
        settings = replace(settings, n_keypoints=n)
    return train_encoder(objects, settings)


def method_keypoints(name, config, model, n):
    """Keypoints of one evaluation method for one object, normalized frame."""
    if name in ("fps", "random"):
        return sample_keypoints(config, model, name, n)
    if name == "bbox":
        return bbox_heuristic_keypoints(model, n)
    if name in ("corner-min", "corner-max"):
        best, worst = exhaustive_corner_search(model, n, config.scheme, config.section("loss")["projections"])
        return (best if name == "corner-min" else worst).keypoints
    if name == "ransac":
        return ransac_keypoints(config, model, n).keypoints
    if name == "direct":
        return optimize_shared(config, [model], n)[1].keypoints
    encoder, _ = trained_encoder(config, [model], n)
    return encoder_forward(encoder, model, config.section("encoder")["use_color"])


def keypoint_methods(config, objects, n=None):
    """
    Mapping of method name to keypoint provider for run_experiment. SISO
    gives a callable per method (keypoints chosen per object); MIMO gives one
    KeypointSet shared by every object.
    """
    section = config.section("eval")
    n = n or config.n_keypoints
    if section["mode"] == "siso":
        return {name: partial(method_keypoints, name, config, n=n) for name in section["methods"]}

    union = merge_objects(objects)
    shared = {}
    for name in section["methods"]:
        if name == "direct":
            shared[name] = optimize_shared(config, objects, n)[1].keypoints
        elif name == "encoder":
            encoder, _ = trained_encoder(config, objects, n)
            shared[name] = denormalize_keypoints(
                encoder_forward(encoder, union, config.section("encoder")["use_color"]), union
            )
        else:
            shared[name] = denormalize_keypoints(method_keypoints(name, config, union, n), union)
    return shared
