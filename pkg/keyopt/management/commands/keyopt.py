import logging
from functools import partial

import torch
from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from keyopt.artifacts import RunOutput, histogram_csv, keypoints_payload, record_run
from keyopt.conf import EVAL_METHODS, SAMPLE_METHODS, SCHEMES, load_run_config
from keyopt.exceptions import KeyoptError
from keyopt.geometry import object_stats, save_point_cloud
from keyopt.keygnet_lite import encoder_forward, save_checkpoint
from keyopt.loss import combined_loss
from keyopt.models import Run
from keyopt.pipeline import (
    build_objects,
    keypoint_methods,
    loss_config,
    optimize_shared,
    sample_keypoints,
    search_keypoints,
    trained_encoder,
)
from keyopt.posesim import run_keypoint_sweep
from keyopt.runs import artifact_totals, recent_runs, runs_by_command, runs_by_status, runs_with_config
from keyopt.votes import compute_votes, vote_histograms, vote_mean_spread, voting_mask

logger = logging.getLogger(__name__)

VALIDATION_EXIT = 1
RUNTIME_EXIT = 2

# Subcommand -> extra overrides it accepts, as (flag, dotted config key, argparse kwargs).
OVERRIDES = {
    "synth": [],
    "sample": [("--method", "sample.method", {"choices": SAMPLE_METHODS}), ("--n", "n_keypoints", {"type": int})],
    "optimize": [("--n", "n_keypoints", {"type": int}), ("--steps", "optimize.steps", {"type": int})],
    "search": [("--n", "n_keypoints", {"type": int}), ("--iterations", "search.iterations", {"type": int})],
    "train-encoder": [("--n", "n_keypoints", {"type": int}), ("--epochs", "encoder.epochs", {"type": int})],
    "eval": [
        ("--n", "n_keypoints", {"type": int}),
        ("--trials", "eval.trials", {"type": int}),
        ("--method", "eval.methods", {"nargs": "+", "choices": EVAL_METHODS}),
        ("--keypoints", "eval.keypoint_counts", {"nargs": "+", "type": int}),
    ],
    "hist-export": [
        ("--method", "sample.method", {"choices": SAMPLE_METHODS}),
        ("--n", "n_keypoints", {"type": int}),
        ("--bins", "histogram.bins", {"type": int}),
    ],
}


class Command(BaseCommand):
    help = "Keypoint selection toolkit: synthesize objects, pick and score keypoints, run pose experiments"

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", required=True)
        for name, extras in OVERRIDES.items():
            sub = subparsers.add_parser(name)
            sub.add_argument("--config", help="TOML or JSON run configuration")
            sub.add_argument("--out", help="Output directory (default: KEYOPT_OUTPUT_DIR/<command>-<hash>)")
            sub.add_argument("--seed", type=int)
            sub.add_argument("--scheme", choices=SCHEMES)
            for flag, key, kwargs in extras:
                sub.add_argument(flag, dest=key, **kwargs)
        runs = subparsers.add_parser("runs")
        runs.add_argument("--limit", type=int, default=20)
        runs.add_argument("--command", dest="filter_command")
        runs.add_argument("--config-hash", dest="config_hash", help="Every run of one configuration")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        torch.set_num_threads(settings.KEYOPT_THREADS)
        if subcommand == "runs":
            return self.list_runs(options["limit"], options["filter_command"], options.get("config_hash"))

        if not options.get("config"):
            raise CommandError(
                f"the --config option is required\nusage: manage.py keyopt {subcommand} --config <path> [--out <dir>] [--seed <n>]",
                returncode=VALIDATION_EXIT,
            )
        overrides = {"seed": options.get("seed"), "scheme": options.get("scheme")}
        for _, key, _ in OVERRIDES[subcommand]:
            overrides[key] = options.get(key)
        try:
            config = load_run_config(options["config"], overrides)
        except ValidationError as exc:
            raise CommandError("invalid configuration: " + "; ".join(exc.messages), returncode=VALIDATION_EXIT)

        output = RunOutput(subcommand, config, options.get("out") or config.output_dir)
        handler = getattr(self, "run_" + subcommand.replace("-", "_"))
        try:
            summary = handler(config, output)
            output.finish(summary)
        except (KeyoptError, OSError) as exc:
            logger.error("%s failed: %s", subcommand, exc)
            record_run(output, str(exc), Run.STATUS_FAILED)
            raise CommandError(f"{subcommand} failed: {exc}", returncode=RUNTIME_EXIT)

        self.stdout.write(self.style.SUCCESS(f"{summary} -> {output.directory}"))

    # ---- Subcommands ----

    def run_synth(self, config, output):
        objects = build_objects(config)
        stats = []
        for model in objects:
            name = f"objects/{model.id}.ply"
            (output.directory / "objects").mkdir(parents=True, exist_ok=True)
            save_point_cloud(output.directory / name, model.cloud)
            output.adopt(name)
            box, centroid, diameter = object_stats(model.cloud)
            stats.append({
                "id": model.id,
                "file": name,
                "n_points": len(model.cloud),
                "centroid": centroid.tolist(),
                "diameter": diameter,
                "aabb": [box.min_corner.tolist(), box.max_corner.tolist()],
                "symmetric": model.symmetric,
            })
        output.write_json("objects.json", {"objects": stats})
        return f"synth: {len(objects)} object(s)"

    def run_sample(self, config, output):
        objects = build_objects(config)
        method = config.section("sample")["method"]
        sets = [([model.id], sample_keypoints(config, model)) for model in objects]
        output.write_json("keypoints.json", keypoints_payload(method, sets))
        return f"sample: {method}, {len(sets[0][1])} keypoints for {len(objects)} object(s)"

    def run_optimize(self, config, output):
        objects = build_objects(config)
        init, result = optimize_shared(config, objects)
        ids = [model.id for model in objects]
        report = combined_loss(result.keypoints, objects, loss_config(config))
        output.write_json("keypoints.json", keypoints_payload("direct", [(ids, result.keypoints)]))
        output.write_json("optimize.json", {
            "init": init.coords.tolist(),
            "result": result.as_dict(),
            "loss": report.as_dict(),
        })
        return f"optimize: loss {result.trace[0]:.6f} -> {result.score:.6f} in {len(result.trace) - 1} steps"

    def run_search(self, config, output):
        objects = build_objects(config)
        kind = config.section("search")["kind"]
        results = {model.id: search_keypoints(config, model) for model in objects}
        output.write_json("search.json", {
            "kind": kind,
            "results": {oid: {role: r.as_dict() for role, r in found.items()} for oid, found in results.items()},
        })
        sets = [([oid], found["best"].keypoints) for oid, found in results.items()]
        output.write_json("keypoints.json", keypoints_payload(f"search-{kind}", sets))
        best = ", ".join(f"{oid} {found['best'].score:.6f}" for oid, found in results.items())
        return f"search: {kind} best {best}"

    def run_train_encoder(self, config, output):
        objects = build_objects(config)
        encoder, trace = trained_encoder(config, objects)
        use_color = config.section("encoder")["use_color"]
        output.directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(output.directory / "encoder.json", encoder, {"config_hash": config.config_hash})
        output.adopt("encoder.json")
        output.write_json("trace.json", {"loss": trace})
        sets = [([model.id], encoder_forward(encoder, model, use_color)) for model in objects]
        output.write_json("keypoints.json", keypoints_payload("encoder", sets))
        if trace:
            return f"train-encoder: {len(trace)} epochs, loss {trace[0]:.6f} -> {trace[-1]:.6f}"
        return "train-encoder: loaded checkpoint"

    def run_eval(self, config, output):
        objects = build_objects(config)
        section = config.section("eval")
        options = {
            "scheme": config.scheme,
            "noise_levels": section["noise_std"],
            "trials": section["trials"],
            "rng_seed": config.seed,
            "outlier_rate": section["outlier_rate"],
            "outlier_spread": section["outlier_spread"],
            "translation_extent": section["translation_extent"],
            "workers": settings.KEYOPT_THREADS,
        }
        counts = section["keypoint_counts"] or [config.n_keypoints]
        reports = run_keypoint_sweep(objects, partial(keypoint_methods, config, objects), counts, **options)
        worst = 0.0
        for n, report in reports.items():
            prefix = f"n{n}/" if section["keypoint_counts"] else ""
            output.write_json(f"{prefix}report.json", {"mode": section["mode"], "n_keypoints": n, **report.as_dict()})
            for noise_std in report.noise_levels:
                output.write_text(f"{prefix}trials_noise-{noise_std:g}.csv", report.to_csv(noise_std))
            adds = [row.add for row in report.rows if not row.failed]
            worst = max([worst] + adds)
        return f"eval: {len(section['methods'])} method(s), {len(counts)} keypoint count(s), max ADD {worst:.3g}"

    def run_hist_export(self, config, output):
        objects = build_objects(config)
        bins = config.section("histogram")["bins"]
        projections = config.section("loss")["projections"]
        method = config.section("sample")["method"]
        spreads = {}
        files = 0
        for model in objects:
            keypoints = sample_keypoints(config, model)
            positions = model.normalize_points(model.cloud.positions)
            positions = positions[voting_mask(positions, keypoints, config.scheme)]
            field = compute_votes(positions, keypoints, config.scheme)
            hists = vote_histograms(field, bins, projections)
            for j, channels in enumerate(hists):
                for c, hist in enumerate(channels):
                    suffix = f"_c{c}" if len(channels) > 1 else ""
                    output.write_text(f"histograms/{model.id}_kp{j}{suffix}.csv", histogram_csv(hist))
                    files += 1
            spreads[model.id] = {
                "keypoints": keypoints.coords.tolist(),
                "mean_spread": vote_mean_spread(field, projections),
            }
        output.write_json("histograms.json", {"method": method, "bins": bins, "objects": spreads})
        return f"hist-export: {files} histogram file(s)"

    def list_runs(self, limit, command, config_hash=None):
        runs = runs_with_config(config_hash) if config_hash else recent_runs(limit, command)
        for run in runs:
            self.stdout.write(
                f"{run.id:>5}  {run.created_at:%Y-%m-%d %H:%M}  {run.command:<14} {run.status:<8} "
                f"{run.artifact_count:>3} artifact(s)  {run.output_dir}"
            )
        totals = runs_by_command()
        self.stdout.write(self.style.SUCCESS(
            "runs: " + (", ".join(f"{cmd} {info['total']}" for cmd, info in totals.items()) or "none recorded")
        ))
        if totals:
            statuses = ", ".join(f"{status} {total}" for status, total in runs_by_status().items())
            stored = artifact_totals()
            self.stdout.write(f"status: {statuses}; artifacts: {stored['count']} ({stored['bytes']} bytes)")


