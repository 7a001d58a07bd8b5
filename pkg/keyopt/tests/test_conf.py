import json
import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from keyopt.conf import apply_overrides, load_run_config, parse_run_config, read_config_file

BOX = {"kind": "box", "extents": [2, 1, 0.5], "n_points": 200}

TOML_CONFIG = """
seed = 7
scheme = "offset"

[[objects]]
kind = "l-bracket"
extents = [1.0, 1.0, 0.3]

[sample]
method = "random"
mode = "bbox-region"
"""


class ParseRunConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = parse_run_config({"objects": [BOX]})
        self.assertEqual(config.scheme, "radial")
        self.assertEqual(config.n_keypoints, 3)
        self.assertEqual(config.section("sample")["method"], "fps")
        self.assertEqual(config.section("loss")["alpha"], 0.7)
        self.assertEqual(config.objects[0]["id"], "box-0")
        self.assertEqual(config.objects[0]["extents"], [2.0, 1.0, 0.5])

    def test_keypoint_default_follows_the_scheme(self):
        self.assertEqual(parse_run_config({"scheme": "offset", "objects": [BOX]}).n_keypoints, 8)
        self.assertEqual(parse_run_config({"scheme": "vector", "n_keypoints": 4, "objects": [BOX]}).n_keypoints, 4)

    def test_unknown_keys_are_rejected(self):
        for data in (
            {"objects": [BOX], "colour": True},
            {"objects": [BOX], "sample": {"methd": "fps"}},
            {"objects": [dict(BOX, size=3)]},
        ):
            with self.assertRaisesMessage(ValidationError, "unknown key"):
                parse_run_config(data)

    def test_object_needs_kind_or_path(self):
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [dict(BOX, path="a.ply")]})
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [{"n_points": 10}]})
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": []})

    def test_ranges_and_types(self):
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [BOX], "loss": {"alpha": 0.5}})
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [BOX], "n_keypoints": 2})
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [BOX], "eval": {"trials": "ten"}})
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [dict(BOX, extents=[1, 1])]})
        with self.assertRaisesMessage(ValidationError, "objects[0].n_points"):
            parse_run_config({"objects": [dict(BOX, n_points=2)]})
        self.assertEqual(parse_run_config({"objects": [dict(BOX, n_points=4)]}).objects[0]["n_points"], 4)

    def test_duplicate_ids(self):
        with self.assertRaises(ValidationError):
            parse_run_config({"objects": [dict(BOX, id="a"), dict(BOX, id="a")]})

    def test_errors_are_collected(self):
        with self.assertRaises(ValidationError) as ctx:
            parse_run_config({"objects": [BOX], "scheme": "polar", "optimize": {"lr": -1.0}})
        self.assertEqual(len(ctx.exception.messages), 2)

    def test_overrides(self):
        data = apply_overrides({"objects": [BOX]}, {"sample.method": "bbox", "seed": 3, "eval.trials": None})
        config = parse_run_config(data)
        self.assertEqual((config.seed, config.section("sample")["method"]), (3, "bbox"))
        self.assertEqual(config.section("eval")["trials"], 10)

    def test_hash_ignores_output_dir(self):
        a = parse_run_config({"objects": [BOX], "output_dir": "one"})
        b = parse_run_config({"objects": [BOX], "output_dir": "two"})
        c = parse_run_config({"objects": [BOX], "seed": 1})
        self.assertEqual(a.config_hash, b.config_hash)
        self.assertNotEqual(a.config_hash, c.config_hash)


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_toml(self):
        path = self.root / "run.toml"
        path.write_text(TOML_CONFIG)
        config = load_run_config(path)
        self.assertEqual((config.seed, config.scheme, config.n_keypoints), (7, "offset", 8))
        self.assertEqual(config.section("sample")["mode"], "bbox_region")
        self.assertEqual(config.base_dir, self.root.resolve())

    def test_json_with_overrides(self):
        path = self.root / "run.json"
        path.write_text(json.dumps({"objects": [BOX]}))
        config = load_run_config(path, {"n_keypoints": 5})
        self.assertEqual(config.n_keypoints, 5)

    def test_bad_files(self):
        with self.assertRaisesMessage(ValidationError, "cannot read config"):
            read_config_file(self.root / "missing.toml")
        yaml = self.root / "run.yaml"
        yaml.write_text("seed: 1")
        with self.assertRaisesMessage(ValidationError, "must be .toml or .json"):
            read_config_file(yaml)
        broken = self.root / "run.toml"
        broken.write_text("seed = = 1")
        with self.assertRaisesMessage(ValidationError, "cannot parse config"):
            read_config_file(broken)
