# Copyright 2023 The pattern-attention Authors - All Rights Reserved
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


# To run: python3 -m unittest discover -t . -s . -p test*.py

import io
import os
import json
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout, redirect_stderr
import numpy as np
from pattern_attention.cli import main, EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_IO
from pattern_attention.pattern import read_layout, plan_octagon_pattern
from pattern_attention.model import preset, plan_stages
from pattern_attention.geometry import octagon_shape

def run(*argv):
    """
    Runs the command line and returns (exit code, stdout, stderr).
    """
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()

class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def path(self, name):
        return os.path.join(self.tmpdir, name)

class PatternCommandTestCase(CliTestCase):

    def test_gen_octagon(self):
        code, out, _ = run("pattern", "gen", "--height", "28", "--width", "28",
                           "--out", self.path("oct.json"), "--json")
        self.assertEqual(code, EXIT_OK)
        summary = json.loads(out)
        self.assertEqual(summary["height"], 28)
        self.assertEqual(read_layout(self.path("oct.json")), plan_octagon_pattern(28, 28))

    def test_gen_square(self):
        code, out, _ = run("pattern", "gen", "--height", "8", "--width", "8", "--kernel", "square",
                           "--core-side", "4", "--sensor-radius", "1", "--out", self.path("sq.json"),
                           "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out)["instances"], 4)

    def test_validate_ok(self):
        run("pattern", "gen", "--height", "28", "--width", "28", "--out", self.path("oct.json"))
        code, out, _ = run("pattern", "validate", "--in", self.path("oct.json"))
        self.assertEqual(code, EXIT_OK)
        self.assertIn("ok", out)

    def test_validate_reports_violations(self):
        run("pattern", "gen", "--height", "8", "--width", "8", "--kernel", "square",
            "--sensor-radius", "0", "--out", self.path("sq.json"))
        with open(self.path("sq.json")) as f:
            doc = json.load(f)
        doc["instances"][1]["anchor"] = [0, 2]
        with open(self.path("bad.json"), "w") as f:
            json.dump(doc, f)

        code, _, err = run("pattern", "validate", "--in", self.path("bad.json"))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("double-covered-cell", err)

        code, out, _ = run("pattern", "validate", "--in", self.path("bad.json"), "--json")
        self.assertEqual(code, EXIT_FAILURE)
        self.assertFalse(json.loads(out)["ok"])

    def test_validate_non_string_shape(self):
        run("pattern", "gen", "--height", "8", "--width", "8", "--kernel", "square",
            "--out", self.path("sq.json"))
        with open(self.path("sq.json")) as f:
            doc = json.load(f)
        doc["instances"][0]["shape"] = ["x"]
        with open(self.path("bad.json"), "w") as f:
            json.dump(doc, f)
        code, _, err = run("pattern", "validate", "--in", self.path("bad.json"))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("instances[0].shape", err)

    def test_validate_unparseable(self):
        with open(self.path("junk.json"), "w") as f:
            f.write('{"version": 1,\n "height": }')
        code, _, err = run("pattern", "validate", "--in", self.path("junk.json"))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("line 2", err)

    def test_validate_missing_file(self):
        code, _, err = run("pattern", "validate", "--in", self.path("nope.json"))
        self.assertEqual(code, EXIT_IO)
        self.assertIn("error", err)

    def test_render(self):
        run("pattern", "gen", "--height", "28", "--width", "28", "--out", self.path("oct.json"))
        code, _, _ = run("pattern", "render", "--in", self.path("oct.json"), "--cell-px", "4",
                         "--out", self.path("oct.ppm"))
        self.assertEqual(code, EXIT_OK)
        with open(self.path("oct.ppm"), "rb") as f:
            data = f.read()
        self.assertTrue(data.startswith(b"P6\n112 112\n255\n"))
        self.assertEqual(len(data), len(b"P6\n112 112\n255\n") + 112 * 112 * 3)

    def test_bad_phase_is_usage_error(self):
        code, _, err = run("pattern", "gen", "--height", "28", "--width", "28", "--phase", "1",
                           "--out", self.path("oct.json"))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("ROW,COL", err)

    def test_nonpositive_cell_px_is_usage_error(self):
        run("pattern", "gen", "--height", "28", "--width", "28", "--out", self.path("oct.json"))
        code, _, err = run("pattern", "render", "--in", self.path("oct.json"), "--cell-px", "0",
                           "--out", self.path("oct.ppm"))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("positive", err)
        self.assertFalse(os.path.exists(self.path("oct.ppm")))

class UsageTestCase(unittest.TestCase):

    def test_no_command(self):
        code, _, _ = run()
        self.assertEqual(code, EXIT_USAGE)

    def test_unknown_option(self):
        code, _, _ = run("count-params", "--preset", "toy", "--bogus")
        self.assertEqual(code, EXIT_USAGE)

    def test_config_or_preset_required(self):
        code, _, _ = run("count-params")
        self.assertEqual(code, EXIT_USAGE)
        code, _, _ = run("count-params", "--preset", "toy", "--config", "x.json")
        self.assertEqual(code, EXIT_USAGE)

    def test_help(self):
        code, out, _ = run("--help")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("dump-bias", out)

class CheckCommandTestCase(CliTestCase):

    def test_oracle_qkva(self):
        code, out, _ = run("oracle", "qkva", "--h", "7", "--w", "5", "--trials", "10", "--json")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out)
        self.assertTrue(report["passed"])
        self.assertLessEqual(report["max_relative_error"], 1e-12)

    def test_oracle_qkva_bad_dimensions(self):
        for h, w in (("-1", "3"), ("0", "3"), ("3", "x")):
            code, out, err = run("oracle", "qkva", "--h", h, "--w", w)
            self.assertEqual(code, EXIT_USAGE, (h, w))
            self.assertEqual(out, "")

    def test_non_utf8_config(self):
        with open(self.path("model.json"), "wb") as f:
            f.write(b"\xff\xfe{}")
        code, out, err = run("count-params", "--config", self.path("model.json"), "--json")
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("UTF-8", err)
        self.assertEqual(out, "")

    def test_oracle_qkva_impossible_tolerance(self):
        code, _, _ = run("oracle", "qkva", "--h", "7", "--w", "5", "--trials", "10", "--tol", "-1")
        self.assertEqual(code, EXIT_FAILURE)

    def test_gradcheck(self):
        code, out, _ = run("gradcheck", "--preset", "tiny", "--coords", "20", "--json")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out)
        self.assertTrue(report["passed"])

    def test_count_params(self):
        for name, target in (("pat_s", 51e6), ("ablation", 43.9e6)):
            code, out, _ = run("count-params", "--preset", name, "--json")
            self.assertEqual(code, EXIT_OK)
            counts = json.loads(out)
            self.assertAlmostEqual(counts["total"] / target, 1.0, delta=0.02, msg=name)
            self.assertEqual(sum(counts["by_group"].values()), counts["total"])

    def test_count_params_from_file(self):
        with open(self.path("model.json"), "w") as f:
            json.dump({"embed_dim": 24, "depths": [1, 1, 2, 1], "heads": [1, 2, 4, 8],
                       "image_size": 64, "num_classes": 10}, f)
        code, file_out, _ = run("count-params", "--config", self.path("model.json"), "--json")
        self.assertEqual(code, EXIT_OK)
        _, preset_out, _ = run("count-params", "--preset", "toy", "--json")
        self.assertEqual(json.loads(file_out), json.loads(preset_out))

    def test_invalid_config_file(self):
        with open(self.path("model.json"), "w") as f:
            json.dump({"bias_mode": "cubic"}, f)
        code, _, err = run("count-params", "--config", self.path("model.json"))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("bias_mode", err)

    def test_bench(self):
        run("pattern", "gen", "--height", "28", "--width", "28", "--out", self.path("oct.json"))
        code, out, _ = run("bench", "--layout", self.path("oct.json"), "--channels", "8",
                           "--heads", "2", "--iters", "1", "--batch", "2", "--json")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out)
        self.assertEqual(report["madds"]["total"],
                         report["madds"]["p_stage_madds"] + report["madds"]["av_stage_madds"]
                         + report["madds"]["proj_madds"])
        ratios = dict((c["shape"], c["p_stage_ratio"]) for c in report["classes"])
        self.assertEqual(ratios[octagon_shape().shape_id], 0.5)
        self.assertEqual(sum(c["instances"] for c in report["classes"]),
                         len(plan_octagon_pattern(28, 28).instances))

    def test_bench_winnow_off_costs_more(self):
        run("pattern", "gen", "--height", "28", "--width", "28", "--out", self.path("oct.json"))
        totals = {}
        for winnow in ("on", "off"):
            code, out, _ = run("bench", "--layout", self.path("oct.json"), "--channels", "8",
                               "--heads", "2", "--iters", "1", "--winnow", winnow, "--json")
            self.assertEqual(code, EXIT_OK)
            totals[winnow] = json.loads(out)["madds"]["total"]
        self.assertLess(totals["on"], totals["off"])

class TrainCommandTestCase(CliTestCase):

    def train(self, *extra):
        return run("train", "--preset", "tiny", "--steps", "2", "--out", self.path("run"), *extra)

    def test_train_writes_outputs(self):
        code, out, _ = self.train("--json")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out)
        self.assertTrue(np.isfinite(report["final_loss"]))
        for name in ("metrics.csv", "checkpoint.patc", "config.json"):
            self.assertTrue(os.path.exists(os.path.join(self.path("run"), name)), name)

    def test_dump_bias(self):
        self.train()
        checkpoint = os.path.join(self.path("run"), "checkpoint.patc")
        code, _, _ = run("dump-bias", "--checkpoint", checkpoint, "--layer", "0", "--head", "0",
                         "--out", self.path("bias.csv"))
        self.assertEqual(code, EXIT_OK)
        rows = np.loadtxt(self.path("bias.csv"), delimiter=",", ndmin=2)
        layout = plan_stages(preset("tiny"))[0].layout
        dominant = layout.shapes[layout.dominant_shape_id()]
        self.assertEqual(rows.shape, (dominant.U, dominant.S))

        code, out, _ = run("dump-bias", "--checkpoint", checkpoint, "--layer", "0", "--head", "0")
        self.assertEqual(code, EXIT_OK)
        with open(self.path("bias.csv")) as f:
            self.assertEqual(out, f.read())

    def test_dump_bias_canonical_layer(self):
        self.train()
        checkpoint = os.path.join(self.path("run"), "checkpoint.patc")
        # one block per stage, so layer 3 is the 2x2 full-window stage
        code, out, _ = run("dump-bias", "--checkpoint", checkpoint, "--layer", "3", "--head", "3",
                           "--json")
        self.assertEqual(code, EXIT_OK)
        report = json.loads(out)
        self.assertEqual(report["stage"], 4)
        self.assertEqual(report["rows"], report["columns"])

    def test_dump_bias_bad_layer(self):
        self.train()
        checkpoint = os.path.join(self.path("run"), "checkpoint.patc")
        code, _, err = run("dump-bias", "--checkpoint", checkpoint, "--layer", "4", "--head", "0")
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("out of range", err)

    def test_corrupt_checkpoint(self):
        self.train()
        checkpoint = os.path.join(self.path("run"), "checkpoint.patc")
        with open(checkpoint, "rb") as f:
            data = bytearray(f.read())
        data[len(data) // 2] ^= 0xFF
        with open(checkpoint, "wb") as f:
            f.write(bytes(data))
        code, _, err = run("dump-bias", "--checkpoint", checkpoint, "--layer", "0", "--head", "0")
        self.assertEqual(code, EXIT_IO)
        self.assertIn("error", err)

        code, _, _ = self.train("--resume", checkpoint)
        self.assertEqual(code, EXIT_IO)

    def test_resume_completed_run(self):
        self.train()
        checkpoint = os.path.join(self.path("run"), "checkpoint.patc")
        code, out, _ = self.train("--resume", checkpoint, "--json")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(np.isfinite(json.loads(out)["evaluation"]["loss"]))
