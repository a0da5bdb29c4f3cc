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

import os
import shutil
import struct
import tempfile
import unittest
import numpy as np
import pandas as pd
from pattern_attention.errors import CheckpointError, NonFiniteError, ShapeMismatch, ConfigError
from pattern_attention.tensorcore import Tensor
from pattern_attention.model import ParamStore, preset, init_params, patchify, param_group, INIT_STD
from pattern_attention.training import (
    OptimState, adamw_step, cosine_lr, SynthDataset, batch_indices, encode_checkpoint,
    decode_checkpoint, save_checkpoint, load_checkpoint, gradcheck, train, evaluate,
    condition_params, relative_gradient_error)

def scalar_store(value, precision=64):
    return ParamStore([("p", Tensor(np.array([value]), requires_grad=True, precision=precision))])

def quick_config(**overrides):
    training = {"batch_size": 4, "eval_samples": 8, "log_every": 1}
    training.update(overrides.pop("training", {}))
    return preset("tiny", training=training, **overrides)

class AdamWTestCase(unittest.TestCase):

    def test_zero_grads_no_decay(self):
        store = scalar_store(1.5)
        state = OptimState.create(store, weight_decay=0.0)
        for _ in range(3):
            adamw_step(store, {"p": np.zeros(1)}, state, 1e-3)
        self.assertEqual(store["p"].item(), 1.5)
        self.assertEqual(state.step, 3)

    def test_unit_step(self):
        for g in (0.3, -7.0, 1e-3):
            store = scalar_store(2.0)
            state = OptimState.create(store, weight_decay=0.0)
            adamw_step(store, {"p": np.array([g])}, state, 1e-3)
            self.assertAlmostEqual(store["p"].item() - 2.0, -1e-3 * np.sign(g), delta=2e-8)

    def test_decay_only(self):
        store = scalar_store(1.0)
        state = OptimState.create(store, weight_decay=0.05)
        for _ in range(4):
            adamw_step(store, {"p": np.zeros(1)}, state, 1e-2)
        self.assertAlmostEqual(store["p"].item(), (1 - 1e-2 * 0.05) ** 4, places=14)

    def test_errors(self):
        store = scalar_store(1.0)
        state = OptimState.create(store)
        with self.assertRaisesRegex(NonFiniteError, "parameter p"):
            adamw_step(store, {"p": np.array([np.nan])}, state, 1e-3)
        with self.assertRaises(ShapeMismatch):
            adamw_step(store, {"p": np.zeros(2)}, state, 1e-3)

    def test_order_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(3), rng.standard_normal((2, 2))
        ga, gb = rng.standard_normal(3), rng.standard_normal((2, 2))
        forward = ParamStore([("a", Tensor(a)), ("b", Tensor(b))])
        backward = ParamStore([("b", Tensor(b)), ("a", Tensor(a))])
        for store in (forward, backward):
            state = OptimState.create(store)
            for _ in range(3):
                adamw_step(store, {"a": ga, "b": gb}, state, 1e-2)
        self.assertEqual(forward["a"].data.tobytes(), backward["a"].data.tobytes())
        self.assertEqual(forward["b"].data.tobytes(), backward["b"].data.tobytes())

    def test_cosine(self):
        self.assertEqual(cosine_lr(1e-3, 0, 100), 1e-3)
        self.assertAlmostEqual(cosine_lr(1e-3, 50, 100), 5e-4, places=15)
        self.assertAlmostEqual(cosine_lr(1e-3, 100, 100), 0.0, places=15)

class SynthDatasetTestCase(unittest.TestCase):

    def test_pure_function(self):
        a, b = SynthDataset(seed=3), SynthDataset(seed=3)
        image_a, label_a = a.sample(17)
        image_b, label_b = b.sample(17)
        self.assertEqual(image_a.tobytes(), image_b.tobytes())
        self.assertEqual(label_a, 7)
        self.assertEqual(image_a.shape, (3, 64, 64))
        self.assertEqual(image_a.dtype, np.float32)

    def test_balanced(self):
        dataset = SynthDataset(num_classes=10, size=100)
        counts = np.bincount([dataset.label(i) for i in range(100)])
        np.testing.assert_array_equal(counts, np.full(10, 10))

    def test_noise_level(self):
        dataset = SynthDataset(seed=1, noise=0.1)
        image, label = dataset.sample(4)
        residual = image - dataset.templates[label]
        self.assertAlmostEqual(float(residual.std()), 0.1, delta=0.01)

    def test_threaded_batch(self):
        dataset = SynthDataset(seed=2)
        indices = batch_indices(2, 5, 16, len(dataset))
        serial = dataset.batch(indices)
        threaded = dataset.batch(indices, threads=4)
        self.assertEqual(serial[0].tobytes(), threaded[0].tobytes())
        np.testing.assert_array_equal(serial[1], threaded[1])

    def test_batch_indices(self):
        np.testing.assert_array_equal(batch_indices(1, 9, 32, 4096), batch_indices(1, 9, 32, 4096))
        self.assertFalse(np.array_equal(batch_indices(1, 9, 32, 4096), batch_indices(1, 10, 32, 4096)))

    def test_out_of_range(self):
        with self.assertRaises(ConfigError):
            SynthDataset(size=10).sample(10)

class CheckpointTestCase(unittest.TestCase):

    def setUp(self):
        self.config = quick_config(block_bias=True)
        self.store = init_params(self.config, seed=1)
        self.state = OptimState.for_training(self.store, self.config.training)
        rng = np.random.default_rng(2)
        grads = dict((name, rng.standard_normal(t.shape).astype(np.float32))
                     for name, t in self.store.items())
        adamw_step(self.store, grads, self.state, 1e-3)
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_round_trip(self):
        path = os.path.join(self.tmpdir, "a.patc")
        save_checkpoint(path, self.store, self.state, self.config, 10)
        checkpoint = load_checkpoint(path)
        self.assertEqual(checkpoint.version, 1)
        self.assertEqual(checkpoint.steps, 10)
        self.assertEqual(checkpoint.config, self.config)
        self.assertTrue(checkpoint.params.equals(self.store))
        self.assertTrue(checkpoint.optimizer.equals(self.state))
        again = encode_checkpoint(checkpoint.params, checkpoint.optimizer, checkpoint.config, 10)
        with open(path, "rb") as f:
            self.assertEqual(f.read(), again)

    def test_header(self):
        data = encode_checkpoint(self.store, self.state, self.config, 10)
        self.assertEqual(data[:4], b"PATC")
        self.assertEqual(struct.unpack("<IQ", data[4:16]), (1, len(self.store)))

    def test_version(self):
        data = bytearray(encode_checkpoint(self.store, self.state, self.config, 10))
        data[4:8] = struct.pack("<I", 2)
        with self.assertRaisesRegex(CheckpointError, "version 2"):
            decode_checkpoint(bytes(data))

    def test_corruption(self):
        data = encode_checkpoint(self.store, self.state, self.config, 10)
        with self.assertRaisesRegex(CheckpointError, "magic"):
            decode_checkpoint(b"XXXX" + data[4:])
        with self.assertRaises(CheckpointError):
            decode_checkpoint(data[:len(data) // 2])
        with self.assertRaises(CheckpointError):
            decode_checkpoint(data[:6])
        flipped = bytearray(data)
        flipped[100] ^= 0xff
        with self.assertRaisesRegex(CheckpointError, "CRC"):
            decode_checkpoint(bytes(flipped))

    def test_config_mismatch(self):
        other = self.config.replace(block_bias=False)
        data = encode_checkpoint(self.store, self.state, other, 10)
        with self.assertRaisesRegex(CheckpointError, "do not match"):
            decode_checkpoint(data)

class GradcheckTestCase(unittest.TestCase):

    def test_all_bias_modes(self):
        for mode in ("absolute", "vector", "manhattan", "sqeuclid"):
            for sharing in ("per_head", "common"):
                for block_bias in (False, True):
                    config = preset("tiny", bias_mode=mode, bias_sharing=sharing,
                                    block_bias=block_bias)
                    report = gradcheck(config, seed=0)
                    self.assertTrue(report.passed, (mode, sharing, block_bias, report.failures[:3]))
                    self.assertEqual(report.groups["kernel_bias"]["status"], "checked")
                    expected = "checked" if block_bias else "absent"
                    self.assertEqual(report.groups["block_bias"]["status"], expected)

    def test_every_group_sampled(self):
        report = gradcheck(preset("tiny", block_bias=True), seed=1, coords=200)
        self.assertEqual(report.coords, 200)
        for group, entry in report.groups.items():
            self.assertGreaterEqual(entry["coords"], 20, group)

    def test_hybrid(self):
        config = preset("tiny", bias_mode=["absolute", "absolute", "vector", "vector"])
        self.assertTrue(gradcheck(config, seed=2, coords=60).passed)

    def test_default_config_passes(self):
        report = gradcheck(preset("tiny"), seed=0)
        self.assertTrue(report.passed, report.failures[:3])
        self.assertGreater(report.groups["embed"]["coords"], 0)
        self.assertLessEqual(report.groups["embed"]["max_rel_error"], 1e-4)

    def test_conditioned_embedding_is_unit_scale(self):
        config = preset("tiny")
        store = condition_params(init_params(config, seed=0, precision=64),
                                 np.random.default_rng(0))
        images = np.random.default_rng(1).standard_normal(
            (2, config.in_channels, config.image_size, config.image_size))
        pre_norm = patchify(images, precision=64).data @ store["embed.w"].data + store["embed.b"].data
        self.assertGreater(pre_norm.std(), 0.5)
        self.assertLess(pre_norm.std(), 2.0)

    def test_conditioning_jitters_bias_tables(self):
        config = preset("tiny", block_bias=True)
        store = init_params(config, seed=0, precision=64)
        conditioned = condition_params(init_params(config, seed=0, precision=64),
                                       np.random.default_rng(0))
        for name in store:
            if param_group(name) in ("kernel_bias", "block_bias"):
                self.assertFalse(store[name].data.any(), name)
                self.assertTrue(conditioned[name].data.any(), name)
                self.assertLess(np.abs(conditioned[name].data).max(), 0.2, name)
        w = conditioned["embed.w"].data
        np.testing.assert_allclose(w, store["embed.w"].data / (INIT_STD * np.sqrt(w.shape[0])))

    def test_relative_error_small_gradients(self):
        self.assertAlmostEqual(relative_gradient_error(1e-4, 1.1e-4), 1e-5 / 1.1e-4)
        self.assertLess(relative_gradient_error(0.0, 1e-13), 1e-4)
        self.assertEqual(relative_gradient_error(0.0, 0.0), 0.0)

    def test_frozen_group(self):
        report = gradcheck(preset("tiny"), seed=3, coords=40, frozen=("kernel_bias",))
        self.assertEqual(report.groups["kernel_bias"]["status"], "skipped")
        self.assertEqual(report.groups["kernel_bias"]["coords"], 0)
        self.assertIsInstance(report.to_frame(), pd.DataFrame)

class TrainTestCase(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_deterministic(self):
        config = quick_config()
        a = train(config, 4, seed=5)
        b = train(config, 4, seed=5)
        self.assertEqual(a.metrics["loss"].tolist(), b.metrics["loss"].tolist())
        self.assertTrue(a.params.equals(b.params))

    def test_threads_do_not_change_results(self):
        config = quick_config(training={"shards": 2})
        a = train(config, 3, seed=6, threads=1)
        b = train(config, 3, seed=6, threads=2)
        self.assertEqual(a.metrics["loss"].tolist(), b.metrics["loss"].tolist())
        self.assertTrue(a.params.equals(b.params))

    def test_resume(self):
        config = quick_config()
        unbroken = train(config, 6, seed=7)
        first = train(config, 6, seed=7, out_dir=self.tmpdir, stop_at=3)
        self.assertEqual(len(first.metrics), 3)
        resumed = train(config, 6, seed=7, resume=os.path.join(self.tmpdir, "checkpoint.patc"))
        self.assertEqual(resumed.metrics["step"].tolist(), [3, 4, 5])
        self.assertEqual(resumed.metrics["loss"].tolist(), unbroken.metrics["loss"].tolist()[3:])
        self.assertTrue(resumed.params.equals(unbroken.params))

    def test_outputs(self):
        config = quick_config()
        train(config, 2, seed=8, out_dir=self.tmpdir)
        metrics = pd.read_csv(os.path.join(self.tmpdir, "metrics.csv"))
        self.assertEqual(list(metrics.columns), ["step", "loss", "accuracy", "lr"])
        self.assertEqual(load_checkpoint(os.path.join(self.tmpdir, "checkpoint.patc")).optimizer.step, 2)
        with open(os.path.join(self.tmpdir, "config.json")) as f:
            self.assertEqual(f.read(), config.to_json())

    def test_resume_wrong_config(self):
        config = quick_config()
        train(config, 2, seed=9, out_dir=self.tmpdir)
        with self.assertRaises(ConfigError):
            train(config.replace(winnow=False), 2, resume=os.path.join(self.tmpdir, "checkpoint.patc"))

    def test_all_bias_modes_run(self):
        for mode in ("absolute", "vector", "manhattan", "sqeuclid"):
            result = train(quick_config(bias_mode=mode, block_bias=True), 2, seed=10)
            self.assertTrue(np.isfinite(result.metrics["loss"]).all())

    def test_non_finite_input(self):

        class BrokenDataset(SynthDataset):
            def sample(self, index):
                image, label = SynthDataset.sample(self, index)
                return image * np.float32(np.nan), label

        with self.assertRaises(NonFiniteError):
            train(quick_config(), 1, dataset=BrokenDataset(size=64))

    def test_evaluate(self):
        config = quick_config()
        store = init_params(config)
        result = evaluate(store, config, SynthDataset.for_config(config), np.arange(10), threads=2)
        self.assertEqual(result["samples"], 10)
        self.assertGreaterEqual(result["accuracy"], 0.0)
        self.assertLessEqual(result["accuracy"], 1.0)

    def test_toy_learns(self):
        config = preset("toy")
        result = train(config, 300, seed=0)
        losses = result.metrics["loss"]
        self.assertLess(losses[200:300].mean(), losses[0:100].mean())
        self.assertGreaterEqual(result.evaluation["accuracy"], 0.9)
