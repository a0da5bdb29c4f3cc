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
import json
import shutil
import tempfile
import unittest
import numpy as np
from pattern_attention.errors import ConfigError, ShapeMismatch
from pattern_attention.tensorcore import Tensor, GradTape, reshape, matmul
from pattern_attention.model import (
    ModelConfig, TrainConfig, preset, load_config, plan_stages, ParamStore, init_params, count_params,
    param_specs, param_group, check_store, Network, patchify, patch_embed, pat_block,
    patch_merge, merge_index, classifier_head, GROUPS)

def within(value, target, tolerance=0.02):
    return abs(value - target) <= tolerance * target

def weighted_loss(out, weights):
    return reshape(matmul(reshape(out, (1, out.size)), weights), ())

def embed_store(channels, in_channels=3, seed=0):
    rng = np.random.default_rng(seed)
    return ParamStore([
        ("embed.w", Tensor(rng.standard_normal((in_channels * 16, channels)), requires_grad=True)),
        ("embed.b", Tensor(np.zeros(channels), requires_grad=True)),
        ("embed.norm.gain", Tensor(np.ones(channels), requires_grad=True)),
        ("embed.norm.shift", Tensor(np.zeros(channels), requires_grad=True)),
    ])

def merge_store(channels, seed=0):
    rng = np.random.default_rng(seed)
    return ParamStore([
        ("merge1.norm.gain", Tensor(rng.uniform(0.5, 1.5, 4 * channels), requires_grad=True)),
        ("merge1.norm.shift", Tensor(rng.standard_normal(4 * channels), requires_grad=True)),
        ("merge1.w", Tensor(rng.standard_normal((4 * channels, 2 * channels)), requires_grad=True)),
    ])

def assert_gradients(test, build, sources, rng, per_source=6):
    with GradTape() as tape:
        loss = build()
    grads = tape.gradient(loss, sources)
    for k, source in enumerate(sources):
        flat = source.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(flat.size, per_source), replace=False):
            old = flat[i]
            flat[i] = old + 1e-3
            up = build().item()
            flat[i] = old - 1e-3
            down = build().item()
            flat[i] = old
            numeric = (up - down) / 2e-3
            analytic = grads[k].reshape(-1)[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)
            test.assertLessEqual(err, 1e-4, "{0}[{1}]".format(source.name, i))

class ConfigTestCase(unittest.TestCase):

    def test_defaults(self):
        config = ModelConfig()
        self.assertEqual(config.depths, [1, 1, 15, 2])
        self.assertEqual(config.stage_resolutions(), [56, 28, 14, 7])
        self.assertEqual(config.stage_channels(), [96, 192, 384, 768])
        self.assertEqual(config.training.batch_size, 32)

    def test_unknown_keys(self):
        with self.assertRaisesRegex(ConfigError, "unknown model config key"):
            ModelConfig.from_dict({"embed_dim": 96, "window_size": 7})
        with self.assertRaisesRegex(ConfigError, "unknown training config key"):
            ModelConfig.from_dict({"training": {"warmup": 20}})

    def test_invalid_values(self):
        for changes in ({"image_size": 100}, {"heads": [5, 6, 12, 24]}, {"bias_mode": "cosine"},
                        {"bias_sharing": "layer"}, {"depths": [1, 1, 1]}, {"kernel": "hexagon"},
                        {"winnow": 1}, {"training": {"batch_size": 10, "shards": 3}}):
            with self.assertRaises(ConfigError, msg=str(changes)):
                ModelConfig.from_dict(changes)

    def test_octagon_needs_room(self):
        with self.assertRaisesRegex(ConfigError, "octagon kernel needs"):
            preset("tiny", image_size=32)
        config = preset("tiny", image_size=32, kernel="square", core_side=2)
        self.assertEqual(config.stage_resolutions(), [8, 4, 2, 1])

    def test_json_round_trip(self):
        config = preset("toy", bias_mode=["absolute", "absolute", "vector", "vector"],
                        training={"lr": 5e-4})
        again = ModelConfig.from_json(config.to_json())
        self.assertEqual(again, config)
        self.assertEqual(again.training.lr, 5e-4)
        self.assertEqual(again.stage_bias_mode(2), "vector")
        self.assertEqual(json.loads(config.to_json())["training"]["betas"], [0.9, 0.999])

    def test_load_config_rejects_non_utf8(self):
        tmpdir = tempfile.mkdtemp()
        try:
            path = os.path.join(tmpdir, "model.json")
            with open(path, "wb") as f:
                f.write(b'{"embed_dim": \xff\xfe}')
            with self.assertRaisesRegex(ConfigError, "not UTF-8 at byte 14"):
                load_config(path)
            with open(path, "w") as f:
                f.write(preset("toy").to_json())
            self.assertEqual(load_config(path), preset("toy"))
        finally:
            shutil.rmtree(tmpdir)

    def test_training_must_be_object(self):
        with self.assertRaisesRegex(ConfigError, "training must be a JSON object"):
            ModelConfig.from_json('{"training": [1, 2]}')

    def test_presets(self):
        self.assertEqual(preset("pat_b").heads, [4, 8, 16, 32])
        self.assertEqual(preset("ablation").depths, [1, 1, 15, 1])
        with self.assertRaises(ConfigError):
            preset("pat_xl")

    def test_sharing_none_disables_bias(self):
        config = preset("toy", bias_sharing="none")
        self.assertIsNone(config.stage_bias_mode(0))

class StagesTestCase(unittest.TestCase):

    def test_pat_s_resolutions(self):
        stages = plan_stages(preset("pat_s"))
        self.assertEqual([s.height for s in stages], [56, 28, 14, 7])
        self.assertEqual([s.kind for s in stages], ["pattern", "pattern", "canonical", "canonical"])
        self.assertEqual(len(stages[2].layout.instances), 1)

    def test_toy_resolutions(self):
        stages = plan_stages(preset("toy"))
        self.assertEqual([s.height for s in stages], [16, 8, 4, 2])
        self.assertEqual([s.channels for s in stages], [24, 48, 96, 192])

class CountParamsTestCase(unittest.TestCase):

    def test_ablation_counts(self):
        per_head = count_params(preset("ablation", bias_sharing="per_head"))
        common = count_params(preset("ablation", bias_sharing="common"))
        none = count_params(preset("ablation", bias_sharing="none"))
        self.assertTrue(within(per_head["total"], 43.9e6), per_head)
        self.assertTrue(within(common["total"], 37.5e6), common)
        self.assertTrue(within(none["total"], 36.9e6), none)
        self.assertGreater(per_head["total"], common["total"])
        self.assertGreater(common["total"], none["total"])
        self.assertEqual(none["by_group"]["kernel_bias"], 0)
        self.assertEqual(per_head["by_group"]["weights"], none["by_group"]["weights"])

    def test_pat_s(self):
        self.assertTrue(within(count_params(preset("pat_s"))["total"], 51e6))

    def test_canonical_tables(self):
        specs = param_specs(preset("ablation"))
        table = [spec.shape for name, spec in specs.items()
                 if name.startswith("stage3.block0.attn.kernel_bias.")]
        self.assertEqual(table, [(38416, 12)])
        table = [spec.shape for name, spec in specs.items()
                 if name.startswith("stage4.block0.attn.kernel_bias.")]
        self.assertEqual(table, [(2401, 24)])

    def test_strict_ordering_and_depth(self):
        for base in ("toy", "tiny"):
            for mode in ("absolute", "vector", "manhattan", "sqeuclid"):
                counts = [count_params(preset(base, bias_mode=mode, bias_sharing=sharing))["total"]
                          for sharing in ("per_head", "common", "none")]
                self.assertGreater(counts[0], counts[1], mode)
                self.assertGreater(counts[1], counts[2], mode)
            config = preset(base)
            for stage in range(4):
                depths = list(config.depths)
                depths[stage] += 1
                self.assertGreater(count_params(config.replace(depths=depths))["total"],
                                   count_params(config)["total"])

    def test_block_bias_counts_instances(self):
        config = preset("toy", block_bias=True)
        counts = count_params(config)
        stages = plan_stages(config)
        expected = sum(len(s.layout.instances) * s.depth for s in stages)
        self.assertEqual(counts["by_group"]["block_bias"], expected)

    def test_matches_init(self):
        config = preset("tiny", block_bias=True, bias_mode="manhattan")
        store = init_params(config)
        self.assertEqual(store.param_count(), count_params(config)["total"])
        check_store(store, config)

class ParamsTestCase(unittest.TestCase):

    def test_deterministic(self):
        config = preset("tiny")
        self.assertTrue(init_params(config, seed=3).equals(init_params(config, seed=3)))
        self.assertFalse(init_params(config, seed=3).equals(init_params(config, seed=4)))

    def test_initialization(self):
        store = init_params(preset("tiny"), seed=0, precision=64)
        w = store["stage1.block0.attn.w_q"].data
        self.assertLessEqual(np.abs(w).max(), 0.04)
        self.assertTrue((store["stage1.block0.attn.b_q"].data == 0).all())
        self.assertTrue((store["embed.norm.gain"].data == 1).all())
        for name in store:
            if ".kernel_bias." in name:
                self.assertTrue((store[name].data == 0).all())

    def test_precision(self):
        store = init_params(preset("tiny"))
        self.assertEqual(store["head.w"].dtype, np.float32)
        self.assertEqual(store.astype(64)["head.w"].dtype, np.float64)

    def test_groups(self):
        store = init_params(preset("tiny", block_bias=True))
        groups = set(param_group(name) for name in store)
        self.assertEqual(groups, set(GROUPS))
        self.assertEqual(param_group("stage2.block0.attn.w_o"), "proj")
        self.assertEqual(param_group("stage2.block0.attn.b_k"), "qkv")
        self.assertEqual(param_group("merge1.norm.gain"), "norm")

    def test_check_store(self):
        config = preset("tiny")
        store = init_params(config)
        with self.assertRaises(ConfigError):
            check_store(store, config.replace(block_bias=True))

class PatchEmbedTestCase(unittest.TestCase):

    def test_token_counts(self):
        self.assertEqual(patchify(np.zeros((1, 3, 224, 224))).shape, (1, 3136, 48))
        out = patch_embed(np.zeros((2, 3, 32, 32)), embed_store(8))
        self.assertEqual(out.shape, (2, 64, 8))

    def test_patch_order(self):
        image = np.arange(3 * 8 * 8, dtype=np.float64).reshape(3, 8, 8)
        patches = patchify(image, precision=64).data[0]
        np.testing.assert_array_equal(patches[1], image[:, 0:4, 4:8].reshape(-1))
        np.testing.assert_array_equal(patches[2], image[:, 4:8, 0:4].reshape(-1))

    def test_zero_image(self):
        store = embed_store(8)
        store["embed.w"].data[...] = 0
        store["embed.norm.shift"].data[...] = np.arange(8)
        out = patch_embed(np.zeros((3, 32, 32)), store).data
        np.testing.assert_array_equal(out[0], np.tile(np.arange(8.0), (64, 1)))

    def test_bad_side(self):
        with self.assertRaises(ShapeMismatch):
            patchify(np.zeros((1, 3, 30, 30)))

class PatBlockTestCase(unittest.TestCase):

    def setUp(self):
        self.config = preset("tiny", image_size=32, kernel="square", core_side=2,
                             heads=[2, 2, 2, 4], block_bias=True, bias_mode="vector")
        self.stage = plan_stages(self.config)[0]

    def test_identity_with_zero_residual(self):
        store = init_params(self.config, zero_residual=True, precision=64)
        x = Tensor(np.random.default_rng(0).standard_normal((2, 64, 8)))
        out = pat_block(x, self.stage, store, "stage1.block0.", block_bias=True)
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape(self):
        store = init_params(self.config, precision=64)
        for stage in plan_stages(self.config):
            x = Tensor(np.ones((stage.height * stage.width, stage.channels)))
            out = pat_block(x, stage, store, "stage{0}.block0.".format(stage.index), block_bias=True)
            self.assertEqual(out.shape, x.shape)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        store = init_params(self.config, precision=64)
        for name in store:
            leaf = name.split(".")[-1]
            if name.startswith("stage1.") and (leaf[:2] == "b_" or leaf in ("b1", "b2", "shift")
                                               or "bias" in name):
                store[name].data[...] = rng.standard_normal(store[name].shape) * 0.1
        x = Tensor(rng.standard_normal((64, 8)), requires_grad=True)
        weights = Tensor(rng.standard_normal((64 * 8, 1)))
        sources = [x] + [t for name, t in store.items() if name.startswith("stage1.block0.")]
        assert_gradients(self, lambda: weighted_loss(
            pat_block(x, self.stage, store, "stage1.block0.", block_bias=True), weights),
            sources, rng)

class PatchMergeTestCase(unittest.TestCase):

    def test_shape(self):
        out = patch_merge(Tensor(np.ones((56 * 56, 4))), 56, 56, merge_store(4), "merge1")
        self.assertEqual(out.shape, (28 * 28, 8))

    def test_group_order(self):
        np.testing.assert_array_equal(merge_index(4, 4)[:2], [[0, 4, 1, 5], [2, 6, 3, 7]])

    def test_identical_groups(self):
        rng = np.random.default_rng(2)
        group = rng.standard_normal((4, 3))
        x = np.zeros((16, 3))
        for n, rows in enumerate(merge_index(4, 4)):
            x[rows] = group
        out = patch_merge(Tensor(x), 4, 4, merge_store(3), "merge1").data
        for row in out[1:]:
            np.testing.assert_array_equal(row, out[0])

    def test_odd(self):
        with self.assertRaises(ShapeMismatch):
            patch_merge(Tensor(np.ones((15, 4))), 5, 3, merge_store(4), "merge1")

    def test_gradients(self):
        rng = np.random.default_rng(3)
        store = merge_store(3, seed=4)
        x = Tensor(rng.standard_normal((2, 16, 3)), requires_grad=True)
        weights = Tensor(rng.standard_normal((2 * 4 * 6, 1)))
        assert_gradients(self, lambda: weighted_loss(patch_merge(x, 4, 4, store, "merge1"), weights),
                         [x] + store.tensors(), rng)

class ForwardTestCase(unittest.TestCase):

    def test_toy_logits(self):
        config = preset("toy")
        store = init_params(config)
        logits = Network(config).forward(store, np.zeros((3, 3, 64, 64), dtype=np.float32))
        self.assertEqual(logits.shape, (3, 10))

    def test_finite_logits(self):
        config = preset("tiny", block_bias=True)
        network = Network(config)
        rng = np.random.default_rng(5)
        for trial in range(20):
            store = init_params(config, seed=trial)
            images = rng.standard_normal((50, 3, 64, 64)) * rng.uniform(0.1, 10)
            logits = network.forward(store, images)
            self.assertTrue(np.isfinite(logits.data).all())

    def test_deterministic(self):
        config = preset("tiny")
        images = np.random.default_rng(6).standard_normal((4, 3, 64, 64))
        a = Network(config).forward(init_params(config, seed=1), images)
        b = Network(config).forward(init_params(config, seed=1), images)
        self.assertEqual(a.data.tobytes(), b.data.tobytes())

    def test_threads(self):
        config = preset("tiny")
        store = init_params(config)
        images = np.random.default_rng(7).standard_normal((4, 3, 64, 64))
        network = Network(config)
        self.assertEqual(network.forward(store, images).data.tobytes(),
                         network.forward(store, images, threads=3).data.tobytes())

    def test_identity_at_init(self):
        config = preset("tiny", block_bias=True)
        store = init_params(config, zero_residual=True, precision=64)
        images = np.random.default_rng(8).standard_normal((2, 3, 64, 64))
        logits = Network(config).forward(store, images)

        x = patch_embed(images, store)
        for stage in plan_stages(config)[:3]:
            x = patch_merge(x, stage.height, stage.width, store, "merge{0}".format(stage.index))
        np.testing.assert_array_equal(logits.data, classifier_head(x, store).data)

    def test_hybrid_bias(self):
        config = preset("tiny", bias_mode=["absolute", "absolute", "vector", "vector"])
        network = Network(config)
        store = init_params(config)
        network.check(store)
        stage, params = network.layer(store, 2)
        self.assertEqual(params.bias.mode, "vector")
        self.assertEqual(stage.kind, "canonical")
        with self.assertRaises(ConfigError):
            network.layer(store, 4)
