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
import math
import unittest
import numpy as np
from pattern_attention.errors import ConfigError, ShapeMismatch
from pattern_attention.geometry import octagon_shape, displacements
from pattern_attention.pattern import (
    PatternLayout, plan_octagon_pattern, plan_square_pattern, full_layout)
from pattern_attention.tensorcore import Tensor, GradTape, reshape, matmul
from pattern_attention.attention import (
    BiasTable, AttentionLayerParams, bias_matrix, bias_keys, full_shape, gather_plan,
    pattern_attention_forward, canonical_attention_forward, qkva_oracle, linear_attention,
    relative_error, check_qkva, flop_count, flop_breakdown, dump_bias, bias_csv)

def make_params(layout, channels, heads, seed, bias_mode="absolute", sharing="per_head",
                block_bias=True, randomize=True):
    """
    Layer parameters for a layout, with non-zero biases unless randomize
    is off.
    """
    rng = np.random.default_rng(seed)
    params = AttentionLayerParams.create(
        channels, heads, rng, shapes=layout.shapes.values(), bias_mode=bias_mode,
        sharing=sharing, num_instances=len(layout.instances), block_bias=block_bias,
        std=0.5)
    if randomize:
        for name, tensor in params.named_tensors().items():
            if not name.startswith("w_"):
                tensor.data[...] = rng.standard_normal(tensor.shape) * 0.5
    return params

def reference_attention(x, params, bias=None):
    """
    Single-window multi-head attention in plain numpy; bias is [slots, N, N].
    """
    w = dict((name, t.data) for name, t in params.weights.items())
    n, c = x.shape
    h, d = params.heads, params.head_dim
    q, k, v = [(x.dot(w["w_" + p]) + w["b_" + p]).reshape(n, h, d).transpose(1, 0, 2)
               for p in ("q", "k", "v")]
    scores = np.matmul(q, k.transpose(0, 2, 1)) / math.sqrt(d)
    if bias is not None:
        scores = scores + bias
    scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
    probs = scores / scores.sum(axis=-1, keepdims=True)
    out = np.matmul(probs, v).transpose(1, 0, 2).reshape(n, c)
    return out.dot(w["w_o"]) + w["b_o"]

def max_abs(a, b):
    return float(np.abs(a - b).max())

class OracleTestCase(unittest.TestCase):

    def test_identity(self):
        eye = np.eye(2)
        np.testing.assert_array_equal(qkva_oracle(eye, eye, eye), eye)

    def test_ones(self):
        ones = np.ones((2, 2))
        np.testing.assert_array_equal(qkva_oracle(ones, ones, ones), np.full((2, 2), 4.0))

    def test_random_6x5(self):
        rng = np.random.default_rng(0)
        q, k, v = (rng.standard_normal((6, 5)) for _ in range(3))
        self.assertLessEqual(relative_error(qkva_oracle(q, k, v), linear_attention(q, k, v)), 1e-12)

    def test_random_dims(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            h, w = rng.integers(1, 33, size=2)
            q, k, v = (rng.standard_normal((h, w)) for _ in range(3))
            self.assertLessEqual(
                relative_error(qkva_oracle(q, k, v), linear_attention(q, k, v)), 1e-12)

    def test_report(self):
        report = check_qkva(6, 5, 100, seed=3)
        self.assertEqual(report["trials"], 100)
        self.assertLessEqual(report["max_relative_error"], 1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            qkva_oracle(np.ones((2, 3)), np.ones((3, 2)), np.ones((2, 3)))

class BiasTableTestCase(unittest.TestCase):

    def test_absolute_octagon_count(self):
        table = BiasTable("absolute", "per_head", 3, [octagon_shape()])
        self.assertEqual(table.thetas[octagon_shape().shape_id].shape, (288, 3))
        self.assertEqual(BiasTable("absolute", "common", 3, [octagon_shape()]).param_count(), 288)

    def test_vector_octagon_count(self):
        shape = octagon_shape()
        n_keys, index_map = bias_keys(shape, "vector")
        distinct, expected_map = displacements(shape)
        self.assertEqual(n_keys, len(distinct))
        self.assertLess(n_keys, 288)
        np.testing.assert_array_equal(index_map, np.array(expected_map))

    def test_canonical_absolute_counts(self):
        self.assertEqual(bias_keys(full_shape(14, 14), "absolute")[0], 38416)
        self.assertEqual(bias_keys(full_shape(7, 7), "absolute")[0], 2401)

    def test_canonical_vector_count(self):
        for h, w in ((4, 4), (7, 7), (3, 5)):
            self.assertEqual(bias_keys(full_shape(h, w), "vector")[0], (2 * h - 1) * (2 * w - 1))

    def test_constraint_tying(self):
        shape = octagon_shape()
        distinct, index_map = displacements(shape)
        for mode, key in (("vector", lambda d: d),
                          ("manhattan", lambda d: abs(d.d_row) + abs(d.d_col)),
                          ("sqeuclid", lambda d: d.d_row ** 2 + d.d_col ** 2)):
            table = BiasTable(mode, "per_head", 2, [shape])
            theta = table.thetas[shape.shape_id]
            theta.data[...] = np.random.default_rng(2).standard_normal(theta.shape)
            for head in range(2):
                matrix = bias_matrix(table, shape, head).data
                seen = {}
                for u, row in enumerate(index_map):
                    for s, n in enumerate(row):
                        value = seen.setdefault(key(distinct[n]), matrix[u, s])
                        self.assertEqual(matrix[u, s], value, mode)

    def test_common_sharing(self):
        shape = octagon_shape()
        table = BiasTable("manhattan", "common", 4, [shape])
        table.thetas[shape.shape_id].data[:, 0] = np.arange(table.param_count())
        first = bias_matrix(table, shape, 0).data
        for head in range(1, 4):
            np.testing.assert_array_equal(bias_matrix(table, shape, head).data, first)

    def test_tied_gradient_accumulates(self):
        shape = octagon_shape()
        table = BiasTable("manhattan", "per_head", 2, [shape])
        n_keys, index_map = bias_keys(shape, "manhattan")
        weights = np.random.default_rng(3).standard_normal((shape.U, shape.S))
        theta = table.thetas[shape.shape_id]
        with GradTape() as tape:
            matrix = bias_matrix(table, shape, 1)
            loss = reshape(matmul(reshape(matrix, (1, shape.U * shape.S)),
                                  Tensor(weights.reshape(-1, 1))), ())
        grad, = tape.gradient(loss, [theta])
        expected = np.bincount(index_map.ravel(), weights=weights.ravel(), minlength=n_keys)
        np.testing.assert_allclose(grad[:, 1], expected, rtol=1e-12)
        np.testing.assert_array_equal(grad[:, 0], np.zeros(n_keys))

    def test_unregistered_shape(self):
        table = BiasTable("absolute", "per_head", 2, [octagon_shape()])
        with self.assertRaises(ConfigError):
            bias_matrix(table, full_shape(2, 2), 0)

    def test_bad_mode(self):
        with self.assertRaises(ConfigError):
            BiasTable("cosine", "per_head", 2, [octagon_shape()])
        with self.assertRaises(ConfigError):
            BiasTable("vector", "per_layer", 2, [octagon_shape()])

class PatternAttentionTestCase(unittest.TestCase):

    def test_full_window_square_equals_reference(self):
        layout = plan_square_pattern(4, 4, 4, 0)
        params = make_params(layout, 8, 2, 0, bias_mode=None, block_bias=False)
        x = np.random.default_rng(1).standard_normal((16, 8))
        out = pattern_attention_forward(Tensor(x), layout, params)
        self.assertLessEqual(max_abs(out.data, reference_attention(x, params)), 1e-12)

    def test_full_layout_equals_canonical(self):
        for mode in ("absolute", "vector", "sqeuclid"):
            layout = full_layout(4, 6)
            params = make_params(layout, 8, 2, 4, bias_mode=mode, block_bias=False)
            x = Tensor(np.random.default_rng(5).standard_normal((2, 24, 8)))
            pattern = pattern_attention_forward(x, layout, params, winnow=False)
            canonical = canonical_attention_forward(x, 4, 6, params)
            self.assertLessEqual(max_abs(pattern.data, canonical.data), 1e-12)

            bias = params.bias.materialize(full_shape(4, 6).shape_id).data
            expected = reference_attention(x.data[1], params, bias)
            self.assertLessEqual(max_abs(canonical.data[1], expected), 1e-12)

    def test_winnow_equivalence(self):
        layouts = [plan_octagon_pattern(28, 28), plan_octagon_pattern(56, 56, (1, 1)),
                   plan_square_pattern(16, 16, 4, 1), plan_square_pattern(9, 7, 2, 2)]
        for draw in range(20):
            layout = layouts[draw % len(layouts)]
            rng = np.random.default_rng(100 + draw)
            mode = ("absolute", "vector", "manhattan", "sqeuclid")[draw % 4]
            sharing = ("per_head", "common")[draw % 2]
            params = make_params(layout, 8, 2, draw, bias_mode=mode, sharing=sharing)
            x = Tensor(rng.standard_normal((layout.num_cells, 8)))
            winnow = pattern_attention_forward(x, layout, params, winnow=True, block_bias=True)
            full = pattern_attention_forward(x, layout, params, winnow=False, block_bias=True)
            self.assertLessEqual(max_abs(winnow.data, full.data), 1e-12)

    def test_locality(self):
        layout = plan_square_pattern(8, 8, 1, 1)
        params = make_params(layout, 8, 2, 6)
        rng = np.random.default_rng(7)
        x = rng.standard_normal((64, 8))
        base = pattern_attention_forward(Tensor(x), layout, params, block_bias=True).data
        for _ in range(100):
            r, c = rng.integers(0, 8, size=2)
            outside = [n for n in range(64) if max(abs(n // 8 - r), abs(n % 8 - c)) > 1]
            perturbed = x.copy()
            perturbed[rng.choice(outside)] += rng.standard_normal(8) * 10
            out = pattern_attention_forward(Tensor(perturbed), layout, params, block_bias=True).data
            self.assertEqual(out[r * 8 + c].tobytes(), base[r * 8 + c].tobytes())

    def test_every_row_written_once(self):
        for layout in (plan_octagon_pattern(28, 28), plan_square_pattern(10, 10, 3, 1)):
            params = make_params(layout, 4, 1, 8)
            counts = np.zeros(layout.num_cells, dtype=np.int64)
            pattern_attention_forward(Tensor(np.ones((layout.num_cells, 4))), layout, params,
                                      write_counts=counts)
            np.testing.assert_array_equal(counts, np.ones(layout.num_cells, dtype=np.int64))

    def test_threads_match_serial(self):
        layout = plan_octagon_pattern(20, 20)
        params = make_params(layout, 8, 2, 9)
        x = Tensor(np.random.default_rng(10).standard_normal((3, 400, 8)))
        serial = pattern_attention_forward(x, layout, params, block_bias=True)
        threaded = pattern_attention_forward(x, layout, params, block_bias=True, threads=4)
        self.assertEqual(serial.data.tobytes(), threaded.data.tobytes())

    def test_gather_plan_covers_grid(self):
        layout = plan_octagon_pattern(12, 12)
        plans = gather_plan(layout)
        cores = np.concatenate([plan.core_idx.ravel() for plan in plans])
        np.testing.assert_array_equal(np.sort(cores), np.arange(144))
        for plan in plans:
            np.testing.assert_array_equal(plan.sensor_idx[:, plan.update_pos], plan.core_idx)

    def test_errors(self):
        layout = plan_octagon_pattern(8, 8)
        params = make_params(layout, 8, 2, 11)
        with self.assertRaises(ShapeMismatch):
            pattern_attention_forward(Tensor(np.ones((63, 8))), layout, params)
        with self.assertRaises(ShapeMismatch):
            pattern_attention_forward(Tensor(np.ones((64, 4))), layout, params)

        other = plan_square_pattern(8, 8, 4, 1)
        with self.assertRaises(ConfigError):
            pattern_attention_forward(Tensor(np.ones((64, 8))), other, make_params(
                layout, 8, 2, 11, block_bias=False))

        bare = make_params(layout, 8, 2, 11, block_bias=False)
        with self.assertRaises(ConfigError):
            pattern_attention_forward(Tensor(np.ones((64, 8))), layout, bare, block_bias=True)
        with self.assertRaises(ConfigError):
            make_params(layout, 8, 3, 11)

    def test_gradients(self):
        layout = plan_octagon_pattern(8, 8)
        rng = np.random.default_rng(12)
        for mode, winnow in (("absolute", True), ("manhattan", False), ("vector", True)):
            params = make_params(layout, 8, 2, 13, bias_mode=mode)
            x = Tensor(rng.standard_normal((64, 8)), requires_grad=True)
            weights = Tensor(rng.standard_normal((64 * 8, 1)))
            sources = [x] + list(params.named_tensors().values())

            def loss():
                out = pattern_attention_forward(x, layout, params, winnow=winnow, block_bias=True)
                return reshape(matmul(reshape(out, (1, 64 * 8)), weights), ())

            with GradTape() as tape:
                value = loss()
            grads = tape.gradient(value, sources)
            for k, source in enumerate(sources):
                flat = source.data.reshape(-1)
                for i in rng.choice(flat.size, size=min(flat.size, 8), replace=False):
                    old = flat[i]
                    flat[i] = old + 1e-3
                    up = loss().item()
                    flat[i] = old - 1e-3
                    down = loss().item()
                    flat[i] = old
                    numeric = (up - down) / 2e-3
                    analytic = grads[k].reshape(-1)[i]
                    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)
                    self.assertLessEqual(err, 1e-4, "{0} source {1}".format(mode, k))

    def test_block_bias_cancels_in_softmax(self):
        layout = plan_octagon_pattern(28, 28)
        params = make_params(layout, 8, 2, 14)
        rng = np.random.default_rng(15)
        x = Tensor(rng.standard_normal((28 * 28, 8)))
        for winnow in (True, False):
            base = pattern_attention_forward(x, layout, params, winnow=winnow, block_bias=True).data
            saved = params.block_bias.data.copy()
            params.block_bias.data[...] = rng.standard_normal(saved.shape) * 5.0
            shifted = pattern_attention_forward(x, layout, params, winnow=winnow, block_bias=True).data
            params.block_bias.data[...] = saved
            np.testing.assert_allclose(shifted, base, rtol=0, atol=1e-12)

        weights = Tensor(rng.standard_normal((28 * 28 * 8, 1)))
        with GradTape() as tape:
            out = pattern_attention_forward(x, layout, params, block_bias=True)
            value = reshape(matmul(reshape(out, (1, 28 * 28 * 8)), weights), ())
        grad, = tape.gradient(value, [params.block_bias])
        self.assertLessEqual(float(np.abs(grad).max()), 1e-12)

class FlopsTestCase(unittest.TestCase):

    def test_octagon_ratio(self):
        layout = plan_octagon_pattern(28, 28)
        frame = flop_breakdown(layout, 96, 3)
        self.assertEqual(frame.loc[octagon_shape().shape_id, "p_stage_ratio"], 0.5)

    def test_octagon_instance_counts(self):
        layout = PatternLayout(6, 6, {octagon_shape().shape_id: octagon_shape()}, [])
        self.assertEqual(flop_count(layout, 8, 2)["total"], 0)
        layout = plan_octagon_pattern(28, 28)
        on = flop_count(layout, 96, 3, winnow=True)
        off = flop_count(layout, 96, 3, winnow=False)
        self.assertEqual(on["proj_madds"], off["proj_madds"])
        self.assertEqual(on["p_stage_madds"], on["av_stage_madds"])
        self.assertLess(on["total"], off["total"])
        row = flop_breakdown(layout, 96, 3).loc[octagon_shape().shape_id]
        per_instance = 12 * 24 * 96 * 2 + 24 * 96 * 96 * 3 + 12 * 96 * 96
        self.assertEqual(row["winnow_madds"], row["instances"] * per_instance)

    def test_head_split_validated(self):
        layout = plan_octagon_pattern(28, 28)
        for heads in (0, 3, -2):
            with self.assertRaisesRegex(ConfigError, "cannot be split"):
                flop_count(layout, 8, heads)
            with self.assertRaisesRegex(ConfigError, "cannot be split"):
                flop_breakdown(layout, 8, heads)
        counts = [flop_count(layout, 8, heads) for heads in (1, 2, 4, 8)]
        for other in counts[1:]:
            self.assertEqual(other, counts[0])

    def test_radius_zero_identical(self):
        layout = plan_square_pattern(16, 16, 4, 0)
        self.assertEqual(flop_count(layout, 16, 2, winnow=True), flop_count(layout, 16, 2, winnow=False))

    def test_additive(self):
        layout = plan_octagon_pattern(20, 20)
        half = len(layout.instances) // 2
        parts = [PatternLayout(20, 20, layout.shapes, layout.instances[:half]),
                 PatternLayout(20, 20, layout.shapes, layout.instances[half:])]
        for winnow in (True, False):
            whole = flop_count(layout, 8, 2, winnow)
            split = [flop_count(part, 8, 2, winnow) for part in parts]
            for key in whole:
                self.assertEqual(whole[key], split[0][key] + split[1][key])

    def test_winnow_never_costs_more(self):
        for layout in (plan_octagon_pattern(9, 13), plan_square_pattern(12, 12, 3, 1),
                       plan_square_pattern(12, 12, 3, 0), full_layout(5, 5)):
            on = flop_count(layout, 8, 2, True)["total"]
            off = flop_count(layout, 8, 2, False)["total"]
            self.assertLessEqual(on, off)
            same = all(shape.U == shape.S for shape in layout.shapes.values())
            self.assertEqual(on == off, same)

class DumpBiasTestCase(unittest.TestCase):

    def test_fresh_absolute_is_zero(self):
        layout = plan_octagon_pattern(28, 28)
        params = make_params(layout, 8, 2, 0, randomize=False)
        frame = dump_bias(params, 1, layout=layout)
        self.assertEqual(frame.shape, (12, 24))
        self.assertTrue((frame.values == 0).all())

    def test_manhattan_unique_values(self):
        layout = plan_octagon_pattern(28, 28)
        params = make_params(layout, 8, 2, 1, bias_mode="manhattan")
        frame = dump_bias(params, 0, layout=layout)
        n_keys = bias_keys(octagon_shape(), "manhattan")[0]
        self.assertLessEqual(len(np.unique(frame.values)), n_keys)

    def test_csv_format(self):
        layout = full_layout(2, 2)
        params = make_params(layout, 4, 2, 2)
        buf = io.StringIO()
        bias_csv(dump_bias(params, 1), buf)
        lines = buf.getvalue().splitlines()
        self.assertEqual(len(lines), 4)
        expected = params.bias.matrix(full_shape(2, 2).shape_id, 1).data
        for line, row in zip(lines, expected):
            self.assertEqual(line, ",".join("%.9e" % v for v in row))

    def test_errors(self):
        layout = plan_octagon_pattern(8, 8)
        with self.assertRaises(ConfigError):
            dump_bias(make_params(layout, 8, 2, 3, bias_mode=None), 0, layout=layout)
        with self.assertRaises(ConfigError):
            dump_bias(make_params(layout, 8, 2, 3), 2, layout=layout)
        with self.assertRaises(ConfigError):
            dump_bias(make_params(layout, 8, 2, 3), 0)
