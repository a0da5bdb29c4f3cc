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

import math
import unittest
import numpy as np
from pattern_attention.errors import ShapeMismatch, NonFiniteError
from pattern_attention.tensorcore import (
    Tensor, GradTape, as_tensor, matmul, affine, add, scale, gelu, transpose, reshape,
    softmax_rows, layer_norm, mean_rows, gather_rows, scatter_rows, cross_entropy)

def check_gradients(test, build, inputs, rng, coords=100, h=1e-3, tol=1e-4):
    """
    Compares tape gradients of the scalar build(*inputs) against central
    differences at randomly sampled coordinates.
    """
    with GradTape() as tape:
        loss = build(*inputs)
    grads = tape.gradient(loss, inputs)
    sizes = [t.size for t in inputs]
    for _ in range(coords):
        k = rng.choice(len(inputs), p=np.array(sizes) / float(sum(sizes)))
        i = rng.integers(inputs[k].size)
        flat = inputs[k].data.reshape(-1)
        old = flat[i]
        flat[i] = old + h
        up = build(*inputs).item()
        flat[i] = old - h
        down = build(*inputs).item()
        flat[i] = old
        numeric = (up - down) / (2 * h)
        analytic = grads[k].reshape(-1)[i]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-2)
        test.assertLessEqual(err, tol, "input {0} coord {1}: {2} vs {3}".format(k, i, analytic, numeric))

def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, precision=64)

def weighted_sum(t, weights):
    # reduces any tensor to a scalar with fixed random weights
    flat = reshape(t, (1, t.size))
    return reshape(matmul(flat, weights), ())

def sum_weights(rng, n):
    return Tensor(rng.standard_normal((n, 1)), precision=64)

class MatmulTestCase(unittest.TestCase):

    def test_identity(self):
        eye = Tensor(np.eye(2))
        np.testing.assert_array_equal(matmul(eye, eye).data, np.eye(2))

    def test_ones(self):
        out = matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))

    def test_triple_loop(self):
        rng = np.random.default_rng(0)
        for m, k, n in ((5, 4, 3), (64, 64, 64), (1, 7, 2)):
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            expected = np.zeros((m, n))
            for i in range(m):
                for j in range(n):
                    for t in range(k):
                        expected[i, j] += a[i, t] * b[t, j]
            out = matmul(Tensor(a), Tensor(b)).data
            np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-15 * k)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        w = sum_weights(rng, 2 * 4 * 3)
        check_gradients(self, lambda a, b: weighted_sum(matmul(a, b), w),
                        [rand(rng, 2, 4, 5), rand(rng, 5, 3)], rng)
        w = sum_weights(rng, 2 * 4 * 3)
        check_gradients(self, lambda a, b: weighted_sum(matmul(a, b), w),
                        [rand(rng, 2, 4, 5), rand(rng, 2, 5, 3)], rng)

class SoftmaxTestCase(unittest.TestCase):

    def test_symmetric_row(self):
        np.testing.assert_array_equal(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_large_values(self):
        out = softmax_rows(Tensor([[1000.0, 1000.0, 999.0]], precision=32)).data
        self.assertTrue(np.isfinite(out).all())
        self.assertAlmostEqual(float(out.sum()), 1.0, delta=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 7))
        a = softmax_rows(Tensor(x)).data
        b = softmax_rows(Tensor(x + 12.5)).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(((a > 0) & (a < 1)).all())

    def test_nan_rejected(self):
        with self.assertRaises(NonFiniteError):
            softmax_rows(Tensor([[0.0, np.nan]]))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        w = sum_weights(rng, 3 * 6)
        check_gradients(self, lambda x: weighted_sum(softmax_rows(x), w), [rand(rng, 3, 6)], rng)

class LayerNormTestCase(unittest.TestCase):

    def test_constant_row(self):
        out = layer_norm(Tensor(np.full((1, 5), 3.0)), Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 5)))

    def test_moments(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((10, 16)) * 3 + 1)
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        self.assertLessEqual(np.abs(out.mean(axis=1)).max(), 1e-6)
        self.assertLessEqual(np.abs(out.var(axis=1) - 1).max(), 1e-4)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        w = sum_weights(rng, 4 * 6)
        check_gradients(self, lambda x, g, s: weighted_sum(layer_norm(x, g, s), w),
                        [rand(rng, 4, 6), rand(rng, 6), rand(rng, 6)], rng)

class GatherScatterTestCase(unittest.TestCase):

    def test_identity_gather(self):
        x = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(gather_rows(Tensor(x), [0, 1, 2, 3]).data, x)

    def test_scatter_of_gather(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((6, 2)))
        perm = rng.permutation(6)
        out = scatter_rows(Tensor(np.zeros((6, 2))), gather_rows(x, perm), perm)
        np.testing.assert_array_equal(out.data, x.data)

    def test_batched_index_shape(self):
        x = Tensor(np.arange(2 * 5 * 3.0).reshape(2, 5, 3))
        out = gather_rows(x, [[0, 1], [4, 4], [2, 3]])
        self.assertEqual(out.shape, (2, 3, 2, 3))
        np.testing.assert_array_equal(out.data[1, 1, 0], x.data[1, 4])

    def test_out_of_range(self):
        with self.assertRaises(ShapeMismatch):
            gather_rows(Tensor(np.zeros((3, 2))), [3])
        with self.assertRaises(ShapeMismatch):
            scatter_rows(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))), [-1])

    def test_duplicate_scatter(self):
        with self.assertRaises(ShapeMismatch):
            scatter_rows(Tensor(np.zeros((3, 2))), Tensor(np.zeros((2, 2))), [1, 1])

    def test_value_semantics(self):
        target = Tensor(np.zeros((3, 2)))
        scatter_rows(target, Tensor(np.ones((1, 2))), [0])
        np.testing.assert_array_equal(target.data, np.zeros((3, 2)))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        w = sum_weights(rng, 2 * 5 * 4)
        idx = np.array([[0, 2, 2], [4, 1, 0]])
        core = np.array([[1, 2], [3, 0]])

        def build(x, wt, b, base):
            gathered = affine(gather_rows(x, idx), wt, b)       # [2, 2, 3, 4]
            picked = gather_rows(gathered, [0, 2])              # [2, 2, 2, 4]
            return weighted_sum(scatter_rows(base, picked, core), w)

        check_gradients(self, build,
                        [rand(rng, 2, 5, 3), rand(rng, 3, 4), rand(rng, 4), rand(rng, 2, 5, 4)], rng)

class ActivationTestCase(unittest.TestCase):

    def test_gelu_zero(self):
        self.assertEqual(gelu(Tensor([0.0])).data[0], 0.0)

    def test_gelu_formula(self):
        x = np.linspace(-3, 3, 13)
        expected = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        np.testing.assert_allclose(gelu(Tensor(x)).data, expected, rtol=1e-14)

    def test_gelu_gradients(self):
        rng = np.random.default_rng(8)
        w = sum_weights(rng, 20)
        check_gradients(self, lambda x: weighted_sum(gelu(x), w), [rand(rng, 4, 5)], rng)

    def test_uniform_cross_entropy(self):
        loss = cross_entropy(Tensor(np.zeros((3, 7))), [0, 3, 6])
        self.assertAlmostEqual(loss.item(), math.log(7), places=12)

    def test_label_out_of_range(self):
        with self.assertRaises(ShapeMismatch):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_cross_entropy_gradients(self):
        rng = np.random.default_rng(9)
        labels = np.array([1, 0, 4])
        check_gradients(self, lambda x: cross_entropy(x, labels), [rand(rng, 3, 5)], rng)

class CompositeTestCase(unittest.TestCase):

    def test_broadcast_add_and_reshapes(self):
        rng = np.random.default_rng(10)
        w = sum_weights(rng, 2 * 3 * 4)

        def build(a, b, c):
            x = add(transpose(reshape(a, (2, 4, 3)), (0, 2, 1)), b)   # b broadcasts [1, 3, 4]
            return weighted_sum(scale(add(x, c), 0.5), w)

        check_gradients(self, build, [rand(rng, 2, 12), rand(rng, 1, 3, 4), rand(rng, 4)], rng)

    def test_mean_rows(self):
        rng = np.random.default_rng(11)
        w = sum_weights(rng, 2 * 3)
        check_gradients(self, lambda x: weighted_sum(mean_rows(x), w), [rand(rng, 2, 5, 3)], rng)

class TapeTestCase(unittest.TestCase):

    def _run(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        with GradTape() as tape:
            loss = cross_entropy(gelu(affine(x, w)), [0, 1, 2, 0])
        return tape, tape.gradient(loss, [x, w]), loss

    def test_replay_determinism(self):
        tape_a, grads_a, loss_a = self._run(3)
        tape_b, grads_b, loss_b = self._run(3)
        self.assertEqual(tape_a.describe(), tape_b.describe())
        self.assertEqual(loss_a.data.tobytes(), loss_b.data.tobytes())
        for a, b in zip(grads_a, grads_b):
            self.assertEqual(a.tobytes(), b.tobytes())

    def test_topological(self):
        tape, _, _ = self._run(4)
        outputs = set(rec.output.id for rec in tape.records)
        produced = set()
        for rec in tape.records:
            for t in rec.inputs:
                # intermediate inputs must have been recorded earlier
                if t.id in outputs:
                    self.assertIn(t.id, produced)
            produced.add(rec.output.id)
        self.assertEqual([r.kind for r in tape.records], ["affine", "gelu", "cross_entropy"])

    def test_unreached_source_gets_zeros(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = Tensor(np.ones((2, 2)), requires_grad=True)
        with GradTape() as tape:
            loss = cross_entropy(x, [0, 1])
        gx, gy = tape.gradient(loss, [x, y])
        np.testing.assert_array_equal(gy, np.zeros((2, 2)))

    def test_no_tape_no_records(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        self.assertFalse(gelu(x).requires_grad)

    def test_precision(self):
        t = as_tensor(np.ones(3), precision=32)
        self.assertEqual(t.dtype, np.float32)
        self.assertEqual(gelu(t).dtype, np.float32)
        self.assertEqual(as_tensor(t, precision=64).dtype, np.float64)
