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


import math
from collections import namedtuple, OrderedDict
import numpy as np
from pattern_attention.errors import ConfigError, ShapeMismatch
from pattern_attention.geometry import CellSet, KernelShape
from pattern_attention.tensorcore import (
    active_tape, truncated_normal, zeros, affine, add, scale, transpose, reshape,
    matmul, softmax_rows, gather_rows, scatter_rows, constant)
from pattern_attention.workers import run_ordered
from pattern_attention.attention.bias import BiasTable

PROJECTIONS = ("q", "k", "v", "o")

ClassPlan = namedtuple("ClassPlan", [
    "shape_id",     # shape class
    "positions",    # [n] instance positions in the layout
    "sensor_idx",   # [n, S] grid rows read by each instance
    "core_idx",     # [n, U] grid rows written by each instance
    "update_pos",   # [U] positions of the core cells inside the sensor ordering
])

def gather_plan(layout):
    """
    Returns one ClassPlan per shape class of a validated layout, ordered by
    shape id. Rows are numbered row-major over the grid.
    """
    plans = []
    for shape_id, positions in layout.instance_groups().items():
        shape = layout.shapes[shape_id]
        sensor_off, core_off = shape.arrays()
        anchors = layout.anchors(positions)
        sensor = anchors[:, None, :] + sensor_off[None, :, :]
        core = anchors[:, None, :] + core_off[None, :, :]
        plans.append(ClassPlan(
            shape_id,
            np.asarray(positions, dtype=np.int64),
            sensor[..., 0] * layout.width + sensor[..., 1],
            core[..., 0] * layout.width + core[..., 1],
            np.asarray(shape.update_positions(), dtype=np.int64)))
    return plans

def full_shape(height, width):
    """
    The kernel shape whose core and sensor are the whole H x W grid.
    """
    grid = CellSet.from_rect(height, width)
    return KernelShape(grid, grid)

class AttentionLayerParams(object):
    """
    Parameters of one multi-head attention layer: the q/k/v/o projections
    (C x C weights with biases), an optional kernel BiasTable and an
    optional block bias of one scalar per kernel instance ([n, 1]).
    """

    def __init__(self, heads, weights, bias=None, block_bias=None):
        self.heads = int(heads)
        self.weights = OrderedDict()
        for name in PROJECTIONS:
            for kind in ("w", "b"):
                key = "{0}_{1}".format(kind, name)
                if key not in weights:
                    raise ConfigError("attention parameters missing {0}".format(key))
                self.weights[key] = weights[key]
        channels = self.weights["w_q"].shape[0]
        if self.heads < 1 or channels % self.heads:
            raise ConfigError("channels {0} not divisible by {1} heads".format(channels, self.heads))
        for key, tensor in self.weights.items():
            expected = (channels, channels) if key.startswith("w") else (channels,)
            if tensor.shape != expected:
                raise ShapeMismatch("{0} has shape {1}, expected {2}".format(
                    key, list(tensor.shape), list(expected)))
        if bias is not None and bias.heads != self.heads:
            raise ConfigError("bias table built for {0} heads, layer has {1}".format(
                bias.heads, self.heads))
        self.bias = bias
        self.block_bias = block_bias

    @classmethod
    def create(cls, channels, heads, rng, shapes=(), bias_mode=None, sharing="per_head",
               num_instances=0, block_bias=False, std=0.02, zero_proj=False, precision=64):
        """
        Initializes weights truncated-normal (std), biases and all position
        bias parameters at zero. bias_mode None (or sharing "none") builds no
        kernel bias.
        """
        weights = OrderedDict()
        for name in PROJECTIONS:
            if name == "o" and zero_proj:
                weights["w_o"] = zeros((channels, channels), precision=precision)
            else:
                weights["w_" + name] = truncated_normal(rng, (channels, channels), std, precision)
            weights["b_" + name] = zeros((channels,), precision=precision)
        table = None
        if bias_mode is not None and sharing != "none":
            table = BiasTable(bias_mode, sharing, heads, shapes, precision=precision)
        block = zeros((num_instances, 1), precision=precision) if block_bias else None
        return cls(heads, weights, bias=table, block_bias=block)

    @property
    def channels(self):
        return self.weights["w_q"].shape[0]

    @property
    def head_dim(self):
        return self.channels // self.heads

    def named_tensors(self):
        """
        Returns an OrderedDict of local name: tensor, in a fixed order.
        """
        named = OrderedDict(self.weights)
        if self.bias is not None:
            for shape_id, theta in self.bias.thetas.items():
                named["kernel_bias." + shape_id] = theta
        if self.block_bias is not None:
            named["block_bias"] = self.block_bias
        return named

    def __repr__(self):
        return "AttentionLayerParams(C={0}, heads={1}, bias={2}, block_bias={3})".format(
            self.channels, self.heads, self.bias, self.block_bias is not None)

def _as_batch(x):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeMismatch("attention expects [N, C] or [B, N, C] input, got {0}".format(list(x.shape)))
    return x, False

def _split_heads(t, heads):
    # [..., R, C] -> [..., heads, R, d]
    lead, rows, channels = t.shape[:-2], t.shape[-2], t.shape[-1]
    split = reshape(t, lead + (rows, heads, channels // heads))
    n = len(lead)
    return transpose(split, tuple(range(n)) + (n + 1, n, n + 2))

def _merge_heads(t):
    # [..., heads, R, d] -> [..., R, C]
    lead, heads, rows, d = t.shape[:-3], t.shape[-3], t.shape[-2], t.shape[-1]
    n = len(lead)
    return reshape(transpose(t, tuple(range(n)) + (n + 1, n, n + 2)), lead + (rows, heads * d))

def _attend(q, k, v, heads, biases):
    """
    softmax(q k^T / sqrt(d) + biases) v for [..., R, C] queries and
    [..., S, C] keys and values; returns [..., heads, R, d].
    """
    q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    n = k.ndim
    scores = scale(matmul(q, transpose(k, tuple(range(n - 2)) + (n - 1, n - 2))),
                   1.0 / math.sqrt(k.shape[-1]))
    for bias in biases:
        scores = add(scores, bias)
    return matmul(softmax_rows(scores), v)

def _class_update(x, plan, params, winnow, block_bias):
    """
    Attention output, before W_o, of every instance of one shape class:
    returns [B, n, U, C] rows destined for plan.core_idx.
    """
    w = params.weights
    xs = gather_rows(x, plan.sensor_idx)                                    # [B, n, S, C]
    xq = gather_rows(x, plan.core_idx) if winnow else xs
    q = affine(xq, w["w_q"], w["b_q"])
    k = affine(xs, w["w_k"], w["b_k"])
    v = affine(xs, w["w_v"], w["b_v"])

    biases = []
    if params.bias is not None:
        bias = params.bias.materialize(plan.shape_id)                      # [slots, U, S]
        if not winnow:
            # only update rows carry kernel bias; the others are discarded
            slots, U, S = bias.shape
            base = constant(np.zeros((slots, S, S)), precision=bias.precision)
            bias = scatter_rows(base, bias, plan.update_pos)
        biases.append(bias)
    if block_bias:
        n = len(plan.positions)
        biases.append(reshape(gather_rows(params.block_bias, plan.positions), (n, 1, 1, 1)))

    out = _attend(q, k, v, params.heads, biases)                            # [B, n, h, R, d]
    if not winnow:
        out = gather_rows(out, plan.update_pos)
    return _merge_heads(out)

def pattern_attention_forward(x, layout, params, winnow=True, block_bias=False,
                              write_counts=None, threads=1, plans=None):
    """
    Pattern multi-head self-attention of x ([N, C] or [B, N, C], rows
    row-major over the layout grid).

    Every kernel instance reads its sensor rows and writes its core rows.
    With winnow, queries (and so the score matrix) are computed for the
    core rows only; otherwise the full S x S attention is computed and the
    non-core rows are dropped. Instances of one shape class are evaluated
    together; with threads > 1 and no active gradient tape, shape classes
    run concurrently.

    Pass a zeroed int array of length N as write_counts to count how many
    times each output row is written.
    """
    x, squeeze = _as_batch(x)
    batch, rows, channels = x.shape
    if rows != layout.num_cells:
        raise ShapeMismatch("input has {0} rows, layout has {1} cells".format(rows, layout.num_cells))
    if channels != params.channels:
        raise ShapeMismatch("input has {0} channels, parameters expect {1}".format(
            channels, params.channels))
    if block_bias:
        if params.block_bias is None:
            raise ConfigError("block bias requested but the layer has none")
        if params.block_bias.shape != (len(layout.instances), 1):
            raise ShapeMismatch("block bias has shape {0}, layout has {1} instances".format(
                list(params.block_bias.shape), len(layout.instances)))
    plans = gather_plan(layout) if plans is None else plans
    if params.bias is not None:
        for plan in plans:
            if plan.shape_id not in params.bias:
                raise ConfigError("no kernel bias table registered for shape class {0}".format(
                    plan.shape_id))

    if active_tape() is not None:
        threads = 1
    updates = run_ordered(
        lambda plan: _class_update(x, plan, params, winnow, block_bias),
        plans, threads=threads, name="pattern_attention")

    out = constant(np.zeros(x.shape), precision=x.precision)
    for plan, update in zip(plans, updates):
        out = scatter_rows(out, update, plan.core_idx)
        if write_counts is not None:
            np.add.at(write_counts, plan.core_idx.ravel(), 1)
    out = affine(out, params.weights["w_o"], params.weights["b_o"])
    return reshape(out, (rows, channels)) if squeeze else out

def canonical_attention_forward(x, height, width, params, block_bias=False):
    """
    Full-window multi-head self-attention over an H x W grid: every row
    attends to every row. A kernel bias, if present, must be registered for
    full_shape(height, width) and is N x N per slot.
    """
    x, squeeze = _as_batch(x)
    batch, rows, channels = x.shape
    if rows != height * width:
        raise ShapeMismatch("input has {0} rows, expected {1}x{2}".format(rows, height, width))
    if channels != params.channels:
        raise ShapeMismatch("input has {0} channels, parameters expect {1}".format(
            channels, params.channels))
    w = params.weights
    biases = []
    if params.bias is not None:
        biases.append(params.bias.materialize(full_shape(height, width).shape_id))
    if block_bias:
        if params.block_bias is None or params.block_bias.shape != (1, 1):
            raise ShapeMismatch("full-window attention needs a [1, 1] block bias")
        biases.append(reshape(params.block_bias, (1, 1, 1)))
    out = _attend(affine(x, w["w_q"], w["b_q"]), affine(x, w["w_k"], w["b_k"]),
                  affine(x, w["w_v"], w["b_v"]), params.heads, biases)
    out = affine(_merge_heads(out), w["w_o"], w["b_o"])
    return reshape(out, (rows, channels)) if squeeze else out
