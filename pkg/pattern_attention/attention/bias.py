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


from collections import OrderedDict
from functools import lru_cache
import numpy as np
from pattern_attention.errors import ConfigError
from pattern_attention.tensorcore import Tensor, gather_rows, transpose, reshape

BIAS_MODES = ("absolute", "vector", "manhattan", "sqeuclid")
BIAS_SHARING = ("per_head", "common")

@lru_cache(maxsize=None)
def bias_keys(shape, mode):
    """
    Returns (number of parameters, U x S int64 index map) for a shape under
    a bias mode. Constrained modes key every (update, sensor) pair by its
    displacement, |dr|+|dc| or dr^2+dc^2; keys are numbered in sorted
    order. Absolute mode gives every pair its own parameter.
    """
    if mode not in BIAS_MODES:
        raise ConfigError("unknown bias mode {0!r}, expected one of {1}".format(
            mode, ", ".join(BIAS_MODES)))
    sensor_off, core_off = shape.arrays()
    U, S = len(core_off), len(sensor_off)
    if mode == "absolute":
        index_map = np.arange(U * S, dtype=np.int64).reshape(U, S)
        index_map.setflags(write=False)
        return U * S, index_map

    delta = (core_off[:, None, :] - sensor_off[None, :, :]).reshape(-1, 2)
    if mode == "vector":
        keys, inverse = np.unique(delta, axis=0, return_inverse=True)
    elif mode == "manhattan":
        keys, inverse = np.unique(np.abs(delta).sum(axis=1), return_inverse=True)
    else:
        keys, inverse = np.unique((delta * delta).sum(axis=1), return_inverse=True)
    index_map = inverse.reshape(U, S).astype(np.int64)
    index_map.setflags(write=False)
    return len(keys), index_map

class BiasTable(object):
    """
    Kernel position bias of one attention layer.

    Holds, per shape class, a trainable parameter tensor theta of shape
    [keys, slots] (slots = heads for per_head sharing, 1 for common) and the
    index map that spreads it over the U x S bias matrix. Parameters are
    initialized to zero.
    """

    def __init__(self, mode, sharing, heads, shapes, thetas=None, precision=64):
        if mode not in BIAS_MODES:
            raise ConfigError("unknown bias mode {0!r}, expected one of {1}".format(
                mode, ", ".join(BIAS_MODES)))
        if sharing not in BIAS_SHARING:
            raise ConfigError("unknown bias sharing {0!r}, expected one of {1}".format(
                sharing, ", ".join(BIAS_SHARING)))
        self.mode = mode
        self.sharing = sharing
        self.heads = int(heads)
        self.slots = self.heads if sharing == "per_head" else 1
        self.shapes = OrderedDict((shape.shape_id, shape) for shape in shapes)
        self.index_maps = OrderedDict()
        self.thetas = OrderedDict()
        thetas = thetas or {}
        for shape_id, shape in self.shapes.items():
            n_keys, index_map = bias_keys(shape, mode)
            self.index_maps[shape_id] = index_map
            theta = thetas.get(shape_id)
            if theta is None:
                theta = Tensor(np.zeros((n_keys, self.slots)), requires_grad=True,
                               precision=precision)
            elif theta.shape != (n_keys, self.slots):
                raise ConfigError("bias table for {0} has shape {1}, expected {2}".format(
                    shape_id, list(theta.shape), [n_keys, self.slots]))
            self.thetas[shape_id] = theta

    def __contains__(self, shape_id):
        return shape_id in self.thetas

    def param_count(self):
        return sum(theta.size for theta in self.thetas.values())

    def _theta(self, shape_id):
        try:
            return self.thetas[shape_id]
        except KeyError:
            raise ConfigError("no kernel bias table registered for shape class {0}".format(shape_id))

    def materialize(self, shape_id):
        """
        Returns the [slots, U, S] bias tensor of a shape class.
        """
        theta = self._theta(shape_id)
        # [U, S, slots] -> [slots, U, S]
        return transpose(gather_rows(theta, self.index_maps[shape_id]), (2, 0, 1))

    def matrix(self, shape_id, head):
        """
        Returns the U x S bias matrix one head sees. All heads see the
        same matrix under common sharing.
        """
        if not 0 <= head < self.heads:
            raise ConfigError("head {0} out of range for {1} heads".format(head, self.heads))
        slot = head if self.sharing == "per_head" else 0
        full = self.materialize(shape_id)
        _, U, S = full.shape
        return reshape(gather_rows(reshape(full, (self.slots, U * S)), [slot]), (U, S))

    def __repr__(self):
        return "BiasTable({0}, {1}, {2} shape classes, {3} parameters)".format(
            self.mode, self.sharing, len(self.thetas), self.param_count())

def bias_param_count(shape, mode, slots):
    if mode == "absolute":
        return shape.U * shape.S * slots
    return bias_keys(shape, mode)[0] * slots

def bias_matrix(table, shape, head):
    """
    Materializes the U x S kernel bias of one head for a shape (or shape id).
    """
    shape_id = getattr(shape, "shape_id", shape)
    return table.matrix(shape_id, head)
