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

import itertools
import threading
from collections import namedtuple
import numpy as np
from pattern_attention.errors import ShapeMismatch

PRECISIONS = {32: np.float32, 64: np.float64}

_tensor_ids = itertools.count()
_local = threading.local()

def dtype_for(precision):
    try:
        return PRECISIONS[int(precision)]
    except (KeyError, ValueError, TypeError):
        raise ShapeMismatch("precision must be 32 or 64, got {0!r}".format(precision))

def precision_of(array):
    return 64 if np.asarray(array).dtype == np.float64 else 32

class Tensor(object):
    """
    A dense row-major array with value semantics.

    Operations never write into their inputs' storage; every result owns a
    fresh array. Leaves that should receive gradients are created with
    requires_grad=True.
    """

    __slots__ = ("data", "requires_grad", "name", "id")

    def __init__(self, data, requires_grad=False, name=None, precision=None):
        data = np.asarray(data)
        if precision is not None:
            dtype = dtype_for(precision)
        elif data.dtype in (np.float32, np.float64):
            dtype = data.dtype
        else:
            dtype = np.float64
        self.data = np.array(data, dtype=dtype, order="C", copy=True)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.id = next(_tensor_ids)

    @classmethod
    def _wrap(cls, array, requires_grad=False):
        # takes ownership of a freshly computed array, no copy
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(array)
        tensor.requires_grad = requires_grad
        tensor.name = None
        tensor.id = next(_tensor_ids)
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self):
        return precision_of(self.data)

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return self.data.item()

    def astype(self, precision, requires_grad=None):
        return Tensor(self.data, precision=precision, name=self.name,
                      requires_grad=self.requires_grad if requires_grad is None else requires_grad)

    def __repr__(self):
        return "Tensor({0}shape={1}, precision={2}{3})".format(
            "{0}, ".format(self.name) if self.name else "", list(self.shape), self.precision,
            ", requires_grad" if self.requires_grad else "")

def as_tensor(data, precision=64, requires_grad=False, name=None):
    if isinstance(data, Tensor):
        if data.precision == int(precision):
            return data
        data = data.data
    return Tensor(data, requires_grad=requires_grad, name=name, precision=precision)

TapeRecord = namedtuple("TapeRecord", ["kind", "inputs", "output", "saved"])

# kind -> function(record, output_grad) -> tuple of input grads (None to skip)
BACKWARD = {}

def backward_rule(kind):
    def register(func):
        BACKWARD[kind] = func
        return func
    return register

def active_tape():
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None

class GradTape(object):
    """
    Records differentiable operations, in execution order, while active.

    Use as a context manager; tapes are per thread and may be nested (the
    innermost records). gradient() replays the records backwards.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        if not hasattr(_local, "tapes"):
            _local.tapes = []
        _local.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.remove(self)
        return False

    def record(self, kind, inputs, output, saved=None):
        self.records.append(TapeRecord(kind, tuple(inputs), output, saved))

    def __len__(self):
        return len(self.records)

    def describe(self):
        """
        Returns [(kind, input shapes, output shape)] for every record.
        """
        return [(rec.kind, tuple(t.shape for t in rec.inputs), rec.output.shape)
                for rec in self.records]

    def gradient(self, target, sources):
        """
        Returns d(target)/d(source) arrays for each source, in order. Target
        must be a scalar. Sources that target does not depend on get zeros.
        """
        if target.size != 1:
            raise ShapeMismatch("gradient target must be a scalar, got shape {0}".format(
                list(target.shape)))
        wanted = set(t.id for t in sources)
        grads = {target.id: np.ones_like(target.data)}
        kept = {}
        for rec in reversed(self.records):
            out_id = rec.output.id
            if out_id in wanted:
                g = grads.get(out_id)
                if g is not None:
                    kept[out_id] = g
            g = grads.pop(out_id, None)
            if g is None:
                continue
            input_grads = BACKWARD[rec.kind](rec, g)
            for tensor, grad in zip(rec.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.id in grads:
                    grads[tensor.id] = grads[tensor.id] + grad
                else:
                    grads[tensor.id] = grad
        grads.update(kept)
        return [grads[t.id] if t.id in grads else np.zeros_like(t.data) for t in sources]

def record(kind, inputs, output_array, saved=None):
    """
    Wraps an op result and, if a tape is active and any input needs
    gradients, records it.
    """
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    output = Tensor._wrap(output_array, requires_grad=needs_grad)
    if needs_grad:
        tape.record(kind, inputs, output, saved)
    return output

def truncated_normal(rng, shape, std=0.02, precision=64, name=None):
    """
    Samples N(0, std^2) truncated to two standard deviations, redrawing
    out-of-range values, as a trainable leaf tensor.
    """
    values = rng.standard_normal(shape)
    outside = np.abs(values) > 2.0
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return Tensor(values * std, requires_grad=True, name=name, precision=precision)

def zeros(shape, precision=64, name=None, requires_grad=True):
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name, precision=precision)

def ones(shape, precision=64, name=None, requires_grad=True):
    return Tensor(np.ones(shape), requires_grad=requires_grad, name=name, precision=precision)
