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
import numpy as np
from pattern_attention.errors import ShapeMismatch, NonFiniteError
from pattern_attention.tensorcore.tensor import Tensor, record, backward_rule

GELU_COEF = math.sqrt(2.0 / math.pi)
LAYER_NORM_EPS = 1e-5

def _unbroadcast(grad, shape):
    """
    Sums grad over the axes that broadcasting expanded to reach `shape`.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad

def _index_array(idx):
    return np.asarray(idx, dtype=np.int64)

def _check_rows(idx, n, what):
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)].ravel()[0]
        raise ShapeMismatch("{0} row index {1} out of range for {2} rows".format(what, bad, n))

# ----- matmul -----

def matmul(a, b):
    """
    Batched matrix product over the last two axes: C = A . B.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul shape mismatch: {0} x {1}".format(list(a.shape), list(b.shape)))
    return record("matmul", (a, b), np.matmul(a.data, b.data))

def _flat_weight_grad(x, g):
    # gradient of a 2-D weight shared across all leading axes
    return np.matmul(x.reshape(-1, x.shape[-1]).T, g.reshape(-1, g.shape[-1]))

@backward_rule("matmul")
def _matmul_backward(rec, g):
    a, b = rec.inputs
    ga = gb = None
    if a.requires_grad:
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if b.requires_grad:
        if b.ndim == 2:
            gb = _flat_weight_grad(a.data, g)
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return ga, gb

# ----- affine -----

def affine(x, w, b=None):
    """
    x . W + b over the last axis of x, for a 2-D weight W and 1-D bias b.
    """
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeMismatch("affine shape mismatch: {0} x {1}".format(list(x.shape), list(w.shape)))
    out = np.matmul(x.data, w.data)
    if b is None:
        return record("affine", (x, w), out)
    if b.shape != (w.shape[1],):
        raise ShapeMismatch("affine bias shape {0}, expected {1}".format(list(b.shape), [w.shape[1]]))
    return record("affine", (x, w, b), out + b.data)

@backward_rule("affine")
def _affine_backward(rec, g):
    x, w = rec.inputs[:2]
    gx = np.matmul(g, w.data.T) if x.requires_grad else None
    gw = _flat_weight_grad(x.data, g) if w.requires_grad else None
    if len(rec.inputs) == 2:
        return gx, gw
    gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if rec.inputs[2].requires_grad else None
    return gx, gw, gb

# ----- elementwise -----

def add(a, b):
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("cannot add shapes {0} and {1}".format(list(a.shape), list(b.shape)))
    return record("add", (a, b), out)

@backward_rule("add")
def _add_backward(rec, g):
    a, b = rec.inputs
    return (_unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None)

def scale(x, factor):
    return record("scale", (x,), x.data * x.data.dtype.type(factor), saved=factor)

@backward_rule("scale")
def _scale_backward(rec, g):
    return (g * g.dtype.type(rec.saved),)

def gelu(x):
    """
    GELU, tanh approximation.
    """
    v = x.data
    t = np.tanh(GELU_COEF * (v + 0.044715 * v ** 3))
    return record("gelu", (x,), 0.5 * v * (1.0 + t), saved=t)

@backward_rule("gelu")
def _gelu_backward(rec, g):
    v = rec.inputs[0].data
    t = rec.saved
    dt = (1.0 - t * t) * GELU_COEF * (1.0 + 3 * 0.044715 * v * v)
    return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

# ----- layout -----

def transpose(x, axes):
    axes = tuple(axes)
    return record("transpose", (x,), np.transpose(x.data, axes), saved=axes)

@backward_rule("transpose")
def _transpose_backward(rec, g):
    return (np.transpose(g, np.argsort(rec.saved)),)

def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("cannot reshape {0} to {1}".format(list(x.shape), list(shape)))
    return record("reshape", (x,), out)

@backward_rule("reshape")
def _reshape_backward(rec, g):
    return (g.reshape(rec.inputs[0].shape),)

# ----- reductions -----

def softmax_rows(x):
    """
    Softmax over the last axis, with max subtraction.
    """
    if np.isnan(x.data).any():
        raise NonFiniteError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return record("softmax_rows", (x,), y, saved=y)

@backward_rule("softmax_rows")
def _softmax_backward(rec, g):
    y = rec.saved
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

def layer_norm(x, gain, shift, eps=LAYER_NORM_EPS):
    """
    Normalizes the last axis to zero mean and unit variance, then applies
    the per-channel gain and shift.
    """
    n = x.shape[-1]
    if gain.shape != (n,) or shift.shape != (n,):
        raise ShapeMismatch("layer_norm expects gain/shift of shape [{0}], got {1} and {2}".format(
            n, list(gain.shape), list(shift.shape)))
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    return record("layer_norm", (x, gain, shift), xhat * gain.data + shift.data,
                  saved=(xhat, inv_std))

@backward_rule("layer_norm")
def _layer_norm_backward(rec, g):
    x, gain, shift = rec.inputs
    xhat, inv_std = rec.saved
    n = x.shape[-1]
    gx = None
    if x.requires_grad:
        gxhat = g * gain.data
        gx = (inv_std / n) * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
    ggain = (g * xhat).reshape(-1, n).sum(axis=0) if gain.requires_grad else None
    gshift = g.reshape(-1, n).sum(axis=0) if shift.requires_grad else None
    return gx, ggain, gshift

def mean_rows(x):
    """
    Average over the row (second to last) axis: [..., n, c] -> [..., c].
    """
    return record("mean_rows", (x,), x.data.mean(axis=-2))

@backward_rule("mean_rows")
def _mean_rows_backward(rec, g):
    x = rec.inputs[0]
    n = x.shape[-2]
    return (np.broadcast_to(np.expand_dims(g, -2) / n, x.shape).copy(),)

# ----- row gather / scatter -----

def gather_rows(x, idx):
    """
    Reads rows of x ([..., n, c]) at integer positions idx (any shape):
    returns [..., *idx.shape, c]. Indices may repeat.
    """
    idx = _index_array(idx)
    if x.ndim < 2:
        raise ShapeMismatch("gather_rows needs at least 2 axes, got {0}".format(list(x.shape)))
    _check_rows(idx, x.shape[-2], "gather")
    return record("gather_rows", (x,), np.take(x.data, idx, axis=-2), saved=idx)

@backward_rule("gather_rows")
def _gather_backward(rec, g):
    x = rec.inputs[0]
    idx = rec.saved
    gx = np.zeros(x.shape, dtype=g.dtype)
    g = g.reshape(x.shape[:-2] + (idx.size, x.shape[-1]))
    # scatter-add along the row axis
    np.add.at(np.moveaxis(gx, -2, 0), idx.ravel(), np.moveaxis(g, -2, 0))
    return (gx,)

def scatter_rows(target, x, idx):
    """
    Returns a copy of target ([..., n, c]) whose rows idx are replaced by
    x ([..., *idx.shape, c]). Indices must be distinct.
    """
    idx = _index_array(idx)
    flat = idx.ravel()
    _check_rows(flat, target.shape[-2], "scatter")
    if np.unique(flat).size != flat.size:
        raise ShapeMismatch("duplicate scatter row index")
    expected = target.shape[:-2] + idx.shape + target.shape[-1:]
    if x.shape != expected:
        raise ShapeMismatch("scatter_rows source shape {0}, expected {1}".format(
            list(x.shape), list(expected)))
    out = target.data.copy()
    out[..., flat, :] = x.data.reshape(target.shape[:-2] + (flat.size, target.shape[-1]))
    return record("scatter_rows", (target, x), out, saved=idx)

@backward_rule("scatter_rows")
def _scatter_backward(rec, g):
    target, x = rec.inputs
    flat = rec.saved.ravel()
    gt = None
    if target.requires_grad:
        gt = g.copy()
        gt[..., flat, :] = 0
    gx = g[..., flat, :].reshape(x.shape) if x.requires_grad else None
    return gt, gx

# ----- loss -----

def cross_entropy(logits, labels):
    """
    Mean over the batch of -log softmax(logits)[label].
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch("cross_entropy expects logits [b, k] and labels [b], got {0} and {1}".format(
            list(logits.shape), list(labels.shape)))
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ShapeMismatch("label out of range for {0} classes".format(k))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(labels.size)
    loss = -log_probs[rows, labels].mean()
    return record("cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype),
                  saved=(np.exp(log_probs), labels))

@backward_rule("cross_entropy")
def _cross_entropy_backward(rec, g):
    probs, labels = rec.saved
    grad = probs.copy()
    grad[np.arange(labels.size), labels] -= 1.0
    return (grad * (g / labels.size),)

def constant(array, precision=None):
    """
    A tensor that never receives gradients.
    """
    return Tensor(array, precision=precision)
