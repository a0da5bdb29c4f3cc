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


import numpy as np
from pattern_attention.errors import ShapeMismatch

def _check_triple(q, k, v):
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeMismatch("Q, K and V must share one 2-D shape, got {0}, {1} and {2}".format(
            list(q.shape), list(k.shape), list(v.shape)))
    return q, k, v

def qkva_oracle(q, k, v):
    """
    Evaluates A[r, c] = sum_j sum_i Q[r, j] K[i, j] V[i, c] as one joint
    sum over (j, i), without softmax or scaling, in 64-bit.
    """
    q, k, v = _check_triple(q, k, v)
    # optimize=False keeps the literal four-index sum instead of
    # contracting pairwise
    return np.einsum("rj,ij,ic->rc", q, k, v, optimize=False)

def linear_attention(q, k, v):
    """
    (Q K^T) V as two matrix products.
    """
    q, k, v = _check_triple(q, k, v)
    return np.matmul(np.matmul(q, k.T), v)

def relative_error(actual, expected):
    """
    max |actual - expected| scaled by max |expected| (1 if that is zero).
    """
    scale = np.abs(expected).max() if expected.size else 0.0
    return float(np.abs(actual - expected).max() / (scale or 1.0)) if expected.size else 0.0

def check_qkva(height, width, trials, seed=0):
    """
    Compares the four-index sum against (Q K^T) V on seeded random inputs
    of shape height x width. Returns a report dict.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        q, k, v = (rng.standard_normal((height, width)) for _ in range(3))
        worst = max(worst, relative_error(qkva_oracle(q, k, v), linear_attention(q, k, v)))
    return {
        "height": height,
        "width": width,
        "trials": trials,
        "seed": seed,
        "max_relative_error": worst,
    }
