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
from collections import OrderedDict
import numpy as np
from pattern_attention.errors import ShapeMismatch, NonFiniteError

class OptimState(object):
    """
    AdamW state: first and second moments per parameter name, the number
    of steps taken and the hyperparameters.
    """

    def __init__(self, m, v, step=0, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.m = OrderedDict(m)
        self.v = OrderedDict(v)
        if list(self.m) != list(self.v):
            raise ShapeMismatch("first and second moments name different parameters")
        for name in self.m:
            if self.m[name].shape != self.v[name].shape:
                raise ShapeMismatch("moments of {0} have shapes {1} and {2}".format(
                    name, list(self.m[name].shape), list(self.v[name].shape)))
        if step < 0:
            raise ShapeMismatch("optimizer step must be >= 0, got {0}".format(step))
        self.step = int(step)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)

    @classmethod
    def create(cls, store, **hyperparameters):
        zeros = [(name, np.zeros_like(t.data)) for name, t in store.items()]
        return cls(zeros, [(name, m.copy()) for name, m in zeros], **hyperparameters)

    @classmethod
    def for_training(cls, store, training):
        return cls.create(store, lr=training.lr, betas=training.betas, eps=training.eps,
                          weight_decay=training.weight_decay)

    def equals(self, other):
        return self.step == other.step and list(self.m) == list(other.m) and all(
            self.m[n].tobytes() == other.m[n].tobytes() and self.v[n].tobytes() == other.v[n].tobytes()
            for n in self.m)

def cosine_lr(base_lr, step, total_steps):
    """
    Cosine decay from base_lr at step 0 towards 0 at total_steps, no warmup.
    """
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / float(total_steps)))

def adamw_step(store, grads, state, lr):
    """
    Applies one AdamW update in place: decoupled weight decay
    (p -= lr * wd * p) followed by the bias-corrected Adam step.

    grads maps parameter names to arrays. Each parameter is updated from
    its own gradient and moments only.
    """
    beta1, beta2 = state.betas
    t = state.step + 1
    for name, param in store.items():
        if name not in grads:
            raise ShapeMismatch("no gradient for parameter {0}".format(name))
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeMismatch("gradient of {0} has shape {1}, parameter has {2}".format(
                name, list(g.shape), list(param.shape)))
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient for parameter {0}".format(name))
        if name not in state.m or state.m[name].shape != param.shape:
            raise ShapeMismatch("optimizer state does not match parameter {0}".format(name))

        dtype = param.dtype.type
        p = param.data
        g = g.astype(param.dtype, copy=False)
        m, v = state.m[name], state.v[name]
        p -= dtype(lr * state.weight_decay) * p
        m *= dtype(beta1)
        m += dtype(1 - beta1) * g
        v *= dtype(beta2)
        v += dtype(1 - beta2) * g * g
        m_hat = m / dtype(1 - beta1 ** t)
        v_hat = v / dtype(1 - beta2 ** t)
        p -= dtype(lr) * m_hat / (np.sqrt(v_hat) + dtype(state.eps))
    state.step = t
    return store, state
