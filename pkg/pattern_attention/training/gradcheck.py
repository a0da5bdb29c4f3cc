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


import logging
from collections import OrderedDict
import numpy as np
import pandas as pd
from pattern_attention.tensorcore import GradTape, cross_entropy
from pattern_attention.model import Network, init_params, param_group, GROUPS, INIT_STD

logger = logging.getLogger("pattern_attention")

DEFAULT_TOL = 1e-4
STEP = 1e-3
JITTER = 0.02
# relative errors are measured against at least this magnitude
ERROR_FLOOR = 1e-6

def relative_gradient_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)

class GradcheckReport(object):
    """
    Outcome of a finite-difference gradient audit.

    groups maps every parameter group to {"status", "coords",
    "max_rel_error"}; status is "checked", "skipped" (frozen) or "absent"
    (the config has no such parameters). failures lists the coordinates
    whose error exceeds the tolerance.
    """

    def __init__(self, tol, groups, failures, coords):
        self.tol = tol
        self.groups = groups
        self.failures = failures
        self.coords = coords

    @property
    def max_rel_error(self):
        errors = [g["max_rel_error"] for g in self.groups.values() if g["status"] == "checked"]
        return max(errors) if errors else 0.0

    @property
    def passed(self):
        return not self.failures and self.max_rel_error <= self.tol

    def to_frame(self):
        return pd.DataFrame.from_dict(self.groups, orient="index")[["status", "coords", "max_rel_error"]]

    def to_dict(self):
        return {
            "passed": self.passed,
            "tol": self.tol,
            "coords": self.coords,
            "max_rel_error": self.max_rel_error,
            "groups": self.groups,
            "failures": self.failures,
        }

def condition_params(store, rng):
    """
    Rescales the weight matrices of `store` in place to std 1/sqrt(fan_in)
    and jitters all-zero tensors. Returns the store.
    """
    for name, tensor in store.items():
        if not tensor.data.any():
            tensor.data[...] = rng.standard_normal(tensor.shape) * JITTER
        elif tensor.ndim == 2 and param_group(name) not in ("kernel_bias", "block_bias"):
            tensor.data[...] /= INIT_STD * np.sqrt(tensor.shape[0])
    return store

def gradcheck(config, seed=0, tol=DEFAULT_TOL, coords=200, batch=2, frozen=()):
    """
    Compares backpropagated gradients of the classification loss with
    central differences (step 1e-3, 64-bit) at `coords` coordinates sampled
    round-robin over the parameter groups, on random images and labels.

    The check is taken at a well-conditioned point: weight matrices are
    rescaled from std 0.02 to about 1/sqrt(fan_in) so every layer norm sees
    O(1) inputs. All-zero tensors are jittered (std 0.02). Groups named in
    `frozen` are not sampled and are reported as skipped.
    """
    rng = np.random.default_rng(seed)
    network = Network(config)
    store = condition_params(init_params(config, seed=seed, precision=64), rng)
    images = rng.standard_normal((batch, config.in_channels, config.image_size, config.image_size))
    labels = rng.integers(0, config.num_classes, batch)

    def loss():
        return cross_entropy(network.forward(store, images), labels)

    with GradTape() as tape:
        value = loss()
    grads = OrderedDict(zip(store.names(), tape.gradient(value, store.tensors())))

    members = OrderedDict((group, []) for group in GROUPS)
    for name in store:
        members[param_group(name)].append(name)
    report = OrderedDict()
    active = []
    for group, names in members.items():
        if not names:
            report[group] = {"status": "absent", "coords": 0, "max_rel_error": 0.0}
        elif group in frozen:
            report[group] = {"status": "skipped", "coords": 0, "max_rel_error": 0.0}
        else:
            report[group] = {"status": "checked", "coords": 0, "max_rel_error": 0.0}
            active.append(group)

    failures = []
    for n in range(coords if active else 0):
        group = active[n % len(active)]
        names = members[group]
        sizes = np.array([store[name].size for name in names], dtype=np.float64)
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = store[name].data.reshape(-1)
        i = int(rng.integers(flat.size))

        old = flat[i]
        flat[i] = old + STEP
        up = loss().item()
        flat[i] = old - STEP
        down = loss().item()
        flat[i] = old
        numeric = (up - down) / (2 * STEP)
        analytic = float(grads[name].reshape(-1)[i])
        error = relative_gradient_error(analytic, numeric)

        entry = report[group]
        entry["coords"] += 1
        entry["max_rel_error"] = max(entry["max_rel_error"], error)
        if error > tol:
            failures.append({"param": name, "index": i, "analytic": analytic,
                             "numeric": numeric, "rel_error": error})

    result = GradcheckReport(tol, report, failures, coords if active else 0)
    for group, entry in report.items():
        logger.debug("gradcheck {0}: {1}, {2} coords, max rel error {3:.3e}".format(
            group, entry["status"], entry["coords"], entry["max_rel_error"]))
    logger.info("gradcheck {0}: max rel error {1:.3e} over {2} coords (tol {3})".format(
        "passed" if result.passed else "FAILED", result.max_rel_error, result.coords, tol))
    return result
