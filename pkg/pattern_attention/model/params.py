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


from collections import OrderedDict, namedtuple
import numpy as np
from pattern_attention.errors import ConfigError
from pattern_attention.tensorcore import Tensor, truncated_normal
from pattern_attention.attention import bias_param_count
from pattern_attention.model.stages import plan_stages

INIT_STD = 0.02

# init: "normal" (truncated normal), "zeros" or "ones"
ParamSpec = namedtuple("ParamSpec", ["shape", "init", "group"])

# parameter groups reported by count_params and sampled by gradient checks
GROUPS = ("embed", "qkv", "proj", "kernel_bias", "block_bias", "mlp", "norm", "merge", "head")

class ParamStore(object):
    """
    An ordered map of hierarchical parameter name to Tensor.

    Enumeration order is the order parameters were added, which init_params
    fixes for a given config.
    """

    def __init__(self, items=()):
        self._tensors = OrderedDict()
        for name, tensor in items:
            self.add(name, tensor)

    def add(self, name, tensor):
        if name in self._tensors:
            raise ConfigError("duplicate parameter {0}".format(name))
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise ConfigError("no parameter named {0}".format(name))

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def get(self, name, default=None):
        return self._tensors.get(name, default)

    def names(self):
        return list(self._tensors)

    def items(self):
        return list(self._tensors.items())

    def tensors(self):
        return list(self._tensors.values())

    def with_prefix(self, prefix):
        """
        Returns an OrderedDict of (name without prefix): tensor.
        """
        return OrderedDict(
            (name[len(prefix):], t) for name, t in self._tensors.items() if name.startswith(prefix))

    def param_count(self):
        return sum(t.size for t in self._tensors.values())

    def astype(self, precision):
        return ParamStore((name, t.astype(precision)) for name, t in self._tensors.items())

    def copy(self):
        return ParamStore((name, Tensor(t.data, requires_grad=t.requires_grad))
                          for name, t in self._tensors.items())

    def equals(self, other):
        """
        True if both stores hold the same names with bitwise-equal values.
        """
        return self.names() == other.names() and all(
            a.dtype == b.dtype and a.shape == b.shape and a.data.tobytes() == b.data.tobytes()
            for a, b in zip(self.tensors(), other.tensors()))

    def __repr__(self):
        return "ParamStore({0} tensors, {1} parameters)".format(len(self), self.param_count())

def param_group(name):
    """
    Maps a parameter name to its group in GROUPS.
    """
    parts = name.split(".")
    if parts[0] == "embed":
        return "norm" if parts[1] == "norm" else "embed"
    if parts[0] == "head":
        return "norm" if parts[1] == "norm" else "head"
    if parts[0].startswith("merge"):
        return "norm" if parts[1] == "norm" else "merge"
    # stageN.blockK.<sublayer>...
    sublayer, leaf = parts[2], parts[3]
    if sublayer.startswith("norm"):
        return "norm"
    if sublayer == "mlp":
        return "mlp"
    if leaf in ("kernel_bias", "block_bias"):
        return leaf
    return "proj" if leaf.endswith("_o") else "qkv"

def _norm_specs(prefix, channels):
    return [(prefix + ".gain", ParamSpec((channels,), "ones", "norm")),
            (prefix + ".shift", ParamSpec((channels,), "zeros", "norm"))]

def param_specs(config, zero_residual=False, stages=None):
    """
    Returns an OrderedDict of name: ParamSpec for every model parameter,
    in enumeration order. No tensors are allocated.
    """
    stages = plan_stages(config) if stages is None else stages
    residual_init = "zeros" if zero_residual else "normal"
    C = config.embed_dim
    specs = [
        ("embed.w", ParamSpec((config.in_channels * 16, C), "normal", "embed")),
        ("embed.b", ParamSpec((C,), "zeros", "embed")),
    ] + _norm_specs("embed.norm", C)

    for stage in stages:
        c, hidden = stage.channels, stage.mlp_hidden
        for block in range(stage.depth):
            prefix = "stage{0}.block{1}.".format(stage.index, block)
            specs += _norm_specs(prefix + "norm1", c)
            for name in ("q", "k", "v", "o"):
                init = residual_init if name == "o" else "normal"
                group = "proj" if name == "o" else "qkv"
                specs.append((prefix + "attn.w_" + name, ParamSpec((c, c), init, group)))
                specs.append((prefix + "attn.b_" + name, ParamSpec((c,), "zeros", group)))
            if stage.bias_mode is not None:
                for shape in stage.layout.shapes.values():
                    n = bias_param_count(shape, stage.bias_mode, 1)
                    specs.append((prefix + "attn.kernel_bias." + shape.shape_id,
                                  ParamSpec((n, stage.bias_slots), "zeros", "kernel_bias")))
            if config.block_bias:
                specs.append((prefix + "attn.block_bias",
                              ParamSpec((len(stage.layout.instances), 1), "zeros", "block_bias")))
            specs += _norm_specs(prefix + "norm2", c)
            specs += [
                (prefix + "mlp.w1", ParamSpec((c, hidden), "normal", "mlp")),
                (prefix + "mlp.b1", ParamSpec((hidden,), "zeros", "mlp")),
                (prefix + "mlp.w2", ParamSpec((hidden, c), residual_init, "mlp")),
                (prefix + "mlp.b2", ParamSpec((c,), "zeros", "mlp")),
            ]
        if stage.index < len(stages):
            prefix = "merge{0}".format(stage.index)
            specs += _norm_specs(prefix + ".norm", 4 * c)
            specs.append((prefix + ".w", ParamSpec((4 * c, 2 * c), "normal", "merge")))

    last = stages[-1].channels
    specs += _norm_specs("head.norm", last)
    specs += [
        ("head.w", ParamSpec((last, config.num_classes), "normal", "head")),
        ("head.b", ParamSpec((config.num_classes,), "zeros", "head")),
    ]
    return OrderedDict(specs)

def param_shapes(config):
    return OrderedDict((name, spec.shape) for name, spec in param_specs(config).items())

def init_params(config, seed=None, zero_residual=False, precision=32, stages=None):
    """
    Creates the parameters of a model: truncated-normal (std 0.02) weights,
    zero biases and position biases, unit norm gains. zero_residual
    zero-initializes every block's attention output projection and second
    MLP layer, which makes every block the identity.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    store = ParamStore()
    for name, spec in param_specs(config, zero_residual, stages).items():
        if spec.init == "normal":
            tensor = truncated_normal(rng, spec.shape, INIT_STD, precision=64)
        else:
            fill = np.ones if spec.init == "ones" else np.zeros
            tensor = Tensor(fill(spec.shape), requires_grad=True)
        store.add(name, tensor.astype(precision) if precision != 64 else tensor)
    return store

def count_params(config):
    """
    Returns {"total": n, "by_group": {"weights", "kernel_bias", "block_bias"}}
    from parameter shapes alone.
    """
    by_group = OrderedDict([("weights", 0), ("kernel_bias", 0), ("block_bias", 0)])
    for spec in param_specs(config).values():
        group = spec.group if spec.group in ("kernel_bias", "block_bias") else "weights"
        by_group[group] += int(np.prod(spec.shape))
    return {"total": sum(by_group.values()), "by_group": dict(by_group)}

def check_store(store, config, stages=None):
    """
    Raises ConfigError unless store holds exactly the parameters of config.
    """
    specs = param_specs(config, stages=stages)
    if store.names() != list(specs):
        missing = sorted(set(specs) - set(store.names()))
        extra = sorted(set(store.names()) - set(specs))
        raise ConfigError("parameters do not match config (missing {0}, unexpected {1})".format(
            missing[:3], extra[:3]))
    for name, spec in specs.items():
        if store[name].shape != spec.shape:
            raise ConfigError("parameter {0} has shape {1}, config expects {2}".format(
                name, list(store[name].shape), list(spec.shape)))
