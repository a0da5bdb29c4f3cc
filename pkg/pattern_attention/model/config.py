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


import copy
import json
from collections import OrderedDict
from pattern_attention.errors import ConfigError
from pattern_attention.attention import BIAS_MODES

BIAS_SHARING_MODES = ("per_head", "common", "none")
KERNELS = ("octagon", "square")
NUM_STAGES = 4

# stages 1-2 use pattern attention, 3-4 full-window attention
PATTERN_STAGES = 2

# octagon planning needs at least a 6x6 grid
MIN_OCTAGON_SIDE = 6

class TrainConfig(object):
    """
    Desk-scale training settings.
    """

    DEFAULTS = OrderedDict([
        ("batch_size", 32),
        ("lr", 1e-3),
        ("weight_decay", 0.05),
        ("betas", [0.9, 0.999]),
        ("eps", 1e-8),
        ("noise", 0.1),
        ("shards", 1),
        ("eval_samples", 320),
        ("log_every", 10),
    ])

    def __init__(self, **kwargs):
        _reject_unknown(kwargs, self.DEFAULTS, "training")
        for key, default in self.DEFAULTS.items():
            setattr(self, key, copy.deepcopy(kwargs.get(key, default)))
        self.validate()

    def validate(self):
        for key in ("batch_size", "shards", "eval_samples", "log_every"):
            if not _is_int(getattr(self, key)) or getattr(self, key) < 1:
                raise ConfigError("training.{0} must be a positive integer, got {1!r}".format(
                    key, getattr(self, key)))
        if self.batch_size % self.shards:
            raise ConfigError("training.batch_size {0} is not divisible by {1} shards".format(
                self.batch_size, self.shards))
        for key in ("lr", "weight_decay", "eps", "noise"):
            value = getattr(self, key)
            if not _is_number(value) or value < 0:
                raise ConfigError("training.{0} must be a non-negative number, got {1!r}".format(
                    key, value))
        if not isinstance(self.betas, (list, tuple)) or len(self.betas) != 2 or \
                not all(_is_number(b) and 0 <= b < 1 for b in self.betas):
            raise ConfigError("training.betas must be two numbers in [0, 1), got {0!r}".format(
                self.betas))
        self.betas = [float(b) for b in self.betas]

    def to_dict(self):
        return OrderedDict((key, copy.deepcopy(getattr(self, key))) for key in self.DEFAULTS)

class ModelConfig(object):
    """
    Architecture of a pattern attention classifier.

    bias_mode is one mode for every stage or a list of four (for example
    absolute bias in the pattern stages and vector bias in the full-window
    stages). bias_sharing "none" disables kernel bias.
    """

    DEFAULTS = OrderedDict([
        ("in_channels", 3),
        ("embed_dim", 96),
        ("depths", [1, 1, 15, 2]),
        ("heads", [3, 6, 12, 24]),
        ("mlp_ratio", 4),
        ("bias_mode", "absolute"),
        ("bias_sharing", "per_head"),
        ("block_bias", False),
        ("winnow", True),
        ("num_classes", 1000),
        ("image_size", 224),
        ("kernel", "octagon"),
        ("core_side", 4),
        ("sensor_radius", 1),
        ("phase", [0, 0]),
        ("seed", 0),
    ])

    def __init__(self, training=None, **kwargs):
        _reject_unknown(kwargs, self.DEFAULTS, "model")
        for key, default in self.DEFAULTS.items():
            setattr(self, key, copy.deepcopy(kwargs.get(key, default)))
        if training is None:
            training = TrainConfig()
        elif isinstance(training, dict):
            training = TrainConfig(**training)
        elif not isinstance(training, TrainConfig):
            raise ConfigError("training must be a JSON object, got {0}".format(type(training).__name__))
        self.training = training
        self.validate()

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object, got {0}".format(type(data).__name__))
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except ValueError as e:
            raise ConfigError("config is not valid JSON: {0}".format(e))
        return cls.from_dict(data)

    def to_dict(self):
        data = OrderedDict((key, copy.deepcopy(getattr(self, key))) for key in self.DEFAULTS)
        data["training"] = self.training.to_dict()
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return ModelConfig.from_dict(data)

    def validate(self):
        for key in ("in_channels", "embed_dim", "num_classes", "image_size", "core_side"):
            if not _is_int(getattr(self, key)) or getattr(self, key) < 1:
                raise ConfigError("{0} must be a positive integer, got {1!r}".format(
                    key, getattr(self, key)))
        for key, minimum in (("depths", 0), ("heads", 1)):
            values = getattr(self, key)
            if not isinstance(values, list) or len(values) != NUM_STAGES or \
                    not all(_is_int(v) and v >= minimum for v in values):
                raise ConfigError("{0} must be a list of {1} integers >= {2}, got {3!r}".format(
                    key, NUM_STAGES, minimum, values))
        if not _is_number(self.mlp_ratio) or self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive, got {0!r}".format(self.mlp_ratio))
        if self.image_size % 32:
            raise ConfigError("image_size must be divisible by 32, got {0}".format(self.image_size))
        for stage, (channels, heads) in enumerate(zip(self.stage_channels(), self.heads)):
            if channels % heads:
                raise ConfigError("stage {0} width {1} is not divisible by {2} heads".format(
                    stage + 1, channels, heads))

        modes = self.bias_mode if isinstance(self.bias_mode, list) else [self.bias_mode] * NUM_STAGES
        if len(modes) != NUM_STAGES or not all(mode in BIAS_MODES for mode in modes):
            raise ConfigError("bias_mode must be one of {0} or a list of {1}, got {2!r}".format(
                ", ".join(BIAS_MODES), NUM_STAGES, self.bias_mode))
        if self.bias_sharing not in BIAS_SHARING_MODES:
            raise ConfigError("bias_sharing must be one of {0}, got {1!r}".format(
                ", ".join(BIAS_SHARING_MODES), self.bias_sharing))
        for key in ("block_bias", "winnow"):
            if not isinstance(getattr(self, key), bool):
                raise ConfigError("{0} must be true or false".format(key))

        if self.kernel not in KERNELS:
            raise ConfigError("kernel must be one of {0}, got {1!r}".format(
                ", ".join(KERNELS), self.kernel))
        if not _is_int(self.sensor_radius) or self.sensor_radius < 0:
            raise ConfigError("sensor_radius must be a non-negative integer, got {0!r}".format(
                self.sensor_radius))
        if not isinstance(self.phase, list) or len(self.phase) != 2 or \
                not all(_is_int(p) for p in self.phase):
            raise ConfigError("phase must be a list of two integers, got {0!r}".format(self.phase))
        if not _is_int(self.seed):
            raise ConfigError("seed must be an integer, got {0!r}".format(self.seed))
        if self.kernel == "octagon":
            sides = self.stage_resolutions()[:PATTERN_STAGES]
            if min(sides) < MIN_OCTAGON_SIDE:
                raise ConfigError(
                    "octagon kernel needs pattern stages of at least {0}x{0}, image_size {1} "
                    "gives {2}".format(MIN_OCTAGON_SIDE, self.image_size, sides))

    def stage_resolutions(self):
        return [self.image_size // 4 // 2 ** i for i in range(NUM_STAGES)]

    def stage_channels(self):
        return [self.embed_dim * 2 ** i for i in range(NUM_STAGES)]

    def stage_bias_mode(self, stage):
        """
        Kernel bias mode of a stage (0-based), or None without kernel bias.
        """
        if self.bias_sharing == "none":
            return None
        return self.bias_mode[stage] if isinstance(self.bias_mode, list) else self.bias_mode

    @property
    def mlp_hidden(self):
        return [int(self.mlp_ratio * c) for c in self.stage_channels()]

    def __eq__(self, other):
        return isinstance(other, ModelConfig) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "ModelConfig(C={0}, depths={1}, heads={2}, bias={3}/{4}, side={5})".format(
            self.embed_dim, self.depths, self.heads, self.bias_mode, self.bias_sharing,
            self.image_size)

def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)

def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)

def _reject_unknown(kwargs, defaults, what):
    unknown = sorted(set(kwargs) - set(defaults))
    if unknown:
        raise ConfigError("unknown {0} config key(s): {1}".format(what, ", ".join(unknown)))

PRESETS = OrderedDict([
    ("pat_s", {"embed_dim": 96, "depths": [1, 1, 15, 2], "heads": [3, 6, 12, 24]}),
    ("pat_b", {"embed_dim": 128, "depths": [1, 1, 15, 2], "heads": [4, 8, 16, 32]}),
    ("ablation", {"embed_dim": 96, "depths": [1, 1, 15, 1], "heads": [3, 6, 12, 24]}),
    ("toy", {"embed_dim": 24, "depths": [1, 1, 2, 1], "heads": [1, 2, 4, 8],
             "image_size": 64, "num_classes": 10}),
    ("tiny", {"embed_dim": 8, "depths": [1, 1, 1, 1], "heads": [1, 2, 2, 4],
              "image_size": 64, "num_classes": 10}),
])

def preset(name, **overrides):
    """
    Returns a built-in configuration, optionally with some fields changed.
    """
    try:
        data = dict(PRESETS[name])
    except KeyError:
        raise ConfigError("unknown preset {0!r}, expected one of {1}".format(
            name, ", ".join(PRESETS)))
    data.update(overrides)
    return ModelConfig.from_dict(data)

def load_config(path):
    """
    Reads a UTF-8 JSON model configuration.
    """
    with open(path, "rb") as f:
        data = f.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ConfigError("{0}: not UTF-8 at byte {1} ({2})".format(path, e.start, e.reason))
    return ModelConfig.from_json(text)
