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
from pattern_attention.errors import ConfigError
from pattern_attention.workers import run_ordered

class SynthDataset(object):
    """
    Deterministic class-conditioned images.

    Every class owns a fixed template: a coarse grid of random values
    upsampled to the image size. Sample i has class i % num_classes and is
    that class's template plus Gaussian noise of std `noise`, drawn from a
    generator seeded by (seed, i). Samples are pure functions of
    (seed, index).
    """

    def __init__(self, seed=0, num_classes=10, side=64, noise=0.1, channels=3, size=4096,
                 template_grid=8):
        if num_classes < 1 or size < 1:
            raise ConfigError("dataset needs at least one class and one sample")
        if side % template_grid:
            raise ConfigError("image side {0} is not divisible by the template grid {1}".format(
                side, template_grid))
        self.seed = int(seed)
        self.num_classes = int(num_classes)
        self.side = int(side)
        self.noise = float(noise)
        self.channels = int(channels)
        self.size = int(size)
        rng = np.random.default_rng([self.seed, 0])
        coarse = rng.standard_normal((self.num_classes, self.channels, template_grid, template_grid))
        cell = np.ones((side // template_grid, side // template_grid))
        self.templates = np.stack([np.kron(c, cell) for c in coarse]).astype(np.float32)

    @classmethod
    def for_config(cls, config, seed=None, size=4096):
        return cls(seed=config.seed if seed is None else seed, num_classes=config.num_classes,
                   side=config.image_size, noise=config.training.noise,
                   channels=config.in_channels, size=size)

    def __len__(self):
        return self.size

    def label(self, index):
        return int(index) % self.num_classes

    def sample(self, index):
        """
        Returns (image [channels, side, side] float32, label).
        """
        index = int(index)
        if not 0 <= index < self.size:
            raise ConfigError("sample index {0} out of range for {1} samples".format(index, self.size))
        label = self.label(index)
        rng = np.random.default_rng([self.seed, 1, index])
        noise = rng.standard_normal(self.templates[label].shape).astype(np.float32)
        return self.templates[label] + np.float32(self.noise) * noise, label

    def batch(self, indices, threads=1):
        """
        Returns (images [B, channels, side, side], labels [B]).
        """
        samples = run_ordered(self.sample, list(indices), threads=threads, name="synth_dataset")
        if not samples:
            return np.zeros((0, self.channels, self.side, self.side), np.float32), np.zeros(0, np.int64)
        images, labels = zip(*samples)
        return np.stack(images), np.array(labels, dtype=np.int64)

def batch_indices(seed, step, batch_size, size):
    """
    Sample indices of the batch for a training step: a pure function of
    (seed, step).
    """
    return np.random.default_rng([int(seed), 2, int(step)]).integers(0, size, batch_size)
