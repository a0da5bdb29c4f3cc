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
from pattern_attention.errors import ShapeMismatch, ConfigError
from pattern_attention.tensorcore import (
    Tensor, affine, add, gelu, reshape, layer_norm, mean_rows, gather_rows)
from pattern_attention.attention import (
    AttentionLayerParams, BiasTable, pattern_attention_forward, canonical_attention_forward)
from pattern_attention.model.stages import plan_stages
from pattern_attention.model.params import check_store

PATCH = 4

def _norm(x, store, prefix):
    return layer_norm(x, store[prefix + ".gain"], store[prefix + ".shift"])

def patchify(images, precision=32):
    """
    Cuts [B, channels, side, side] images (or one [channels, side, side]
    image) into non-overlapping 4x4 patches: returns [B, (side/4)^2,
    channels*16], patches row-major over the patch grid.
    """
    images = np.asarray(images.data if isinstance(images, Tensor) else images)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[2] != images.shape[3]:
        raise ShapeMismatch("expected square images [B, channels, side, side], got {0}".format(
            list(images.shape)))
    batch, channels, side = images.shape[:3]
    if side % PATCH:
        raise ShapeMismatch("image side {0} is not divisible by {1}".format(side, PATCH))
    grid = side // PATCH
    patches = images.reshape(batch, channels, grid, PATCH, grid, PATCH)
    patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(batch, grid * grid, channels * PATCH * PATCH)
    return Tensor(patches, precision=precision)

def patch_embed(images, store):
    """
    Linear embedding of 4x4 patches followed by layer norm.
    """
    w = store["embed.w"]
    x = patchify(images, precision=w.precision)
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch("images have {0} values per patch, embedding expects {1}".format(
            x.shape[-1], w.shape[0]))
    return _norm(affine(x, w, store["embed.b"]), store, "embed.norm")

def attention_params(store, prefix, stage):
    """
    Builds the AttentionLayerParams view of one block's tensors in store.
    """
    named = store.with_prefix(prefix + "attn.")
    weights = dict((name, t) for name, t in named.items() if name[:2] in ("w_", "b_"))
    bias = None
    if stage.bias_mode is not None:
        thetas = dict((name.split(".", 1)[1], t) for name, t in named.items()
                      if name.startswith("kernel_bias."))
        bias = BiasTable(stage.bias_mode, stage.bias_sharing, stage.heads,
                         stage.layout.shapes.values(), thetas=thetas)
    return AttentionLayerParams(stage.heads, weights, bias=bias, block_bias=named.get("block_bias"))

def mlp(x, store, prefix):
    hidden = gelu(affine(x, store[prefix + ".w1"], store[prefix + ".b1"]))
    return affine(hidden, store[prefix + ".w2"], store[prefix + ".b2"])

def pat_block(x, stage, store, prefix, winnow=True, block_bias=False, threads=1):
    """
    Pre-norm residual block: x + Attention(LN(x)), then + MLP(LN(.)).
    Pattern stages attend over their layout; full-window stages attend
    over the whole feature map.
    """
    params = attention_params(store, prefix, stage)
    h = _norm(x, store, prefix + "norm1")
    if stage.kind == "pattern":
        attn = pattern_attention_forward(h, stage.layout, params, winnow=winnow,
                                         block_bias=block_bias, threads=threads, plans=stage.plans)
    else:
        attn = canonical_attention_forward(h, stage.height, stage.width, params,
                                           block_bias=block_bias)
    x = add(x, attn)
    return add(x, mlp(_norm(x, store, prefix + "norm2"), store, prefix + "mlp"))

def merge_index(height, width):
    """
    Row indices of the 2x2 groups of an H x W grid: [(H/2)(W/2), 4], each
    group ordered (0,0), (1,0), (0,1), (1,1).
    """
    if height % 2 or width % 2:
        raise ShapeMismatch("patch merging needs even dimensions, got {0}x{1}".format(height, width))
    rows, cols = np.meshgrid(np.arange(0, height, 2), np.arange(0, width, 2), indexing="ij")
    top_left = (rows * width + cols).reshape(-1, 1)
    return top_left + np.array([0, width, 1, width + 1])

def patch_merge(x, height, width, store, prefix):
    """
    Concatenates every 2x2 neighbourhood (4C), normalizes and maps it
    linearly to 2C: [.., H*W, C] -> [.., (H/2)(W/2), 2C].
    """
    if x.shape[-2] != height * width:
        raise ShapeMismatch("input has {0} rows, expected {1}x{2}".format(x.shape[-2], height, width))
    index = merge_index(height, width)
    grouped = gather_rows(x, index)                         # [.., M, 4, C]
    merged = reshape(grouped, x.shape[:-2] + (index.shape[0], 4 * x.shape[-1]))
    return affine(_norm(merged, store, prefix + ".norm"), store[prefix + ".w"])

def classifier_head(x, store):
    return affine(mean_rows(_norm(x, store, "head.norm")), store["head.w"], store["head.b"])

class Network(object):
    """
    A pattern attention classifier for one config: embed, two pattern
    attention stages, two full-window stages with patch merging between
    stages, then norm, average pooling and a linear head.

    Stage layouts and gather plans are computed once per Network.
    """

    def __init__(self, config):
        self.config = config
        self.stages = plan_stages(config)

    def check(self, store):
        check_store(store, self.config, stages=self.stages)

    def blocks(self):
        """
        Yields (layer index, stage, parameter prefix) of every attention
        block in forward order.
        """
        layer = 0
        for stage in self.stages:
            for block in range(stage.depth):
                yield layer, stage, "stage{0}.block{1}.".format(stage.index, block)
                layer += 1

    def layer(self, store, layer):
        """
        Returns (stage, AttentionLayerParams) of the attention layer with a
        0-based global index.
        """
        for index, stage, prefix in self.blocks():
            if index == layer:
                return stage, attention_params(store, prefix, stage)
        raise ConfigError("layer {0} out of range for {1} attention layers".format(
            layer, sum(self.config.depths)))

    def forward(self, store, images, threads=1):
        """
        Returns logits [B, num_classes] for a batch of images.
        """
        config = self.config
        x = patch_embed(images, store)
        for stage in self.stages:
            for block in range(stage.depth):
                prefix = "stage{0}.block{1}.".format(stage.index, block)
                x = pat_block(x, stage, store, prefix, winnow=config.winnow,
                              block_bias=config.block_bias, threads=threads)
            if stage.index < len(self.stages):
                x = patch_merge(x, stage.height, stage.width, store, "merge{0}".format(stage.index))
        return classifier_head(x, store)

def forward(store, config, images, threads=1):
    return Network(config).forward(store, images, threads=threads)
