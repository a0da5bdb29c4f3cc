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
from collections import namedtuple
from pattern_attention.pattern import plan_octagon_pattern, plan_square_pattern, full_layout
from pattern_attention.attention import gather_plan
from pattern_attention.model.config import PATTERN_STAGES

logger = logging.getLogger("pattern_attention")

StagePlan = namedtuple("StagePlan", [
    "index",            # 1-based stage number
    "height",
    "width",
    "channels",
    "heads",
    "depth",
    "mlp_hidden",
    "kind",             # "pattern" or "canonical"
    "layout",           # PatternLayout; the one-instance full layout for canonical stages
    "plans",            # gather plans of pattern stages, None for canonical stages
    "bias_mode",        # None without kernel bias
    "bias_sharing",
    "bias_slots",
])

def _stage_layout(config, side):
    if config.kernel == "octagon":
        return plan_octagon_pattern(side, side, tuple(config.phase))
    return plan_square_pattern(side, side, config.core_side, config.sensor_radius)

def plan_stages(config):
    """
    Returns the four StagePlans of a config: resolutions halve from
    image_size / 4, the first two stages use pattern attention over the
    configured kernel and the last two attend over the whole feature map.
    """
    stages = []
    for i, (side, channels, heads, depth, hidden) in enumerate(zip(
            config.stage_resolutions(), config.stage_channels(), config.heads, config.depths,
            config.mlp_hidden)):
        if i < PATTERN_STAGES:
            kind = "pattern"
            layout = _stage_layout(config, side)
            plans = gather_plan(layout)
        else:
            kind = "canonical"
            layout = full_layout(side, side)
            plans = None
        stages.append(StagePlan(
            i + 1, side, side, channels, heads, depth, hidden, kind, layout, plans,
            config.stage_bias_mode(i), config.bias_sharing, heads if config.bias_sharing == "per_head" else 1))
        logger.debug("stage {0}: {1}x{1}, C={2}, {3} attention, {4} instances, {5} shape classes".format(
            i + 1, side, channels, kind, len(layout.instances), len(layout.shapes)))
    return stages
