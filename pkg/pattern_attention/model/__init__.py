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


from .config import (
    ModelConfig,
    TrainConfig,
    PRESETS,
    preset,
    load_config,
    BIAS_SHARING_MODES,
    KERNELS)
from .stages import StagePlan, plan_stages
from .params import (
    ParamStore,
    ParamSpec,
    param_specs,
    param_shapes,
    param_group,
    init_params,
    count_params,
    check_store,
    GROUPS,
    INIT_STD)
from .network import (
    Network,
    patchify,
    patch_embed,
    pat_block,
    patch_merge,
    merge_index,
    classifier_head,
    attention_params,
    forward)
