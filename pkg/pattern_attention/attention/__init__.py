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


from .bias import (
    BiasTable,
    bias_keys,
    bias_matrix,
    bias_param_count,
    BIAS_MODES,
    BIAS_SHARING)
from .layer import (
    AttentionLayerParams,
    ClassPlan,
    gather_plan,
    full_shape,
    pattern_attention_forward,
    canonical_attention_forward)
from .oracle import (
    qkva_oracle,
    linear_attention,
    relative_error,
    check_qkva)
from .flops import (
    flop_count,
    flop_breakdown)
from .dump import (
    dump_bias,
    bias_csv,
    BIAS_FLOAT_FORMAT)
