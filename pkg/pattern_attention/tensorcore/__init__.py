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

from .tensor import (
    Tensor,
    GradTape,
    TapeRecord,
    as_tensor,
    active_tape,
    truncated_normal,
    zeros,
    ones,
    dtype_for,
    precision_of,
    PRECISIONS)
from .ops import (
    matmul,
    affine,
    add,
    scale,
    gelu,
    transpose,
    reshape,
    softmax_rows,
    layer_norm,
    mean_rows,
    gather_rows,
    scatter_rows,
    cross_entropy,
    constant,
    LAYER_NORM_EPS)
