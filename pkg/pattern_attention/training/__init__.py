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


from .optim import OptimState, adamw_step, cosine_lr
from .data import SynthDataset, batch_indices
from .checkpoint import (
    Checkpoint,
    encode_checkpoint,
    decode_checkpoint,
    save_checkpoint,
    load_checkpoint,
    CHECKPOINT_VERSION)
from .gradcheck import gradcheck, GradcheckReport, relative_gradient_error, condition_params
from .loop import train, evaluate, shard_gradients, TrainResult, METRIC_COLUMNS
