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


import pandas as pd
from pattern_attention.errors import ConfigError

BIAS_FLOAT_FORMAT = "%.9e"

def dump_bias(params, head, shape_id=None, layout=None):
    """
    Returns the kernel bias one head of an attention layer adds, as a
    U x S DataFrame (rows: update cells, columns: sensor cells, both in
    row-major cell order).

    Without an explicit shape_id the dump covers the shape class with the
    most instances in `layout`, or the only class of a full-window layer.
    """
    table = params.bias
    if table is None:
        raise ConfigError("layer has no kernel bias")
    if shape_id is None:
        if layout is not None:
            shape_id = layout.dominant_shape_id()
        elif len(table.thetas) == 1:
            shape_id = next(iter(table.thetas))
        else:
            raise ConfigError("layer has {0} shape classes, choose one".format(len(table.thetas)))
    return pd.DataFrame(table.matrix(shape_id, head).numpy())

def bias_csv(frame, path_or_buf=None):
    """
    Writes a bias dump as headerless row-major CSV.
    """
    return frame.to_csv(path_or_buf, header=False, index=False, float_format=BIAS_FLOAT_FORMAT)
