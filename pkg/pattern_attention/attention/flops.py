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


from collections import OrderedDict
import pandas as pd
from pattern_attention.errors import ConfigError

def _instance_madds(U, S, channels, winnow):
    rows = U if winnow else S
    # summed over heads: heads * d = channels
    p_stage = rows * S * channels
    return p_stage, p_stage, S * channels * channels * 3 + U * channels * channels

def _check_heads(channels, heads):
    if heads < 1 or channels < 1 or channels % heads:
        raise ConfigError("{0} channels cannot be split into {1} heads".format(channels, heads))

def flop_count(layout, channels, heads, winnow=True):
    """
    Exact multiply-add counts of one pattern attention layer over a layout.

    Per instance and head (d = channels / heads) the score stage costs
    R * S * d and the A.V stage R * S * d, where R is U with winnow and S
    without. Projections cost S * C * C * 3 + U * C * C per instance.
    """
    _check_heads(channels, heads)
    totals = [0, 0, 0]
    for shape_id, count in layout.class_counts().items():
        shape = layout.shapes[shape_id]
        for n, value in enumerate(_instance_madds(shape.U, shape.S, channels, winnow)):
            totals[n] += count * value
    p_stage, av_stage, proj = totals
    return OrderedDict([
        ("p_stage_madds", p_stage),
        ("av_stage_madds", av_stage),
        ("proj_madds", proj),
        ("total", p_stage + av_stage + proj),
    ])

def flop_breakdown(layout, channels, heads):
    """
    Returns a DataFrame with one row per shape class: instance count, U, S,
    winnow and full multiply-adds of all its instances and the ratio of
    winnow to full score-stage cost.
    """
    _check_heads(channels, heads)
    records = []
    for shape_id, count in layout.class_counts().items():
        shape = layout.shapes[shape_id]
        winnow = _instance_madds(shape.U, shape.S, channels, True)
        full = _instance_madds(shape.U, shape.S, channels, False)
        records.append({
            "shape": shape_id,
            "instances": count,
            "U": shape.U,
            "S": shape.S,
            "winnow_madds": count * sum(winnow),
            "full_madds": count * sum(full),
            "p_stage_ratio": winnow[0] / float(full[0]),
        })
    columns = ["shape", "instances", "U", "S", "winnow_madds", "full_madds", "p_stage_ratio"]
    return pd.DataFrame.from_records(records, columns=columns).set_index("shape")
