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

from .layout import (
    KernelInstance,
    PatternLayout,
    ValidationReport,
    Violation,
    plan_octagon_pattern,
    plan_square_pattern,
    full_layout,
    validate,
    multiplicity,
    layout_summary,
    OCTAGON_BASIS)
from .codec import (
    serialize_layout,
    parse_layout,
    write_layout,
    read_layout,
    layout_to_dict,
    LAYOUT_FORMAT_VERSION)
from .render import render_layout, render_pixels, encode_ppm, shape_color
