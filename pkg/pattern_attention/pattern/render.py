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

import hashlib
import numpy as np

OUTLINE_COLOR = (16, 16, 16)

def shape_color(shape_id):
    """
    Fixed RGB color for a shape class, derived from its id.
    """
    digest = hashlib.sha256(shape_id.encode("utf-8")).digest()
    # keep colors away from the outline color
    return tuple(64 + b % 192 for b in digest[:3])

def _designated_instance(layout):
    """
    The instance whose core is closest to the grid center.
    """
    center = ((layout.height - 1) / 2.0, (layout.width - 1) / 2.0)

    def distance(item):
        n, inst = item
        cells = np.array(inst.core_cells.cells, dtype=float)
        mean = cells.mean(axis=0)
        return ((mean[0] - center[0]) ** 2 + (mean[1] - center[1]) ** 2, n)

    return min(enumerate(layout.instances), key=distance)[1]

def render_pixels(layout, cell_px=8):
    """
    Returns an (H*cell_px, W*cell_px, 3) uint8 array. Core cells are filled
    with their shape class color; the ring (sensor minus core) of the
    instance nearest the center is outlined.
    """
    if cell_px < 1:
        raise ValueError("cell_px must be >= 1, got {0}".format(cell_px))
    pixels = np.zeros((layout.height * cell_px, layout.width * cell_px, 3), dtype=np.uint8)
    for inst in layout.instances:
        color = shape_color(inst.shape_id)
        for r, c in inst.core_cells:
            pixels[r * cell_px:(r + 1) * cell_px, c * cell_px:(c + 1) * cell_px] = color

    inst = _designated_instance(layout)
    ring = inst.sensor_cells.difference(inst.core_cells)
    for r, c in ring:
        block = pixels[r * cell_px:(r + 1) * cell_px, c * cell_px:(c + 1) * cell_px]
        block[0, :] = OUTLINE_COLOR
        block[-1, :] = OUTLINE_COLOR
        block[:, 0] = OUTLINE_COLOR
        block[:, -1] = OUTLINE_COLOR
    return pixels

def encode_ppm(pixels):
    """
    Encodes an (h, w, 3) uint8 array as binary PPM (P6).
    """
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = pixels.shape[:2]
    header = "P6\n{0} {1}\n255\n".format(width, height).encode("ascii")
    return header + pixels.tobytes()

def render_layout(layout, cell_px=8):
    """
    Renders a layout as PPM bytes, (W*cell_px) x (H*cell_px) pixels.
    """
    return encode_ppm(render_pixels(layout, cell_px))
