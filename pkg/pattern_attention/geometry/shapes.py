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
import json
import numpy as np
from collections import namedtuple
from pattern_attention.errors import GeometryError

# Row widths of the rasterized octagon sensor, centered in a 6x6 frame.
# Its 4-adjacency interior is the 12-cell core with row widths (2,4,4,2).
OCTAGON_ROW_WIDTHS = (2, 4, 6, 6, 4, 2)
OCTAGON_FRAME = 6

NORMS = ("chebyshev", "manhattan")

Displacement = namedtuple("Displacement", ["d_row", "d_col"])

class CellSet(object):
    """
    An ordered set of (row, col) grid cells.

    Cells are deduplicated and kept in row-major order, so iteration and
    serialization are deterministic. A CellSet may hold absolute grid
    positions; shape-level sets are normalized (min row = min col = 0).
    """

    __slots__ = ("_cells", "_members")

    def __init__(self, cells=()):
        self._cells = tuple(sorted(set((int(r), int(c)) for r, c in cells)))
        self._members = None

    @classmethod
    def _from_sorted(cls, cells):
        cellset = cls.__new__(cls)
        cellset._cells = cells
        cellset._members = None
        return cellset

    @classmethod
    def from_rect(cls, height, width, origin=(0, 0)):
        r0, c0 = origin
        return cls._from_sorted(tuple(
            (r0 + r, c0 + c) for r in range(height) for c in range(width)))

    @classmethod
    def from_array(cls, array):
        """
        Builds a CellSet from an (n, 2) integer array.
        """
        return cls((int(r), int(c)) for r, c in np.asarray(array).reshape(-1, 2))

    @property
    def cells(self):
        return self._cells

    @property
    def members(self):
        if self._members is None:
            self._members = frozenset(self._cells)
        return self._members

    def __iter__(self):
        return iter(self._cells)

    def __len__(self):
        return len(self._cells)

    def __contains__(self, cell):
        return cell in self.members

    def __eq__(self, other):
        return isinstance(other, CellSet) and self._cells == other._cells

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self._cells)

    def __repr__(self):
        return "CellSet({0})".format(list(self._cells))

    def issubset(self, other):
        return self.members <= other.members

    def union(self, other):
        return CellSet(self.members | other.members)

    def intersection(self, other):
        return CellSet(self.members & other.members)

    def difference(self, other):
        return CellSet(self.members - other.members)

    def origin(self):
        """
        Returns (min row, min col), or (0, 0) for the empty set.
        """
        if not self._cells:
            return (0, 0)
        return (self._cells[0][0], min(c for _, c in self._cells))

    def bounds(self):
        """
        Returns (height, width) of the bounding box.
        """
        if not self._cells:
            return (0, 0)
        r0, c0 = self.origin()
        return (self._cells[-1][0] - r0 + 1,
                max(c for _, c in self._cells) - c0 + 1)

    def translate(self, d_row, d_col):
        # translation preserves row-major order
        return CellSet._from_sorted(tuple((r + d_row, c + d_col) for r, c in self._cells))

    def normalized(self):
        r0, c0 = self.origin()
        return self.translate(-r0, -c0)

    def is_normalized(self):
        return self.origin() == (0, 0)

    def clip(self, height, width):
        return CellSet._from_sorted(tuple(
            (r, c) for r, c in self._cells if 0 <= r < height and 0 <= c < width))

    def to_array(self):
        return np.array(self._cells, dtype=np.int64).reshape(-1, 2)

    def to_list(self):
        return [[r, c] for r, c in self._cells]

class KernelShape(object):
    """
    A doughnut kernel: a sensor region read by attention and an update
    core, expressed in the sensor's normalized frame, that is written.
    """

    __slots__ = ("sensor", "core", "shape_id", "_arrays")

    def __init__(self, sensor, core):
        sensor = sensor if isinstance(sensor, CellSet) else CellSet(sensor)
        core = core if isinstance(core, CellSet) else CellSet(core)
        if not len(core):
            raise GeometryError("kernel core must contain at least one cell")
        if not core.issubset(sensor):
            raise GeometryError("kernel core is not contained in its sensor ({0} stray cells)".format(
                len(core.difference(sensor))))
        r0, c0 = sensor.origin()
        self.sensor = sensor.translate(-r0, -c0)
        self.core = core.translate(-r0, -c0)
        self.shape_id = shape_id_for(self.sensor, self.core)
        self._arrays = None

    @property
    def S(self):
        return len(self.sensor)

    @property
    def U(self):
        return len(self.core)

    def arrays(self):
        """
        Returns (sensor offsets, core offsets) as (n, 2) int64 arrays.
        """
        if self._arrays is None:
            self._arrays = (self.sensor.to_array(), self.core.to_array())
        return self._arrays

    def update_positions(self):
        """
        Returns the positions of the core cells inside the row-major
        sensor ordering.
        """
        position = dict((cell, i) for i, cell in enumerate(self.sensor))
        return [position[cell] for cell in self.core]

    def to_dict(self):
        return {"sensor": self.sensor.to_list(), "core": self.core.to_list()}

    def __eq__(self, other):
        return isinstance(other, KernelShape) and self.shape_id == other.shape_id \
            and self.sensor == other.sensor and self.core == other.core

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self.shape_id)

    def __repr__(self):
        return "KernelShape({0}, S={1}, U={2})".format(self.shape_id, self.S, self.U)

def shape_id_for(sensor, core):
    """
    Content hash of a (sensor, core) pair. Equal geometry gives an equal id.
    """
    doc = json.dumps({"core": core.to_list(), "sensor": sensor.to_list()},
                     sort_keys=True, separators=(",", ":"))
    return "k" + hashlib.sha1(doc.encode("utf-8")).hexdigest()[:12]

def _neighbors4(cell):
    r, c = cell
    return ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))

def interior_cells(cells):
    """
    Returns the cells whose four axis neighbors are all members, in the
    frame of the input.
    """
    cells = CellSet(cells)
    return CellSet(
        cell for cell in cells if all(n in cells for n in _neighbors4(cell)))

def _ball(radius, norm):
    if norm not in NORMS:
        raise GeometryError("unknown norm {0}, expected one of {1}".format(
            norm, ", ".join(NORMS)))
    offsets = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if norm == "manhattan" and abs(dr) + abs(dc) > radius:
                continue
            offsets.append((dr, dc))
    return offsets

def dilate_cells(cells, radius, norm="chebyshev"):
    """
    Union of norm-balls around each cell, kept in the input frame.
    """
    if radius < 0:
        raise GeometryError("dilation radius must be >= 0, got {0}".format(radius))
    ball = _ball(radius, norm)
    return CellSet(
        (r + dr, c + dc) for r, c in CellSet(cells) for dr, dc in ball)

def dilate(cells, radius, norm="chebyshev"):
    """
    Union of norm-balls of the given radius around each cell, normalized.
    Radius 0 is the identity (up to normalization).
    """
    return dilate_cells(cells, radius, norm).normalized()

def octagon_shape():
    """
    The canonical doughnut kernel: a 24-cell octagonal sensor with a
    12-cell core.
    """
    sensor = []
    for r, width in enumerate(OCTAGON_ROW_WIDTHS):
        start = (OCTAGON_FRAME - width) // 2
        sensor.extend((r, c) for c in range(start, start + width))
    sensor = CellSet(sensor)
    return KernelShape(sensor, interior_cells(sensor))

def rectangle_shape(core_height, core_width, sensor_radius=0):
    """
    A rectangular core with a Chebyshev ring of `sensor_radius` cells.
    """
    core = CellSet.from_rect(core_height, core_width)
    return KernelShape(dilate_cells(core, sensor_radius), core)

def displacements(shape):
    """
    Enumerates the relative offsets (update cell minus sensor cell) of a
    kernel shape.

    Returns (distinct displacements sorted row-major, index map) where the
    index map is a U x S nested list giving, for every (update, sensor)
    pair, the index of its displacement.
    """
    pairs = [[Displacement(u[0] - s[0], u[1] - s[1]) for s in shape.sensor]
             for u in shape.core]
    distinct = sorted(set(d for row in pairs for d in row))
    index = dict((d, i) for i, d in enumerate(distinct))
    index_map = [[index[d] for d in row] for row in pairs]
    return distinct, index_map
