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
from collections import namedtuple, OrderedDict, Counter
import numpy as np
from pattern_attention.errors import LayoutError, LayoutValidationError
from pattern_attention.geometry import (
    CellSet, KernelShape, octagon_shape, dilate_cells)

logger = logging.getLogger("pattern_attention")

# Skew lattice on which octagon cores tile the plane. Its determinant (12)
# equals the core area.
OCTAGON_BASIS = ((2, 3), (-2, 3))

VIOLATION_KINDS = (
    "uncovered-cell",
    "double-covered-cell",
    "out-of-bounds",
    "shape-mismatch",
    "core-outside-sensor",
)

Violation = namedtuple("Violation", ["kind", "cell", "instance", "detail"])

class KernelInstance(object):
    """
    One placed kernel: its shape class, the grid position of the shape
    frame origin and its absolute (clipped) core and sensor cells.

    Instances created with place() derive their cells from the shape and
    anchor on first access; instances built directly carry explicit cells.
    """

    __slots__ = ("shape_id", "anchor", "_shape", "_core", "_sensor")

    def __init__(self, shape_id, anchor, core_cells, sensor_cells):
        self.shape_id = shape_id
        self.anchor = (int(anchor[0]), int(anchor[1]))
        self._shape = None
        self._core = CellSet(core_cells)
        self._sensor = CellSet(sensor_cells)

    @classmethod
    def place(cls, shape, anchor):
        inst = cls.__new__(cls)
        inst.shape_id = shape.shape_id
        inst.anchor = (int(anchor[0]), int(anchor[1]))
        inst._shape = shape
        inst._core = None
        inst._sensor = None
        return inst

    @property
    def derived_shape(self):
        """
        The shape this instance was placed from, or None for explicit cells.
        """
        return self._shape

    @property
    def core_cells(self):
        if self._core is None:
            self._core = self._shape.core.translate(*self.anchor)
        return self._core

    @property
    def sensor_cells(self):
        if self._sensor is None:
            self._sensor = self._shape.sensor.translate(*self.anchor)
        return self._sensor

    def sort_key(self):
        return (self.anchor, self.shape_id)

    def __eq__(self, other):
        return isinstance(other, KernelInstance) and \
            (self.shape_id, self.anchor, self.core_cells, self.sensor_cells) == \
            (other.shape_id, other.anchor, other.core_cells, other.sensor_cells)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "KernelInstance({0} @ {1}, U={2}, S={3})".format(
            self.shape_id, self.anchor, len(self.core_cells), len(self.sensor_cells))

class PatternLayout(object):
    """
    A placement of kernel instances over an H x W grid.

    Layouts are not validated on construction; planners and parse_layout
    validate before handing a layout out. Treat layouts as immutable.
    """

    def __init__(self, height, width, shapes, instances, phase=(0, 0)):
        self.height = int(height)
        self.width = int(width)
        self.phase = (int(phase[0]), int(phase[1]))
        self.shapes = OrderedDict(sorted(shapes.items()))
        self.instances = tuple(sorted(instances, key=KernelInstance.sort_key))
        self._groups = None

    @property
    def num_cells(self):
        return self.height * self.width

    def instance_groups(self):
        """
        Returns an OrderedDict of shape_id: list of instance positions,
        ordered by shape id.
        """
        if self._groups is None:
            groups = OrderedDict((shape_id, []) for shape_id in self.shapes)
            for n, inst in enumerate(self.instances):
                groups.setdefault(inst.shape_id, []).append(n)
            self._groups = OrderedDict(
                (shape_id, members) for shape_id, members in groups.items() if members)
        return self._groups

    def anchors(self, positions):
        return np.array([self.instances[n].anchor for n in positions], dtype=np.int64).reshape(-1, 2)

    def class_counts(self):
        """
        Returns an OrderedDict of shape_id: instance count, sorted by shape id.
        """
        return OrderedDict(
            (shape_id, len(members)) for shape_id, members in self.instance_groups().items())

    def dominant_shape_id(self):
        """
        The shape class with the most instances (ties broken by shape id).
        """
        counts = self.class_counts()
        return sorted(counts.items(), key=lambda item: (-item[1], item[0]))[0][0]

    def __eq__(self, other):
        return isinstance(other, PatternLayout) and \
            (self.height, self.width, self.phase) == (other.height, other.width, other.phase) and \
            list(self.shapes.items()) == list(other.shapes.items()) and \
            self.instances == other.instances

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "PatternLayout({0}x{1}, {2} instances, {3} shape classes)".format(
            self.height, self.width, len(self.instances), len(self.shapes))

class ValidationReport(object):

    def __init__(self, violations):
        self.violations = list(violations)

    @property
    def ok(self):
        return not self.violations

    def counts(self):
        counts = Counter(v.kind for v in self.violations)
        return OrderedDict((kind, counts[kind]) for kind in VIOLATION_KINDS if counts[kind])

    def summary(self):
        if self.ok:
            return "ok"
        return ", ".join("{0} x{1}".format(kind, count) for kind, count in self.counts().items())

    def to_dict(self):
        return {
            "ok": self.ok,
            "counts": dict(self.counts()),
            "violations": [
                {"kind": v.kind,
                 "cell": list(v.cell) if v.cell is not None else None,
                 "instance": v.instance,
                 "detail": v.detail}
                for v in self.violations]
        }

def _inside(cells, height, width):
    return (cells[..., 0] >= 0) & (cells[..., 0] < height) & \
        (cells[..., 1] >= 0) & (cells[..., 1] < width)

def _clip_lattice(height, width, shape, anchors, phase):
    """
    Places `shape` at every anchor, clips each kernel to the grid and builds
    the layout. Kernels whose clipped core is empty are dropped. Kernels
    with the same clipping mask share one shape class.
    """
    sensor_off, core_off = shape.arrays()
    anchors = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    core_in = _inside(anchors[:, None, :] + core_off[None, :, :], height, width)
    sensor_in = _inside(anchors[:, None, :] + sensor_off[None, :, :], height, width)

    keep = core_in.any(axis=1)
    anchors = anchors[keep]
    masks = np.concatenate([core_in[keep], sensor_in[keep]], axis=1)
    keys, inverse = np.unique(masks, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    U = len(core_off)
    shapes = {}
    instances = []
    for k, key in enumerate(keys):
        sensor_cells = sensor_off[key[U:]]
        clipped = KernelShape(CellSet.from_array(sensor_cells),
                              CellSet.from_array(core_off[key[:U]]))
        clipped = shapes.setdefault(clipped.shape_id, clipped)
        origin = sensor_cells.min(axis=0)
        for r, c in anchors[inverse == k] + origin:
            instances.append(KernelInstance.place(clipped, (r, c)))

    return PatternLayout(height, width, shapes, instances, phase=phase)

def _check(layout):
    report = validate(layout)
    if not report.ok:
        raise LayoutValidationError(report)
    return layout

def plan_octagon_pattern(height, width, phase=(0, 0)):
    """
    Tiles an H x W grid with octagon cores placed on a skew lattice, shifted
    by `phase`. Border kernels are clipped to the grid, never padded, which
    yields extra shape classes along the sides and corners.
    """
    if height < 6 or width < 6:
        raise LayoutError("grid too small for octagon pattern ({0}x{1}, need at least 6x6)".format(
            height, width))
    shape = octagon_shape()
    (a_r, a_c), (b_r, b_c) = OCTAGON_BASIS
    pr, pc = int(phase[0]), int(phase[1])

    # anchors are phase + i*a + j*b; with s = i + j and t = i - j this is
    # (pr + 2t, pc + 3s) for s, t of equal parity
    frame = 6
    s = np.arange((-frame - pc) // 3 - 1, (width - pc) // 3 + 2)
    t = np.arange((-frame - pr) // 2 - 1, (height - pr) // 2 + 2)
    s, t = np.meshgrid(s, t, indexing="ij")
    s, t = s[(s + t) % 2 == 0], t[(s + t) % 2 == 0]
    i, j = (s + t) // 2, (s - t) // 2
    anchors = np.stack([pr + i * a_r + j * b_r, pc + i * a_c + j * b_c], axis=1)

    layout = _check(_clip_lattice(height, width, shape, anchors, (pr, pc)))
    logger.debug("planned octagon pattern {0}x{1} phase {2}: {3} instances, {4} shape classes".format(
        height, width, (pr, pc), len(layout.instances), len(layout.shapes)))
    return layout

def plan_square_pattern(height, width, core_side, sensor_radius=0):
    """
    Tiles an H x W grid with core_side x core_side cores, each sensing a
    Chebyshev ring of `sensor_radius` cells. Cores at the far border are
    clipped when core_side does not divide the grid.
    """
    if core_side < 1:
        raise LayoutError("core side must be positive, got {0}".format(core_side))
    if sensor_radius < 0:
        raise LayoutError("sensor radius must be >= 0, got {0}".format(sensor_radius))
    if height < 1 or width < 1:
        raise LayoutError("grid must be at least 1x1, got {0}x{1}".format(height, width))

    core = CellSet.from_rect(core_side, core_side)
    shape = KernelShape(dilate_cells(core, sensor_radius, "chebyshev"), core)
    rows, cols = np.meshgrid(np.arange(0, height, core_side), np.arange(0, width, core_side),
                             indexing="ij")
    # the frame origin sits sensor_radius cells above and left of the core
    anchors = np.stack([rows.ravel(), cols.ravel()], axis=1) - sensor_radius

    layout = _check(_clip_lattice(height, width, shape, anchors, (0, 0)))
    logger.debug("planned square pattern {0}x{1} core {2} radius {3}: {4} instances".format(
        height, width, core_side, sensor_radius, len(layout.instances)))
    return layout

def full_layout(height, width):
    """
    The one-instance layout whose core and sensor are the whole grid, i.e.
    canonical full-window attention.
    """
    grid = CellSet.from_rect(height, width)
    return _check(_clip_lattice(height, width, KernelShape(grid, grid), [(0, 0)], (0, 0)))

def _split_instances(layout):
    """
    Separates instances placed from their shape table entry (checked as
    stacked arrays) from those with explicit cells (checked one by one).
    """
    placed = OrderedDict()
    explicit = []
    for n, inst in enumerate(layout.instances):
        shape = inst.derived_shape
        if shape is not None and (layout.shapes.get(inst.shape_id) is shape or
                                  layout.shapes.get(inst.shape_id) == shape):
            placed.setdefault(inst.shape_id, []).append(n)
        else:
            explicit.append(n)
    return placed, explicit

def validate(layout):
    """
    Checks that the cores partition the grid, that every core lies in its
    sensor, that all cells are in bounds and that every instance matches its
    shape table entry. Returns a ValidationReport listing every offending
    cell or instance.
    """
    violations = []
    coverage = np.zeros((layout.height, layout.width), dtype=np.int64)
    placed, explicit = _split_instances(layout)

    for shape_id, positions in placed.items():
        sensor_off, core_off = layout.shapes[shape_id].arrays()
        anchors = layout.anchors(positions)
        for offsets, label in ((core_off, "core"), (sensor_off, "sensor")):
            cells = anchors[:, None, :] + offsets[None, :, :]
            outside = ~_inside(cells, layout.height, layout.width)
            for i, k in zip(*np.nonzero(outside)):
                violations.append(Violation(
                    "out-of-bounds", tuple(int(v) for v in cells[i, k]), positions[i],
                    "{0} cell outside the grid".format(label)))
            if label == "core":
                inside = cells[~outside]
                np.add.at(coverage, (inside[:, 0], inside[:, 1]), 1)

    for n in explicit:
        inst = layout.instances[n]
        for cells, label in ((inst.core_cells, "core"), (inst.sensor_cells, "sensor")):
            for cell in cells:
                r, c = cell
                if not (0 <= r < layout.height and 0 <= c < layout.width):
                    violations.append(Violation(
                        "out-of-bounds", cell, n, "{0} cell outside the grid".format(label)))
                elif label == "core":
                    coverage[r, c] += 1

        if not inst.core_cells.issubset(inst.sensor_cells):
            violations.append(Violation(
                "core-outside-sensor", None, n,
                "{0} core cells not in sensor".format(
                    len(inst.core_cells.difference(inst.sensor_cells)))))

        shape = layout.shapes.get(inst.shape_id)
        r, c = inst.anchor
        if shape is None:
            violations.append(Violation(
                "shape-mismatch", None, n, "unknown shape {0}".format(inst.shape_id)))
        elif shape.core.translate(r, c) != inst.core_cells or \
                shape.sensor.translate(r, c) != inst.sensor_cells:
            violations.append(Violation(
                "shape-mismatch", None, n,
                "geometry at anchor {0} differs from shape {1}".format(inst.anchor, inst.shape_id)))

    for r, c in zip(*np.nonzero(coverage == 0)):
        violations.append(Violation("uncovered-cell", (int(r), int(c)), None, "no core covers cell"))
    for r, c in zip(*np.nonzero(coverage > 1)):
        violations.append(Violation(
            "double-covered-cell", (int(r), int(c)), None,
            "covered by {0} cores".format(int(coverage[r, c]))))

    return ValidationReport(violations)

def multiplicity(layout):
    """
    Returns an H x W integer array counting the instances whose sensor
    contains each cell.
    """
    grid = np.zeros((layout.height, layout.width), dtype=np.int64)
    placed, explicit = _split_instances(layout)
    for shape_id, positions in placed.items():
        sensor_off = layout.shapes[shape_id].arrays()[0]
        cells = (layout.anchors(positions)[:, None, :] + sensor_off[None, :, :]).reshape(-1, 2)
        cells = cells[_inside(cells, layout.height, layout.width)]
        np.add.at(grid, (cells[:, 0], cells[:, 1]), 1)
    for n in explicit:
        for r, c in layout.instances[n].sensor_cells:
            if 0 <= r < layout.height and 0 <= c < layout.width:
                grid[r, c] += 1
    return grid

def layout_summary(layout):
    """
    Returns a dict describing the layout (sizes, classes, multiplicity stats).
    """
    mult = multiplicity(layout)
    return {
        "height": layout.height,
        "width": layout.width,
        "phase": list(layout.phase),
        "instances": len(layout.instances),
        "shape_classes": len(layout.shapes),
        "classes": [
            {"shape": shape_id,
             "count": count,
             "U": layout.shapes[shape_id].U,
             "S": layout.shapes[shape_id].S}
            for shape_id, count in layout.class_counts().items()],
        "core_cells": sum(layout.shapes[inst.shape_id].U if inst.shape_id in layout.shapes
                          else len(inst.core_cells) for inst in layout.instances),
        "multiplicity": {
            "min": int(mult.min()),
            "max": int(mult.max()),
            "mean": float(mult.mean()),
        },
    }
