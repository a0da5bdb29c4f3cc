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

# To run: python3 -m unittest discover -t . -s . -p test*.py

import json
import unittest
import numpy as np
from pattern_attention.errors import LayoutError, LayoutParseError, LayoutValidationError
from pattern_attention.geometry import CellSet, octagon_shape
from pattern_attention.pattern import (
    KernelInstance, PatternLayout, plan_octagon_pattern, plan_square_pattern, full_layout,
    validate, multiplicity, layout_summary, serialize_layout, parse_layout, render_layout,
    render_pixels, OCTAGON_BASIS)

def core_multiset(layout):
    return sorted((inst.shape_id, inst.core_cells.cells) for inst in layout.instances)

class OctagonPlannerTestCase(unittest.TestCase):

    def test_cores_partition_28(self):
        layout = plan_octagon_pattern(28, 28, (0, 0))
        self.assertEqual(sum(len(inst.core_cells) for inst in layout.instances), 784)
        self.assertTrue(validate(layout).ok)

    def test_boundary_kernel_classes(self):
        layout = plan_octagon_pattern(28, 28, (0, 0))
        self.assertGreaterEqual(len(layout.shapes), 3)
        self.assertIn(octagon_shape().shape_id, layout.shapes)
        self.assertEqual(layout.dominant_shape_id(), octagon_shape().shape_id)

    def test_56(self):
        layout = plan_octagon_pattern(56, 56, (0, 0))
        report = validate(layout)
        self.assertTrue(report.ok, report.summary())

    def test_all_sizes_and_phases(self):
        for phase in ((0, 0), (1, 1), (2, 0)):
            for height in range(6, 65):
                for width in range(6, 65):
                    # the planner raises if its layout does not validate
                    layout = plan_octagon_pattern(height, width, phase)
                    self.assertEqual(
                        sum(layout.shapes[inst.shape_id].U for inst in layout.instances),
                        height * width)

    def test_too_small(self):
        with self.assertRaisesRegex(LayoutError, "grid too small for octagon pattern"):
            plan_octagon_pattern(5, 28)

    def test_translation_by_lattice_period(self):
        (a_r, a_c), (b_r, b_c) = OCTAGON_BASIS
        base = plan_octagon_pattern(20, 23, (1, 1))
        for period in ((a_r, a_c), (b_r, b_c), (a_r - b_r, a_c - b_c)):
            shifted = plan_octagon_pattern(20, 23, (1 + period[0], 1 + period[1]))
            self.assertEqual(core_multiset(base), core_multiset(shifted))

    def test_clipping_is_sound(self):
        height, width = 17, 19
        layout = plan_octagon_pattern(height, width, (1, 1))
        octagon = octagon_shape()
        for inst in layout.instances:
            for r, c in inst.sensor_cells:
                self.assertTrue(0 <= r < height and 0 <= c < width)
            # find the unclipped lattice kernel this instance came from
            matches = []
            r0, c0 = inst.anchor
            for dr in range(-6, 7):
                for dc in range(-6, 7):
                    core = octagon.core.translate(r0 + dr, c0 + dc)
                    if inst.core_cells == core.clip(height, width):
                        matches.append(octagon.sensor.translate(r0 + dr, c0 + dc))
            self.assertTrue(matches)
            self.assertIn(inst.sensor_cells, [s.clip(height, width) for s in matches])

class SquarePlannerTestCase(unittest.TestCase):

    def test_disjoint_windows(self):
        layout = plan_square_pattern(8, 8, 4, 0)
        self.assertEqual(len(layout.instances), 4)
        for inst in layout.instances:
            self.assertEqual(len(inst.core_cells), 16)
            self.assertEqual(len(inst.sensor_cells), 16)
        np.testing.assert_array_equal(multiplicity(layout), np.ones((8, 8), dtype=np.int64))

    def test_corner_clip(self):
        layout = plan_square_pattern(8, 8, 4, 1)
        first = layout.instances[0]
        self.assertEqual(first.anchor, (0, 0))
        self.assertEqual(len(first.sensor_cells), 25)
        self.assertEqual(len(first.core_cells), 16)

    def test_single_window(self):
        layout = plan_square_pattern(4, 4, 4, 0)
        self.assertEqual(len(layout.instances), 1)
        self.assertEqual(layout, full_layout(4, 4))

    def test_divisor_combinations(self):
        for side in range(1, 13):
            for core_side in range(1, side + 1):
                for radius in (0, 1, 2):
                    layout = plan_square_pattern(side, side + 1, core_side, radius)
                    self.assertTrue(validate(layout).ok)
                    self.assertGreaterEqual(multiplicity(layout).min(), 1)

    def test_bad_core_side(self):
        with self.assertRaises(LayoutError):
            plan_square_pattern(8, 8, 0, 1)

class MultiplicityTestCase(unittest.TestCase):

    def test_square_junction_counts(self):
        grid = multiplicity(plan_square_pattern(8, 8, 4, 1))
        self.assertEqual(grid[3, 3], 4)
        self.assertEqual(grid[1, 3], 2)
        self.assertEqual(grid[1, 1], 1)

    def test_octagon_lower_bound(self):
        grid = multiplicity(plan_octagon_pattern(28, 28))
        self.assertGreaterEqual(grid.min(), 1)

class ValidateTestCase(unittest.TestCase):

    def test_deleted_core_cell(self):
        layout = plan_octagon_pattern(28, 28)
        inst = layout.instances[5]
        missing = inst.core_cells.cells[0]
        broken = KernelInstance(
            inst.shape_id, inst.anchor,
            CellSet(c for c in inst.core_cells if c != missing), inst.sensor_cells)
        instances = list(layout.instances)
        instances[5] = broken
        report = validate(PatternLayout(28, 28, layout.shapes, instances))
        self.assertFalse(report.ok)
        self.assertEqual(report.counts()["uncovered-cell"], 1)
        self.assertEqual(
            [v.cell for v in report.violations if v.kind == "uncovered-cell"], [missing])

    def test_duplicated_instance(self):
        layout = plan_octagon_pattern(28, 28)
        inst = [i for i in layout.instances if i.shape_id == octagon_shape().shape_id][0]
        report = validate(PatternLayout(28, 28, layout.shapes, layout.instances + (inst,)))
        self.assertEqual(report.counts()["double-covered-cell"], 12)

    def test_out_of_bounds(self):
        layout = plan_square_pattern(4, 4, 2, 0)
        extra = KernelInstance(layout.instances[0].shape_id, (3, 3),
                               CellSet.from_rect(2, 2, (3, 3)), CellSet.from_rect(2, 2, (3, 3)))
        report = validate(PatternLayout(4, 4, layout.shapes, layout.instances + (extra,)))
        self.assertEqual(report.counts()["out-of-bounds"], 6)

class CodecTestCase(unittest.TestCase):

    def test_round_trip(self):
        layout = plan_octagon_pattern(28, 28, (0, 0))
        self.assertEqual(parse_layout(serialize_layout(layout)), layout)

    def test_deterministic(self):
        layout = plan_octagon_pattern(28, 28, (0, 0))
        self.assertEqual(serialize_layout(layout), serialize_layout(plan_octagon_pattern(28, 28)))

    def test_document_fields(self):
        doc = json.loads(serialize_layout(plan_square_pattern(8, 8, 4, 1)).decode("utf-8"))
        self.assertEqual(doc["version"], 1)
        self.assertEqual(sorted(doc), ["height", "instances", "phase", "shapes", "version", "width"])
        self.assertEqual(doc["instances"][0], {"anchor": [0, 0], "shape": doc["instances"][0]["shape"]})

    def test_overlapping_cores_rejected(self):
        doc = json.loads(serialize_layout(plan_square_pattern(8, 8, 4, 0)).decode("utf-8"))
        doc["instances"][1]["anchor"] = [0, 2]
        with self.assertRaises(LayoutValidationError) as cm:
            parse_layout(json.dumps(doc).encode("utf-8"))
        self.assertIn("double-covered-cell", cm.exception.report.counts())

    def test_syntax_error_is_positioned(self):
        with self.assertRaisesRegex(LayoutParseError, "line 2 column"):
            parse_layout(b'{"version": 1,\n "height": }')

    def test_structure_error_is_positioned(self):
        doc = json.loads(serialize_layout(plan_square_pattern(8, 8, 4, 0)).decode("utf-8"))
        doc["instances"][2]["anchor"] = [0]
        with self.assertRaisesRegex(LayoutParseError, r"instances\[2\]\.anchor"):
            parse_layout(json.dumps(doc))

    def test_bad_version(self):
        doc = json.loads(serialize_layout(plan_square_pattern(8, 8, 4, 0)).decode("utf-8"))
        doc["version"] = 2
        with self.assertRaisesRegex(LayoutParseError, "version"):
            parse_layout(json.dumps(doc))

    def test_non_string_shape_is_positioned(self):
        doc = json.loads(serialize_layout(plan_square_pattern(8, 8, 4, 0)).decode("utf-8"))
        for bad in (["x"], {"id": "x"}, 7, None):
            doc["instances"][0]["shape"] = bad
            with self.assertRaisesRegex(LayoutParseError, r"instances\[0\]\.shape"):
                parse_layout(json.dumps(doc))

class RenderTestCase(unittest.TestCase):

    def _colors(self, ppm, width, height):
        header = "P6\n{0} {1}\n255\n".format(width, height).encode("ascii")
        self.assertTrue(ppm.startswith(header))
        pixels = np.frombuffer(ppm[len(header):], dtype=np.uint8).reshape(height, width, 3)
        return set(map(tuple, pixels.reshape(-1, 3)))

    def test_single_window(self):
        ppm = render_layout(plan_square_pattern(4, 4, 4, 0), 4)
        self.assertEqual(len(self._colors(ppm, 16, 16)), 1)

    def test_octagon(self):
        ppm = render_layout(plan_octagon_pattern(28, 28), 8)
        self.assertGreaterEqual(len(self._colors(ppm, 224, 224)), 3)

    def test_deterministic(self):
        layout = plan_octagon_pattern(28, 28)
        self.assertEqual(render_layout(layout, 8), render_layout(layout, 8))

    def test_shape(self):
        self.assertEqual(render_pixels(plan_square_pattern(6, 8, 2, 1), 3).shape, (18, 24, 3))

class SummaryTestCase(unittest.TestCase):

    def test_summary(self):
        summary = layout_summary(plan_square_pattern(8, 8, 4, 1))
        self.assertEqual(summary["instances"], 4)
        self.assertEqual(summary["core_cells"], 64)
        self.assertEqual(summary["multiplicity"]["max"], 4)
