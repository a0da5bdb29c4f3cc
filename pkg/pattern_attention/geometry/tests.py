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

import unittest
import random
from pattern_attention.errors import GeometryError
from pattern_attention.geometry import (
    CellSet, KernelShape, octagon_shape, rectangle_shape, interior_cells,
    dilate, displacements)

def rotate90(cells, frame):
    return CellSet((c, frame - 1 - r) for r, c in cells)

def random_cellset(rng, size=6, fill=0.5):
    cells = [(r, c) for r in range(size) for c in range(size) if rng.random() < fill]
    if not cells:
        cells = [(0, 0)]
    return CellSet(cells).normalized()

class CellSetTestCase(unittest.TestCase):

    def test_dedup_and_row_major_order(self):
        cells = CellSet([(1, 0), (0, 2), (0, 1), (1, 0)])
        self.assertEqual(cells.cells, ((0, 1), (0, 2), (1, 0)))
        self.assertEqual(len(cells), 3)

    def test_normalized(self):
        cells = CellSet([(3, 5), (4, 4)]).normalized()
        self.assertTrue(cells.is_normalized())
        self.assertEqual(cells.cells, ((0, 1), (1, 0)))

    def test_serialization_is_stable(self):
        a = CellSet([(2, 2), (0, 0), (1, 1)])
        b = CellSet([(1, 1), (2, 2), (0, 0)])
        self.assertEqual(repr(a), repr(b))
        self.assertEqual(a.to_list(), b.to_list())

class KernelShapeTestCase(unittest.TestCase):

    def test_core_must_be_within_sensor(self):
        with self.assertRaises(GeometryError):
            KernelShape(CellSet([(0, 0)]), CellSet([(0, 1)]))

    def test_empty_core_rejected(self):
        with self.assertRaises(GeometryError):
            KernelShape(CellSet([(0, 0)]), CellSet())

    def test_shape_id_is_content_hash(self):
        a = rectangle_shape(2, 2, 1)
        b = KernelShape(CellSet.from_rect(4, 4, origin=(7, 3)),
                        CellSet.from_rect(2, 2, origin=(8, 4)))
        self.assertEqual(a.shape_id, b.shape_id)
        self.assertNotEqual(a.shape_id, rectangle_shape(2, 2, 0).shape_id)

class OctagonTestCase(unittest.TestCase):

    def test_counts(self):
        shape = octagon_shape()
        self.assertEqual(shape.S, 24)
        self.assertEqual(shape.U, 12)

    def test_core_row_widths(self):
        shape = octagon_shape()
        expected = CellSet(
            [(1, 2), (1, 3)] +
            [(2, c) for c in range(1, 5)] +
            [(3, c) for c in range(1, 5)] +
            [(4, 2), (4, 3)])
        self.assertEqual(shape.core, expected)

    def test_fourfold_symmetry(self):
        shape = octagon_shape()
        self.assertEqual(rotate90(shape.sensor, 6), shape.sensor)
        self.assertEqual(rotate90(shape.core, 6), shape.core)

class InteriorTestCase(unittest.TestCase):

    def test_square(self):
        self.assertEqual(interior_cells(CellSet.from_rect(3, 3)), CellSet([(1, 1)]))

    def test_single_cell(self):
        self.assertEqual(len(interior_cells(CellSet([(0, 0)]))), 0)

    def test_octagon_interior(self):
        self.assertEqual(len(interior_cells(octagon_shape().sensor)), 12)

    def test_monotone(self):
        rng = random.Random(7)
        for _ in range(200):
            y = random_cellset(rng, fill=0.7)
            x = CellSet(c for c in y if rng.random() < 0.7)
            self.assertTrue(interior_cells(x).issubset(interior_cells(y)))

class DilateTestCase(unittest.TestCase):

    def test_chebyshev_point(self):
        self.assertEqual(dilate(CellSet([(0, 0)]), 1, "chebyshev"), CellSet.from_rect(3, 3))

    def test_manhattan_point(self):
        self.assertEqual(
            dilate(CellSet([(0, 0)]), 1, "manhattan"),
            CellSet([(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)]))

    def test_square(self):
        self.assertEqual(dilate(CellSet.from_rect(4, 4), 1), CellSet.from_rect(6, 6))

    def test_radius_zero_is_identity(self):
        cells = CellSet([(0, 0), (2, 1)])
        self.assertEqual(dilate(cells, 0), cells)

    def test_negative_radius(self):
        with self.assertRaises(GeometryError):
            dilate(CellSet([(0, 0)]), -1)

    def test_interior_of_dilation_contains_set(self):
        rng = random.Random(11)
        for _ in range(200):
            x = random_cellset(rng)
            # a normalized set is shifted by (1, 1) when dilated by 1
            grown = interior_cells(dilate(x, 1, "chebyshev"))
            self.assertTrue(x.translate(1, 1).issubset(grown))

class DisplacementsTestCase(unittest.TestCase):

    def test_single_cell(self):
        shape = KernelShape(CellSet([(0, 0)]), CellSet([(0, 0)]))
        distinct, index_map = displacements(shape)
        self.assertEqual(distinct, [(0, 0)])
        self.assertEqual(index_map, [[0]])

    def test_square(self):
        shape = rectangle_shape(2, 2, 0)
        distinct, index_map = displacements(shape)
        self.assertEqual(len(distinct), 9)
        self.assertEqual(
            set(distinct),
            set((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)))
        self.assertEqual(distinct, sorted(distinct))

    def test_octagon_index_map_is_exhaustive(self):
        shape = octagon_shape()
        distinct, index_map = displacements(shape)
        self.assertEqual(len(index_map), shape.U)
        self.assertEqual(sum(len(row) for row in index_map), 288)
        self.assertLess(len(distinct), 288)
        for u, urow in zip(shape.core, index_map):
            for s, i in zip(shape.sensor, urow):
                self.assertEqual(distinct[i], (u[0] - s[0], u[1] - s[1]))

    def test_displacements_bounded_by_sensor(self):
        shape = octagon_shape()
        height, width = shape.sensor.bounds()
        for d in displacements(shape)[0]:
            self.assertLess(abs(d.d_row), height)
            self.assertLess(abs(d.d_col), width)
