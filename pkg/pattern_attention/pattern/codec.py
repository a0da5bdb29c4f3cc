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

import json
from pattern_attention.errors import LayoutParseError, LayoutValidationError, GeometryError
from pattern_attention.geometry import CellSet, KernelShape
from pattern_attention.pattern.layout import PatternLayout, KernelInstance, validate

LAYOUT_FORMAT_VERSION = 1

def layout_to_dict(layout):
    return {
        "version": LAYOUT_FORMAT_VERSION,
        "height": layout.height,
        "width": layout.width,
        "phase": list(layout.phase),
        "shapes": dict((shape_id, shape.to_dict()) for shape_id, shape in layout.shapes.items()),
        "instances": [
            {"shape": inst.shape_id, "anchor": list(inst.anchor)}
            for inst in layout.instances],
    }

def serialize_layout(layout):
    """
    Encodes a validated layout as a UTF-8 JSON document. Absolute cell sets
    are not stored; they are recomputed from shapes and anchors on load.
    """
    report = validate(layout)
    if not report.ok:
        raise LayoutValidationError(report)
    return (json.dumps(layout_to_dict(layout), sort_keys=True, indent=1) + "\n").encode("utf-8")

def _fail(path, msg):
    raise LayoutParseError("{0}: {1}".format(path, msg))

def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, "expected an integer, got {0!r}".format(value))
    return value

def _pair(value, path):
    if not isinstance(value, list) or len(value) != 2:
        _fail(path, "expected [row, col], got {0!r}".format(value))
    return (_int(value[0], path + "[0]"), _int(value[1], path + "[1]"))

def _cells(value, path):
    if not isinstance(value, list):
        _fail(path, "expected a list of [row, col] pairs")
    return CellSet(_pair(cell, "{0}[{1}]".format(path, i)) for i, cell in enumerate(value))

def parse_layout(data):
    """
    Decodes a layout document and validates it. Malformed documents raise
    LayoutParseError with a line/column or field position; documents that
    decode but do not validate raise LayoutValidationError.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise LayoutParseError("byte {0}: not UTF-8 ({1})".format(e.start, e.reason))
    try:
        doc = json.loads(data)
    except ValueError as e:
        raise LayoutParseError("line {0} column {1}: {2}".format(
            getattr(e, "lineno", "?"), getattr(e, "colno", "?"), getattr(e, "msg", str(e))))

    if not isinstance(doc, dict):
        _fail("$", "expected a JSON object")
    missing = [key for key in ("version", "height", "width", "phase", "shapes", "instances")
               if key not in doc]
    if missing:
        _fail("$", "missing field(s) {0}".format(", ".join(missing)))
    unknown = sorted(set(doc) - set(["version", "height", "width", "phase", "shapes", "instances"]))
    if unknown:
        _fail("$", "unknown field(s) {0}".format(", ".join(unknown)))
    if _int(doc["version"], "version") != LAYOUT_FORMAT_VERSION:
        _fail("version", "unsupported layout version {0}".format(doc["version"]))

    height = _int(doc["height"], "height")
    width = _int(doc["width"], "width")
    if height < 1 or width < 1:
        _fail("height", "grid must be at least 1x1")
    phase = _pair(doc["phase"], "phase")

    if not isinstance(doc["shapes"], dict):
        _fail("shapes", "expected an object of shape_id: {sensor, core}")
    shapes = {}
    for shape_id, entry in sorted(doc["shapes"].items()):
        path = "shapes.{0}".format(shape_id)
        if not isinstance(entry, dict) or set(entry) != set(["sensor", "core"]):
            _fail(path, "expected {sensor: [...], core: [...]}")
        try:
            shape = KernelShape(_cells(entry["sensor"], path + ".sensor"),
                                _cells(entry["core"], path + ".core"))
        except GeometryError as e:
            _fail(path, str(e))
        if shape.shape_id != shape_id:
            _fail(path, "shape id does not match its geometry (expected {0})".format(shape.shape_id))
        shapes[shape_id] = shape

    if not isinstance(doc["instances"], list):
        _fail("instances", "expected a list")
    instances = []
    for i, entry in enumerate(doc["instances"]):
        path = "instances[{0}]".format(i)
        if not isinstance(entry, dict) or set(entry) != set(["shape", "anchor"]):
            _fail(path, "expected {shape: id, anchor: [row, col]}")
        if not isinstance(entry["shape"], str):
            _fail(path + ".shape", "expected a shape id string, got {0!r}".format(entry["shape"]))
        shape = shapes.get(entry["shape"])
        if shape is None:
            _fail(path + ".shape", "unknown shape {0!r}".format(entry["shape"]))
        instances.append(KernelInstance.place(shape, _pair(entry["anchor"], path + ".anchor")))

    layout = PatternLayout(height, width, shapes, instances, phase=phase)
    report = validate(layout)
    if not report.ok:
        raise LayoutValidationError(report)
    return layout

def write_layout(layout, path):
    with open(path, "wb") as f:
        f.write(serialize_layout(layout))

def read_layout(path):
    with open(path, "rb") as f:
        return parse_layout(f.read())
