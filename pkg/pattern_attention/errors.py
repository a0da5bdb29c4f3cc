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

class PatternAttentionError(Exception):
    pass

class GeometryError(PatternAttentionError):
    pass

class LayoutError(PatternAttentionError):
    pass

class LayoutParseError(LayoutError):
    pass

class LayoutValidationError(LayoutError):

    def __init__(self, report, msg=None):
        self.report = report
        if msg is None:
            msg = "invalid layout: {0}".format(report.summary())
        super(LayoutValidationError, self).__init__(msg)

class ShapeMismatch(PatternAttentionError):
    pass

class NonFiniteError(PatternAttentionError):
    pass

class ConfigError(PatternAttentionError):
    pass

class CheckpointError(PatternAttentionError):
    pass
