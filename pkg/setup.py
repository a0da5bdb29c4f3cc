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

import os
from setuptools import setup, find_packages

def read_release():
    version = {}
    with open(os.path.join("pattern_attention", "_version.py")) as f:
        exec(f.read(), version)
    return version["__release__"]

setup(name='pattern-attention',
    version=read_release(),
    description='Pattern attention with doughnut kernels',
    long_description='Vision transformer attention over tiled doughnut kernels, with '
                     'layout planning, gradient checks, parameter counting and training on synthetic data',
    license='Apache-2.0',
    packages=find_packages(exclude=["examples", "examples.*"]),
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.20',
        'pandas>=1.1',
    ],
    entry_points={
        'console_scripts': [
            'pattern-attention = pattern_attention.cli:main',
        ],
    },
)
