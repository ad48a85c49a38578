# Copyright 2026 The refseg3d Authors
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

"""Python bindings for the refseg3d C++ core."""

from ._core import (
    Model,
    RefsegError,
    Sample,
    decode,
    default_config,
    encode,
    fps,
    generate,
    generate_dataset,
    grad_check,
    hungarian,
    iou,
    knn,
    load_dataset,
    normalize_config,
    save_dataset,
    small_config,
    vocabulary,
)

__all__ = [
    "Model",
    "RefsegError",
    "Sample",
    "decode",
    "default_config",
    "encode",
    "fps",
    "generate",
    "generate_dataset",
    "grad_check",
    "hungarian",
    "iou",
    "knn",
    "load_dataset",
    "normalize_config",
    "save_dataset",
    "small_config",
    "vocabulary",
]
