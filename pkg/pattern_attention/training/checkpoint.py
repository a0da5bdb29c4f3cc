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
import logging
import struct
import zlib
from collections import namedtuple, OrderedDict
import numpy as np
from pattern_attention.errors import CheckpointError, ConfigError
from pattern_attention.tensorcore import Tensor
from pattern_attention.model import ModelConfig, ParamStore, check_store
from pattern_attention.training.optim import OptimState

logger = logging.getLogger("pattern_attention")

MAGIC = b"PATC"
CHECKPOINT_VERSION = 1

Checkpoint = namedtuple("Checkpoint", ["version", "config", "params", "optimizer", "steps"])

def _pack_tensor(name, array):
    encoded = name.encode("utf-8")
    parts = [struct.pack("<I", len(encoded)), encoded, struct.pack("<I", array.ndim)]
    parts += [struct.pack("<Q", n) for n in array.shape]
    parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)

def encode_checkpoint(store, state, config, steps):
    """
    Serializes parameters, optimizer state and config to the PATC format:

        "PATC", u32 version, u64 tensor count, tensors
        u64 optimizer step, u64 tensor count, tensors m.<name> and v.<name>
        u32 config length, UTF-8 JSON config
        u32 CRC32 of everything before it

    where a tensor is u32 name length, UTF-8 name, u32 rank, u64 dims and
    little-endian float32 values. Integers are little-endian.
    """
    parts = [MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(store))]
    parts += [_pack_tensor(name, t.data) for name, t in store.items()]
    parts.append(struct.pack("<QQ", state.step, 2 * len(state.m)))
    parts += [_pack_tensor("m." + name, m) for name, m in state.m.items()]
    parts += [_pack_tensor("v." + name, v) for name, v in state.v.items()]
    echo = OrderedDict([
        ("model", config.to_dict()),
        ("steps", int(steps)),
        ("optimizer", OrderedDict([
            ("lr", state.lr), ("betas", list(state.betas)), ("eps", state.eps),
            ("weight_decay", state.weight_decay)])),
    ])
    encoded = json.dumps(echo, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(encoded)), encoded]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xffffffff)

class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.data):
            raise CheckpointError("truncated checkpoint: expected {0} bytes of {1} at offset {2}".format(
                n, what, self.offset))
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensor(self):
        (length,) = self.unpack("<I", "tensor name length")
        try:
            name = self.take(length, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("tensor name at offset {0} is not UTF-8".format(self.offset))
        (rank,) = self.unpack("<I", "tensor rank")
        shape = self.unpack("<{0}Q".format(rank), "tensor dims of " + name) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        payload = self.take(4 * count, "values of " + name)
        return name, np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)

def decode_checkpoint(data):
    """
    Parses PATC bytes into a Checkpoint, checking magic, version, CRC and
    that the tensors match the stored config.
    """
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (magic {0!r})".format(magic))
    (version,) = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError("unsupported checkpoint version {0} (expected {1})".format(
            version, CHECKPOINT_VERSION))
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xffffffff != crc:
        raise CheckpointError("checkpoint CRC mismatch (file is corrupt or truncated)")

    reader.data = data[:-4]
    (count,) = reader.unpack("<Q", "tensor count")
    params = ParamStore()
    for _ in range(count):
        name, array = reader.tensor()
        params.add(name, Tensor(array, requires_grad=True))

    step, count = reader.unpack("<QQ", "optimizer header")
    moments = [reader.tensor() for _ in range(count)]
    m = [(name[2:], a) for name, a in moments if name.startswith("m.")]
    v = [(name[2:], a) for name, a in moments if name.startswith("v.")]
    (length,) = reader.unpack("<I", "config length")
    try:
        echo = json.loads(reader.take(length, "config").decode("utf-8"))
        config = ModelConfig.from_dict(echo["model"])
        hyper = echo["optimizer"]
        optimizer = OptimState(m, v, step=step, lr=hyper["lr"], betas=hyper["betas"],
                               eps=hyper["eps"], weight_decay=hyper["weight_decay"])
        steps = int(echo["steps"])
    except (ValueError, KeyError, TypeError, ConfigError) as e:
        raise CheckpointError("invalid checkpoint config section: {0}".format(e))
    if reader.offset != len(reader.data):
        raise CheckpointError("{0} unexpected trailing bytes in checkpoint".format(
            len(reader.data) - reader.offset))

    try:
        check_store(params, config)
    except ConfigError as e:
        raise CheckpointError("checkpoint tensors do not match its config: {0}".format(e))
    if list(optimizer.m) != params.names() or any(
            optimizer.m[n].shape != params[n].shape for n in optimizer.m):
        raise CheckpointError("optimizer state does not match the checkpoint parameters")
    return Checkpoint(version, config, params, optimizer, steps)

def save_checkpoint(path, store, state, config, steps):
    data = encode_checkpoint(store, state, config, steps)
    with open(path, "wb") as f:
        f.write(data)
    logger.info("wrote checkpoint {0} (step {1}, {2} bytes)".format(path, state.step, len(data)))
    return path

def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
