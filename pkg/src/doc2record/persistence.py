"""Self-describing binary model files.

Layout: magic "D2D1", u32 format version, a JSON config block, then named
float32 tensor blocks with explicit shapes, all little-endian. Loading a
file and saving it again is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import tensor as T
from .model import ModelConfig, ModelParams, init_params

MAGIC = b"D2D1"
VERSION = 1


class ModelFileError(Exception):
    pass


def save_model(path, params: ModelParams, config: ModelConfig):
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(params))
    for name, node in params.items():
        arr = np.ascontiguousarray(node.value, dtype=np.float32)
        enc = name.encode()
        blob += struct.pack("<H", len(enc))
        blob += enc
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFileError(
                f"model file truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path, expected: ModelConfig | None = None) -> tuple[ModelParams, ModelConfig]:
    """Load params+config; with `expected`, dims must match the stored file.

    Errors name the first offending tensor; a truncated file never yields
    a partial model.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise ModelFileError("not a model file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version}")
    (cfg_len,) = r.unpack("<I")
    config = ModelConfig(**json.loads(r.take(cfg_len).decode()))
    (n_tensors,) = r.unpack("<I")

    params: ModelParams = {}
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        params[name] = T.leaf(arr, name=name, is_param=True)
    if r.pos != len(r.data):
        raise ModelFileError(f"{len(r.data) - r.pos} trailing bytes after tensor blocks")

    if expected is not None:
        reference = {k: v.value.shape for k, v in init_params(expected, seed=0).items()}
        for name, node in params.items():
            want = reference.get(name)
            if want is None:
                raise ModelFileError(f"unexpected tensor {name!r} for the given config")
            if node.value.shape != want:
                raise ModelFileError(
                    f"tensor {name!r} has shape {node.value.shape}, config expects {want}")
        missing = set(reference) - set(params)
        if missing:
            raise ModelFileError(f"model file is missing tensors: {sorted(missing)}")
    return params, config
