"""Binary model checkpoints.

Layout (all integers little-endian uint32)::

    b"EMSL1"
    meta_len, meta (UTF-8 JSON: model config plus caller metadata)
    n_tensors
    per tensor: name_len, name, ndim, dims..., float64 values (little-endian)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .nn import ConvNetModel

MAGIC = b"EMSL1"

__all__ = ["MAGIC", "load_checkpoint", "save_checkpoint", "checkpoint_bytes"]


def checkpoint_bytes(model: ConvNetModel, metadata: dict | None = None) -> bytes:
    meta = json.dumps({"model": model.config(), "metadata": metadata or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw_name = name.encode()
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack(f"<{1 + arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(model: ConvNetModel, path, metadata: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, metadata))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated at byte offset {self.pos} (needed {n} more bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count > 1 else vals[0]


def load_checkpoint(path) -> tuple[ConvNetModel, dict]:
    """Return ``(model, metadata)``.  Every tensor must match the architecture."""
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic bytes at offset 0, not an EMSL1 checkpoint")
    try:
        meta = json.loads(r.take(r.u32()).decode())
        model = ConvNetModel.from_config(meta["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable metadata block ({exc})") from None
    model = model.astype(np.float64)
    seen = set()
    for _ in range(r.u32()):
        offset = r.pos
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = tuple(np.atleast_1d(r.u32(ndim))) if ndim else ()
        arr = np.frombuffer(r.take(8 * int(np.prod(shape, dtype=np.int64))), dtype="<f8").reshape(shape)
        if name not in model.params or model.params[name].shape != arr.shape:
            raise FormatError(f"{path}: tensor {name!r} at offset {offset} does not fit the architecture")
        model.params[name] = arr.astype(np.float64)
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise FormatError(f"{path}: missing tensors {sorted(missing)}")
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes after offset {r.pos}")
    return model.astype(meta["model"].get("dtype", "float32")), meta["metadata"]
