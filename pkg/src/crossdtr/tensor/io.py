"""Binary checkpoint format for named tensors.

Layout (little-endian): magic "CDTR", format version (u32), tensor count
(u32), then per tensor: name length (u16), UTF-8 name, rank (u8), dims (u32
each), raw 32-bit float payload in row-major order. Round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from ..errors import DataError
from .core import Tensor

MAGIC = b"CDTR"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, Union[Tensor, np.ndarray]]) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise DataError(f"tensor name too long for checkpoint format: {name!r}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(dims)
            offset += 4 * n
            out[name] = arr.copy()
    except (struct.error, ValueError) as e:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from e
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after last tensor")
    return out
