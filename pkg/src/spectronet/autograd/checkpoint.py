"""Binary parameter checkpoints.

Layout (all little-endian): magic ``SPNW``, u32 version, u32 entry count, then
per entry a u16 name length, the UTF-8 name, a u8 rank, one u32 per dimension
and the float32 values in row-major order.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SPNW"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointMismatchError(CheckpointError):
    """Names or shapes in a checkpoint disagree with the target."""


def save_checkpoint(params: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n_len].decode("utf-8")
            pos += n_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(blob):
                raise CheckpointError(f"{path}: entry {name!r} truncated")
            out[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def check_compatible(saved: Mapping[str, np.ndarray], expected: Mapping[str, tuple]) -> None:
    """Raise unless ``saved`` has exactly the expected names and shapes."""
    missing = sorted(set(expected) - set(saved))
    extra = sorted(set(saved) - set(expected))
    if missing or extra:
        raise CheckpointMismatchError(f"checkpoint names differ; missing={missing[:5]} unexpected={extra[:5]}")
    for name, shape in expected.items():
        if tuple(saved[name].shape) != tuple(shape):
            raise CheckpointMismatchError(f"{name}: checkpoint shape {saved[name].shape} != model shape {tuple(shape)}")
