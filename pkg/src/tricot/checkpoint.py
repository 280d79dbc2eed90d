"""Binary checkpoint format for flat parameter dicts.

Layout: magic b"TRCK", u32 version, u32 tensor count, then per tensor a
u32 name length, the UTF-8 name, u32 rank, u32 dims, and the row-major
float64 little-endian payload.  Round-trips are bit-exact; version or
structure mismatches raise CheckpointError.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TRCK"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_checkpoint(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name in params:  # insertion order: deterministic for a given model
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            arr = np.asarray(params[name], dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}, "
                                  f"this reader handles {VERSION}")
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n_items = int(np.prod(shape)) if rank else 1
            raw = _read_exact(fh, 8 * n_items)
            params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    return params
