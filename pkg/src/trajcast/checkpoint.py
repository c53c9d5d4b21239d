"""Binary parameter container.

Layout (all integers little-endian)::

    magic      8 bytes   b"TJC1PARM"
    count      uint32    number of entries
    entries, each:
        name_len   uint32
        name       utf-8 bytes, dot-separated module path
        ndim       uint32
        dims       ndim x uint64
        payload    prod(dims) x float64 (little-endian, row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TJC1PARM"


class CheckpointError(ValueError):
    pass


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic header")
    pos = 8
    try:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(dims)
            pos += 8 * n
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt container") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
