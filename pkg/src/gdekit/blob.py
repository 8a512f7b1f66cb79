"""Binary framing for named float arrays: magic, JSON header, then arrays.

Layout (little-endian): 4-byte magic, uint32 header length, UTF-8 JSON
header, uint32 array count, then per array: uint32 name length, name,
uint32 ndim, uint32 dims, float64 data.
"""

from __future__ import annotations

import json
import struct

import numpy as np


def pack(magic: bytes, arrays: dict[str, np.ndarray], header: dict | None = None) -> bytes:
    head = json.dumps(header or {}, sort_keys=True).encode()
    out = [magic, struct.pack("<I", len(head)), head, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def unpack(magic: bytes, blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != magic:
        raise ValueError(f"expected magic {magic!r}")
    pos = 4
    (hlen,) = struct.unpack_from("<I", blob, pos)
    header = json.loads(blob[pos + 4 : pos + 4 + hlen])
    pos += 4 + hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4 : pos + 4 + klen].decode()
        pos += 4 + klen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        shape = struct.unpack_from(f"<{ndim}I", blob, pos + 4)
        pos += 4 + 4 * ndim
        size = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(blob[pos : pos + size], "<f8").reshape(shape).copy()
        pos += size
    return arrays, header
