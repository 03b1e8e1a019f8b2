"""Binary tensor container.

Layout (all little-endian)::

    b"FFPN"  u32 version=1  u32 count
    count x { u16 name_len, name (UTF-8), u8 ndims, ndims x u32 dim, float32 data }
    u64 number of bytes preceding this field
"""
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FFPN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors):
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(out)
    return body + struct.pack("<Q", len(body))


def loads(buf):
    if len(buf) < 20 or buf[:4] != MAGIC:
        raise CheckpointError("not an FFPN checkpoint")
    (length,) = struct.unpack_from("<Q", buf, len(buf) - 8)
    if length != len(buf) - 8:
        raise CheckpointError(f"length check failed: trailer says {length}, body is {len(buf) - 8}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            dims = struct.unpack_from(f"<{ndim}I", buf, pos + 1)
            pos += 1 + 4 * ndim
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > length:
                raise CheckpointError(f"tensor {name!r} overruns the file")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != length:
        raise CheckpointError(f"{length - pos} unexpected bytes after the last tensor")
    return tensors


def save(tensors, path):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(dumps(tensors))
    os.replace(tmp, path)


def load(path):
    return loads(Path(path).read_bytes())
