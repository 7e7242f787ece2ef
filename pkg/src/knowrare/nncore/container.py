"""Binary tensor container (``.knwr``).

Layout, little-endian: magic ``KNWR``, uint32 version, then records of
``uint32 name_len | name utf-8 | uint8 dtype (0 = float64) | uint8 rank |
uint64 dims[rank] | row-major payload`` until end of file.
"""
import struct

import numpy as np

from ..errors import ParseError, SchemaError

MAGIC = b"KNWR"
VERSION = 1
DTYPE_F64 = 0


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float64:
                raise SchemaError(f"tensor {name!r} has dtype {arr.dtype}; only float64 is stored")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParseError(path, 0, "bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ParseError(path, 0, f"unsupported container version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            dtype, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            if dtype != DTYPE_F64:
                raise ParseError(path, pos, f"unknown dtype tag {dtype}")
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = blob[pos : pos + 8 * count]
            if len(payload) != 8 * count:
                raise ParseError(path, pos, f"truncated payload for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
            pos += 8 * count
    except struct.error as exc:
        raise ParseError(path, pos, f"truncated record: {exc}") from exc
    return out
