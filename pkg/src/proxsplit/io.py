"""PROXIMG1 binary arrays.

Layout: the 8-byte magic ``PROXIMG1``, a little-endian u32 rank, ``rank``
little-endian u32 dimensions, then the C-order float64 payload in
little-endian byte order.
"""
from __future__ import annotations

import struct

import numpy as np

from .exceptions import InvalidArgumentError

MAGIC = b"PROXIMG1"


def image_bytes(a):
    a = np.asarray(a, dtype="<f8")
    if a.ndim < 1:
        a = a.reshape(1)
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def image_from_bytes(buf):
    if buf[:8] != MAGIC:
        raise InvalidArgumentError("not a PROXIMG1 file (bad magic)")
    if len(buf) < 12:
        raise InvalidArgumentError("truncated PROXIMG1 header")
    (rank,) = struct.unpack_from("<I", buf, 8)
    end = 12 + 4 * rank
    if len(buf) < end:
        raise InvalidArgumentError("truncated PROXIMG1 header")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    count = int(np.prod(dims)) if rank else 0
    if len(buf) != end + 8 * count:
        raise InvalidArgumentError(f"payload has {len(buf) - end} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=end).reshape(dims).astype(float)


def write_image(path, a):
    data = image_bytes(a)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read_image(path):
    with open(path, "rb") as fh:
        return image_from_bytes(fh.read())
