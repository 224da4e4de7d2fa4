"""The ``AEDD`` container: a JSON header plus named, checksummed raw arrays.

Layout (all integers little-endian)::

    b"AEDD" | u32 version | u32 header_len | header (UTF-8 JSON) | u32 n_arrays
    per array: u16 name_len | name | u8 dtype_len | dtype (numpy str, e.g. "<f8")
               | u8 ndim | u64 x ndim shape | u64 nbytes | data | u32 crc32(data)
    b"DDEA"

Readers ignore header keys and arrays they do not know about. Version is
the major layout version; a file with a newer version is rejected.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import ContainerError

MAGIC = b"AEDD"
END = b"DDEA"
VERSION = 1
_DTYPES = {"<f8", "<f4", "<i8", "<i4", "|u1", "|b1"}


def _norm_dtype(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, order="C")
    if arr.dtype.byteorder == ">" or (arr.dtype.byteorder == "=" and np.little_endian is False):
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    if arr.dtype.str not in _DTYPES:
        raise ContainerError(f"unsupported dtype {arr.dtype.str}")
    return arr


def encode(meta: dict, arrays: dict) -> bytes:
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header,
             struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = _norm_dtype(np.asarray(arrays[name]))
        bname = name.encode("utf-8")
        tag = arr.dtype.str.encode("ascii")
        data = arr.tobytes()
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", len(tag)) + tag)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<Q", len(data)) + data)
        parts.append(struct.pack("<I", zlib.crc32(data)))
    parts.append(END)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"{self.source}: truncated container")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes, source: str = "<bytes>"):
    r = _Reader(buf, source)
    if r.take(4) != MAGIC:
        raise ContainerError(f"{source}: not an AEDD container")
    version, hlen = r.unpack("<II")
    if version > VERSION:
        raise ContainerError(f"{source}: container version {version} is newer than supported {VERSION}")
    try:
        meta = json.loads(r.take(hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{source}: corrupt header: {exc}") from None
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (tlen,) = r.unpack("<B")
        tag = r.take(tlen).decode("ascii")
        if tag not in _DTYPES:
            raise ContainerError(f"{source}: array {name!r} has unknown dtype {tag}")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        data = r.take(nbytes)
        (crc,) = r.unpack("<I")
        if zlib.crc32(data) != crc:
            raise ContainerError(f"{source}: checksum mismatch in array {name!r}")
        dt = np.dtype(tag)
        if int(np.prod(shape, dtype=np.int64)) * dt.itemsize != nbytes:
            raise ContainerError(f"{source}: array {name!r} size does not match its shape")
        arrays[name] = np.frombuffer(data, dtype=dt).reshape(shape).copy()
    if r.take(4) != END:
        raise ContainerError(f"{source}: missing end marker")
    return meta, arrays


def write_container(path, meta: dict, arrays: dict) -> None:
    """Write atomically: readers never observe a half-written file."""
    path = Path(path)
    blob = encode(meta, arrays)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: {exc}") from None
    return decode(buf, str(path))
