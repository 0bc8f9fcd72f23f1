"""Minimal little-endian tensor container ("SQTC").

Layout::

    magic      4 bytes   b"SQTC"
    version    u32
    count      u32
    count x entry:
        name_len   u16
        name       name_len bytes, UTF-8
        dtype      u8        0 = float32, 1 = int8, 2 = int32
        rank       u8
        extents    rank x u64
        payload    prod(extents) * itemsize bytes, little-endian

Names are unique. The reader validates every length against the bytes that
remain before touching the payload and reports the offset of the first bad
field.
"""

import os
import struct
import sys
import tempfile

import numpy as np

from .exceptions import FormatError, FormatVersionError, ParameterError

MAGIC = b"SQTC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.int8): 1, np.dtype(np.int32): 2}


def dumps(entries):
    """Serialize a mapping of name -> ndarray (float32, int8 or int32)."""
    out = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise ParameterError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ParameterError(f"entry name too long ({len(raw)} bytes)")
        if arr.ndim > 0xFF:
            raise ParameterError(f"entry {name!r}: rank {arr.ndim} too large")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", tag, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if n > len(self.buf) - self.pos:
            raise FormatError(
                f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left", self.pos
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf):
    """Parse container bytes into a ``dict`` of name -> ndarray (insertion ordered)."""
    r = _Reader(buf)
    if bytes(r.take(4, "magic")) != MAGIC:
        raise FormatError("bad magic, not an SQTC container", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatVersionError(version, VERSION)
    (count,) = r.unpack("<I", "entry count")
    entries = {}
    for _ in range(count):
        start = r.pos
        (n,) = r.unpack("<H", "name length")
        try:
            name = bytes(r.take(n, "name")).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", start + 2) from None
        if name in entries:
            raise FormatError(f"duplicate entry name {name!r}", start)
        tag_pos = r.pos
        tag, rank = r.unpack("<BB", "dtype/rank")
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag}", tag_pos)
        ext_pos = r.pos
        extents = r.unpack(f"<{rank}Q", "extents")
        dtype = _DTYPES[tag]
        size = nominal = 1
        for e in extents:
            size *= e
            nominal *= max(e, 1)
        # numpy refuses shapes whose nominal size overflows, even when empty
        if nominal * dtype.itemsize > sys.maxsize:
            raise FormatError(f"extents {extents} of {name!r} are too large", ext_pos)
        payload = r.take(size * dtype.itemsize, f"payload of {name!r}")
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(extents).astype(dtype.newbyteorder("="))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after last entry", r.pos)
    return entries


def save_container(path, entries):
    """Write atomically: a temp file in the target directory, then rename."""
    data = dumps(entries)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".sqtc-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
