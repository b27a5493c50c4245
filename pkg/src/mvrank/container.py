"""Named-tensor container files (``.mvct``).

Layout, all integers little-endian::

    b"MVCT" | version u32 | entry count u32
    per entry: name length u16 | name (utf-8) | dtype u8 | ndim u8 |
               dims u32 * ndim | row-major payload
"""

import struct

import numpy as np

MAGIC = b"MVCT"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("u1")}
CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("uint8"): 2}


class ContainerError(ValueError):
    """Malformed or unsupported container contents."""


def encode(entries):
    """Serialize ``name -> array`` (insertion order kept) to bytes."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        code = CODES.get(arr.dtype)
        if code is None:
            raise ContainerError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"entry name too long: {name[:40]!r}...")
        if arr.ndim > 255:
            raise ContainerError(f"entry {name!r}: too many dimensions")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(parts)


def decode(buf):
    """Parse container bytes into an ordered ``name -> array`` dict."""
    view = memoryview(buf)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise ContainerError("bad magic: not an MVCT container")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            if code not in DTYPES:
                raise ContainerError(f"entry {name!r}: unknown dtype code {code}")
            dims = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            dt = DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(view):
                raise ContainerError(f"entry {name!r}: truncated payload")
            if name in out:
                raise ContainerError(f"duplicate entry name {name!r}")
            out[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dt).reshape(dims).copy()
            pos += nbytes
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    if pos != len(view):
        raise ContainerError("trailing bytes after last entry")
    return out


def write(path, entries):
    with open(path, "wb") as fh:
        fh.write(encode(entries))


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
