"""Binary record files shared by weight checkpoints and dataset exports.

Layout (all integers little-endian)::

    magic      5 bytes   b"ARES1"
    version    u16       currently 1
    header     u32 length + UTF-8 JSON (sorted keys, compact separators)
    count      u32       number of tensor records
    record*    u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
               prod(dims) x float64 ("<f8"), row-major
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedFileError, VersionMismatchError

MAGIC = b"ARES1"
VERSION = 1


def encode(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(head)), head]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data)
    if len(data) < len(MAGIC):
        raise TruncatedFileError("file shorter than the magic bytes")
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("bad magic: not an ARES1 record file")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported record format version {version} (expected {VERSION})")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        tensors[name] = arr
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after the last record")
    return header, tensors


def write(path, header, tensors):
    with open(path, "wb") as fh:
        fh.write(encode(header, tensors))


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
