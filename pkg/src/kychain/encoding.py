"""Injective length-prefixed byte encoding.

Layout: 8-byte big-endian field count, then for each field an 8-byte
big-endian length followed by the raw bytes.
"""

from __future__ import annotations

import struct
from typing import Iterable

_U64 = struct.Struct(">Q")


def u64(n: int) -> bytes:
    return _U64.pack(n)


def read_u64(buf: bytes, offset: int = 0) -> int:
    return _U64.unpack_from(buf, offset)[0]


def canonical_encode(parts: Iterable[bytes]) -> bytes:
    parts = list(parts)
    out = [u64(len(parts))]
    for p in parts:
        if not isinstance(p, (bytes, bytearray)):
            raise TypeError(f"canonical_encode expects bytes, got {type(p).__name__}")
        out.append(u64(len(p)))
        out.append(bytes(p))
    return b"".join(out)


def canonical_decode(buf: bytes) -> list[bytes]:
    """Inverse of :func:`canonical_encode`; raises ValueError on malformed input."""
    if len(buf) < 8:
        raise ValueError("truncated field count")
    count = read_u64(buf)
    pos = 8
    parts: list[bytes] = []
    for _ in range(count):
        if pos + 8 > len(buf):
            raise ValueError("truncated field length")
        n = read_u64(buf, pos)
        pos += 8
        if pos + n > len(buf):
            raise ValueError("truncated field body")
        parts.append(bytes(buf[pos:pos + n]))
        pos += n
    if pos != len(buf):
        raise ValueError("trailing bytes after encoding")
    return parts
