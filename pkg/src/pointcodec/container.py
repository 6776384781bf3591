"""Length-prefixed binary sections shared by every bitstream format.

Layout: 4-byte magic, 1-byte version, u32 section count, then for each
section a u32 byte length followed by the payload. All little-endian.
"""

from __future__ import annotations

import struct


class CorruptStreamError(ValueError):
    pass


def pack_sections(magic: bytes, version: int, sections) -> bytes:
    out = bytearray(magic)
    out += struct.pack("<BI", version, len(sections))
    for payload in sections:
        out += struct.pack("<I", len(payload))
        out += payload
    return bytes(out)


def unpack_sections(data: bytes, magic: bytes, version: int | None = None):
    """Inverse of :func:`pack_sections`; returns ``(version, [payload, ...])``."""
    if len(data) < 9 or data[:4] != magic:
        raise CorruptStreamError(f"expected magic {magic!r}")
    ver, count = struct.unpack_from("<BI", data, 4)
    if version is not None and ver != version:
        raise CorruptStreamError(f"unsupported version {ver}")
    pos = 9
    sections = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise CorruptStreamError("truncated section table")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise CorruptStreamError("truncated section payload")
        sections.append(bytes(data[pos:pos + n]))
        pos += n
    if pos != len(data):
        raise CorruptStreamError("trailing bytes after last section")
    return ver, sections
